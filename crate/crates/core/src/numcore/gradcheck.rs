use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Steps tried in turn when the objective has a kink (ReLU, hinge) inside
/// `[x - h, x + h]`.
pub const FD_STEPS: [f64; 3] = [FD_STEP, 1e-6, 1e-7];

/// Screen: a step is accepted outright when the forward and backward
/// one-sided slopes agree to this relative tolerance.
pub const KINK_TOL: f64 = 1e-4;

/// Denominator floor for the relative error, so that coordinates whose true
/// gradient is near zero are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords: Vec<usize>,
    pub numeric: Vec<f64>,
    pub analytic: Vec<f64>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic` against central differences of `f` at the sampled
/// `coords` of `params`. `params` is restored before returning.
///
/// Each coordinate uses the largest step in [`FD_STEPS`] whose interval
/// contains no kink of `f`, falling back to the smallest one.
pub fn grad_check<F>(
    params: &mut [f64],
    analytic: &[f64],
    coords: &[usize],
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != params.len() {
        return Err(Error::dim(
            "grad_check",
            format!("{} gradients for {} params", analytic.len(), params.len()),
        ));
    }
    let f0 = f(params);
    let mut central = |params: &mut [f64], i: usize, h: f64| -> Result<(f64, f64, f64)> {
        let orig = params[i];
        params[i] = orig + h;
        let plus = f(params);
        params[i] = orig - h;
        let minus = f(params);
        params[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                context: format!("grad_check objective at coordinate {i}"),
            });
        }
        Ok(((plus - minus) / (2.0 * h), (plus - f0) / h, (f0 - minus) / h))
    };
    let mut numeric = Vec::with_capacity(coords.len());
    let mut max_rel_err: f64 = 0.0;
    for &i in coords {
        if i >= params.len() {
            return Err(Error::dim("grad_check", format!("coordinate {i} out of range")));
        }
        let mut g = 0.0;
        for &h in &FD_STEPS {
            let (c, fwd, bwd) = central(params, i, h)?;
            g = c;
            if (fwd - bwd).abs() <= KINK_TOL * fwd.abs().max(bwd.abs()).max(REL_ERR_FLOOR) {
                break;
            }
            // The slopes disagree through curvature or a kink. Curvature
            // leaves the central difference unchanged to O(h^2) when the step
            // is halved; a kink inside the interval does not.
            let (half, _, _) = central(params, i, h / 2.0)?;
            let roundoff = 8.0 * f64::EPSILON * f0.abs().max(1.0) / h;
            if (c - half).abs() <= 1e-5 * c.abs().max(REL_ERR_FLOOR) + roundoff {
                g = half;
                break;
            }
        }
        max_rel_err = max_rel_err.max(relative_error(analytic[i], g));
        numeric.push(g);
    }
    Ok(GradCheckReport {
        max_rel_err,
        coords: coords.to_vec(),
        numeric,
        analytic: coords.iter().map(|&i| analytic[i]).collect(),
    })
}
