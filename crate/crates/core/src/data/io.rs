//! TSV ingestion and export.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! group_members.tsv   <gid>\t<uid>,<uid>,...
//! user_item.tsv       <uid>\t<item_id>
//! group_item.tsv      <gid>\t<item_id>
//! stats.json          optional; declares num_users / num_items / num_groups
//! ```
//!
//! With `stats.json` present, ids are used as-is and must lie below the
//! declared counts. Without it, each id space is compacted in first-seen
//! order across the files in the order listed above.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{DatasetStats, Entity, InteractionDataset};
use crate::error::{Error, Result};

pub const GROUP_MEMBERS_FILE: &str = "group_members.tsv";
pub const USER_ITEM_FILE: &str = "user_item.tsv";
pub const GROUP_ITEM_FILE: &str = "group_item.tsv";
pub const STATS_FILE: &str = "stats.json";

/// Maps raw ids to dense ones.
enum IdSpace {
    Declared(usize),
    Compacting(HashMap<u64, u32>),
}

impl IdSpace {
    fn resolve(&mut self, raw: u64, kind: &str, file: &Path, line: usize) -> Result<u32> {
        match self {
            IdSpace::Declared(n) => {
                if raw >= *n as u64 {
                    return Err(Error::Parse {
                        file: file.to_path_buf(),
                        line,
                        message: format!("{kind} id {raw} out of range (declared {n})"),
                    });
                }
                Ok(raw as u32)
            }
            IdSpace::Compacting(map) => {
                let next = map.len() as u32;
                Ok(*map.entry(raw).or_insert(next))
            }
        }
    }

    fn len(&self) -> usize {
        match self {
            IdSpace::Declared(n) => *n,
            IdSpace::Compacting(map) => map.len(),
        }
    }
}

struct Lines {
    path: PathBuf,
    text: String,
}

impl Lines {
    fn read(dir: &Path, name: &str) -> Result<Self> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, text })
    }

    /// Non-blank lines split at the single tab, with 1-based line numbers.
    fn fields(&self) -> impl Iterator<Item = Result<(usize, &str, &str)>> + '_ {
        self.text
            .split('\n')
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let l = l.strip_suffix('\r').unwrap_or(l);
                l.split_once('\t')
                    .map(|(a, b)| (i + 1, a, b))
                    .ok_or_else(|| self.err(i + 1, "expected two tab-separated fields"))
            })
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            file: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    fn id(&self, line: usize, field: &str) -> Result<u64> {
        field
            .trim()
            .parse::<u64>()
            .map_err(|_| self.err(line, format!("not a non-negative integer id: {field:?}")))
    }
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<InteractionDataset> {
    let dir = dir.as_ref();
    let members_file = Lines::read(dir, GROUP_MEMBERS_FILE)?;
    let user_file = Lines::read(dir, USER_ITEM_FILE)?;
    let group_file = Lines::read(dir, GROUP_ITEM_FILE)?;

    let stats_path = dir.join(STATS_FILE);
    let declared: Option<DatasetStats> = if stats_path.exists() {
        let text = fs::read_to_string(&stats_path).map_err(|e| Error::io(&stats_path, e))?;
        Some(serde_json::from_str(&text)?)
    } else {
        None
    };
    let space = |n: Option<usize>| match n {
        Some(n) => IdSpace::Declared(n),
        None => IdSpace::Compacting(HashMap::new()),
    };
    let mut users = space(declared.as_ref().map(|s| s.num_users));
    let mut items = space(declared.as_ref().map(|s| s.num_items));
    let mut groups = space(declared.as_ref().map(|s| s.num_groups));

    let mut group_members: Vec<Vec<u32>> = Vec::new();
    let mut member_lines: Vec<usize> = Vec::new();
    for row in members_file.fields() {
        let (line, gid, list) = row?;
        let g = groups.resolve(members_file.id(line, gid)?, "group", &members_file.path, line)?;
        let g = g as usize;
        if group_members.len() <= g {
            group_members.resize(g + 1, Vec::new());
            member_lines.resize(g + 1, 0);
        }
        member_lines[g] = line;
        for uid in list.split(',').filter(|s| !s.trim().is_empty()) {
            let u = users.resolve(members_file.id(line, uid)?, "user", &members_file.path, line)?;
            group_members[g].push(u);
        }
        if group_members[g].is_empty() {
            return Err(members_file.err(line, format!("group {gid} has no members")));
        }
    }

    let mut user_items: Vec<Vec<u32>> = Vec::new();
    for row in user_file.fields() {
        let (line, uid, iid) = row?;
        let u = users.resolve(user_file.id(line, uid)?, "user", &user_file.path, line)? as usize;
        let i = items.resolve(user_file.id(line, iid)?, "item", &user_file.path, line)?;
        if user_items.len() <= u {
            user_items.resize(u + 1, Vec::new());
        }
        user_items[u].push(i);
    }

    let mut group_items: Vec<Vec<u32>> = Vec::new();
    for row in group_file.fields() {
        let (line, gid, iid) = row?;
        let g = groups.resolve(group_file.id(line, gid)?, "group", &group_file.path, line)? as usize;
        if g >= group_members.len() || group_members[g].is_empty() {
            return Err(group_file.err(line, format!("group {gid} has no members")));
        }
        let i = items.resolve(group_file.id(line, iid)?, "item", &group_file.path, line)?;
        if group_items.len() <= g {
            group_items.resize(g + 1, Vec::new());
        }
        group_items[g].push(i);
    }

    let (num_users, num_items, num_groups) = (users.len(), items.len(), groups.len());
    group_members.resize(num_groups, Vec::new());
    if let Some(g) = group_members.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!(
            "group {g} declared in {STATS_FILE} has no line in {GROUP_MEMBERS_FILE}"
        )));
    }
    user_items.resize(num_users, Vec::new());
    group_items.resize(num_groups, Vec::new());
    InteractionDataset::new(num_users, num_items, group_members, user_items, group_items)
}

/// Writes the three TSV files plus `stats.json`.
pub fn save_dataset(ds: &InteractionDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut members = String::new();
    for (g, m) in ds.all_group_members().iter().enumerate() {
        let list: Vec<String> = m.iter().map(u32::to_string).collect();
        let _ = writeln!(members, "{g}\t{}", list.join(","));
    }
    let mut user_item = String::new();
    for u in 0..ds.num_users() as u32 {
        for i in ds.positives(Entity::user(u)) {
            let _ = writeln!(user_item, "{u}\t{i}");
        }
    }
    let mut group_item = String::new();
    for g in 0..ds.num_groups() as u32 {
        for i in ds.positives(Entity::group(g)) {
            let _ = writeln!(group_item, "{g}\t{i}");
        }
    }
    let stats = serde_json::to_string_pretty(&ds.stats())?;
    for (name, body) in [
        (GROUP_MEMBERS_FILE, members),
        (USER_ITEM_FILE, user_item),
        (GROUP_ITEM_FILE, group_item),
        (STATS_FILE, stats + "\n"),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
