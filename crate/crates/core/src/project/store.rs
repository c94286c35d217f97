//! On-disk project store.
//!
//! A project directory holds numbered snapshot directories and a `CURRENT`
//! file naming the live one. A commit writes a complete new snapshot, then
//! replaces `CURRENT` by rename, so an interrupted commit leaves the
//! previous state readable.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Extraction, ProjectState};
use crate::editor::LabelRecord;
use crate::layout::parse_page_file;
use crate::template::{Recommendation, TemplateAssignment};

const CURRENT: &str = "CURRENT";
const SNAPSHOT_PREFIX: &str = "snap-";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt snapshot {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

/// Lets `ops` write-like operations succeed, then fails the next one after
/// it has written part of its data, simulating a crash at that point.
#[derive(Debug)]
pub struct FaultInjector {
    remaining: AtomicUsize,
}

impl FaultInjector {
    pub fn after(ops: usize) -> Arc<Self> {
        Arc::new(Self {
            remaining: AtomicUsize::new(ops),
        })
    }

    fn tick(&self) -> bool {
        self.remaining
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| {
                (n != usize::MAX).then(|| n.wrapping_sub(1))
            })
            == Ok(0)
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    fault: Option<Arc<FaultInjector>>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    project_id: String,
    name: String,
    active_model: String,
    pending: Vec<String>,
    templates: Vec<TemplateAssignment>,
    recommendations: Vec<Recommendation>,
}

fn injected() -> io::Error {
    io::Error::other("injected fault")
}

impl Store {
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(root.join("projects"))?;
        Ok(Self {
            root: root.to_path_buf(),
            fault: None,
        })
    }

    pub fn with_fault(mut self, fault: Arc<FaultInjector>) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    fn project_dir(&self, id: &str) -> PathBuf {
        self.root.join("projects").join(id)
    }

    fn faulted(&self) -> bool {
        self.fault.as_ref().is_some_and(|f| f.tick())
    }

    fn write_file(&self, path: &Path, data: &[u8]) -> io::Result<()> {
        let mut f = fs::File::create(path)?;
        if self.faulted() {
            f.write_all(&data[..data.len() / 2])?;
            return Err(injected());
        }
        f.write_all(data)?;
        f.sync_all()
    }

    /// Ids of every project with a committed snapshot, sorted.
    pub fn list_projects(&self) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.root.join("projects"))? {
            let entry = entry?;
            if entry.path().join(CURRENT).is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn exists(&self, id: &str) -> bool {
        self.project_dir(id).join(CURRENT).is_file()
    }

    fn current_snapshot(&self, id: &str) -> io::Result<Option<String>> {
        match fs::read_to_string(self.project_dir(id).join(CURRENT)) {
            Ok(s) => Ok(Some(s.trim().to_string())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Writes `state` as a new snapshot and makes it current.
    pub fn commit(&self, state: &ProjectState) -> Result<(), StoreError> {
        let dir = self.project_dir(&state.project_id);
        fs::create_dir_all(&dir)?;
        let current = self.current_snapshot(&state.project_id)?;
        let seq = current
            .as_deref()
            .and_then(|s| s.strip_prefix(SNAPSHOT_PREFIX)?.parse::<u64>().ok())
            .map_or(0, |n| n + 1);
        let name = format!("{SNAPSHOT_PREFIX}{seq:08}");
        let snap = dir.join(&name);
        if snap.exists() {
            fs::remove_dir_all(&snap)?;
        }
        for sub in ["pages", "extractions", "labels"] {
            fs::create_dir_all(snap.join(sub))?;
        }

        let meta = Meta {
            project_id: state.project_id.clone(),
            name: state.name.clone(),
            active_model: state.active_model.clone(),
            pending: state.pending.iter().cloned().collect(),
            templates: state.templates.clone(),
            recommendations: state.recommendations.clone(),
        };
        self.write_file(&snap.join("project.json"), to_json(&meta).as_bytes())?;
        for (id, page) in &state.pages {
            self.write_file(&snap.join("pages").join(format!("{id}.json")), page.to_json().as_bytes())?;
        }
        for (id, ex) in &state.extractions {
            self.write_file(&snap.join("extractions").join(format!("{id}.json")), to_json(ex).as_bytes())?;
        }
        for (id, revs) in &state.labels {
            self.write_file(&snap.join("labels").join(format!("{id}.json")), to_json(revs).as_bytes())?;
        }

        let tmp = dir.join(format!("{CURRENT}.tmp"));
        self.write_file(&tmp, name.as_bytes())?;
        if self.faulted() {
            return Err(injected().into());
        }
        fs::rename(&tmp, dir.join(CURRENT))?;

        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let fname = entry.file_name().to_string_lossy().into_owned();
            if fname.starts_with(SNAPSHOT_PREFIX) && fname != name {
                if let Err(e) = fs::remove_dir_all(entry.path()) {
                    log::warn!("could not remove old snapshot {fname}: {e}");
                }
            }
        }
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<Option<ProjectState>, StoreError> {
        let Some(name) = self.current_snapshot(id)? else {
            return Ok(None);
        };
        let snap = self.project_dir(id).join(name);
        let corrupt = |path: &Path, reason: String| StoreError::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        let read_json = |path: &Path| -> Result<String, StoreError> { Ok(fs::read_to_string(path)?) };

        let meta_path = snap.join("project.json");
        let meta: Meta = serde_json::from_str(&read_json(&meta_path)?).map_err(|e| corrupt(&meta_path, e.to_string()))?;
        let mut state = ProjectState::new(&meta.project_id, &meta.name, &meta.active_model);
        state.pending = meta.pending.into_iter().collect();
        state.templates = meta.templates;
        state.recommendations = meta.recommendations;

        for (path, stem) in json_files(&snap.join("pages"))? {
            let page = parse_page_file(&fs::read(&path)?).map_err(|e| corrupt(&path, e.to_string()))?;
            state.pages.insert(stem, page);
        }
        for (path, stem) in json_files(&snap.join("extractions"))? {
            let ex: Extraction = serde_json::from_str(&read_json(&path)?).map_err(|e| corrupt(&path, e.to_string()))?;
            state.extractions.insert(stem, ex);
        }
        for (path, stem) in json_files(&snap.join("labels"))? {
            let revs: Vec<LabelRecord> =
                serde_json::from_str(&read_json(&path)?).map_err(|e| corrupt(&path, e.to_string()))?;
            state.labels.insert(stem, revs);
        }
        Ok(Some(state))
    }
}

fn json_files(dir: &Path) -> io::Result<Vec<(PathBuf, String)>> {
    let mut out: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|x| x == "json") {
            if let Some(stem) = path.file_stem() {
                out.insert(stem.to_string_lossy().into_owned(), path);
            }
        }
    }
    Ok(out.into_iter().map(|(s, p)| (p, s)).collect())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("state serializes")
}
