//! Annotation archives: a tar file with `annotations/{page_id}.json` per
//! labelled page and a `manifest.json`. Entries are sorted and carry fixed
//! metadata so equal states give equal bytes.

use std::io::Read;

use serde::{Deserialize, Serialize};

use super::ProjectState;
use crate::corpus::{annotation_file, parse_annotation_file};
use crate::editor::LabelStatus;
use crate::structure::TableGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub page_id: String,
    pub status: LabelStatus,
    pub revision: u32,
    pub model_version: String,
    #[serde(skip)]
    pub grids: Vec<TableGrid>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    active_model: String,
    pages: Vec<ArchiveEntry>,
}

fn append(builder: &mut tar::Builder<Vec<u8>>, path: &str, data: &[u8]) -> std::io::Result<()> {
    let mut header = tar::Header::new_ustar();
    header.set_size(data.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_uid(0);
    header.set_gid(0);
    header.set_entry_type(tar::EntryType::Regular);
    builder.append_data(&mut header, path, data)
}

pub fn export_archive(state: &ProjectState) -> std::io::Result<Vec<u8>> {
    let mut builder = tar::Builder::new(Vec::new());
    builder.mode(tar::HeaderMode::Deterministic);
    let mut entries = Vec::new();
    for (page_id, revs) in &state.labels {
        let Some(rec) = revs.last() else { continue };
        let grids: Vec<TableGrid> = rec.tables.iter().map(|t| t.grid.clone()).collect();
        append(
            &mut builder,
            &format!("annotations/{page_id}.json"),
            annotation_file(&grids).as_bytes(),
        )?;
        let model_version = rec
            .edit_log
            .last()
            .map(|e| e.model_version.clone())
            .or_else(|| state.extractions.get(page_id).map(|e| e.model_version.clone()))
            .unwrap_or_else(|| state.active_model.clone());
        entries.push(ArchiveEntry {
            page_id: page_id.clone(),
            status: rec.status,
            revision: rec.revision,
            model_version,
            grids: Vec::new(),
        });
    }
    let manifest = Manifest {
        active_model: state.active_model.clone(),
        pages: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    append(&mut builder, "manifest.json", text.as_bytes())?;
    builder.into_inner()
}

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("archive io: {0}")]
    Io(#[from] std::io::Error),
    #[error("archive entry {path}: {reason}")]
    Entry { path: String, reason: String },
    #[error("archive has no manifest.json")]
    MissingManifest,
}

/// Parses an archive written by [`export_archive`], validating every grid.
pub fn read_archive(bytes: &[u8]) -> Result<Vec<ArchiveEntry>, ArchiveError> {
    let mut archive = tar::Archive::new(bytes);
    let mut manifest: Option<Manifest> = None;
    let mut files: std::collections::BTreeMap<String, Vec<TableGrid>> = Default::default();
    for entry in archive.entries()? {
        let mut entry = entry?;
        let path = entry.path()?.to_string_lossy().into_owned();
        let mut text = String::new();
        entry.read_to_string(&mut text)?;
        let bad = |reason: String| ArchiveError::Entry {
            path: path.clone(),
            reason,
        };
        if path == "manifest.json" {
            manifest = Some(serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?);
        } else if let Some(page_id) = path.strip_prefix("annotations/").and_then(|p| p.strip_suffix(".json")) {
            let grids = parse_annotation_file(&text).map_err(|e| bad(e.to_string()))?;
            files.insert(page_id.to_string(), grids);
        }
    }
    let manifest = manifest.ok_or(ArchiveError::MissingManifest)?;
    manifest
        .pages
        .into_iter()
        .map(|mut e| {
            e.grids = files.remove(&e.page_id).ok_or_else(|| ArchiveError::Entry {
                path: format!("annotations/{}.json", e.page_id),
                reason: "listed in the manifest but missing".into(),
            })?;
            Ok(e)
        })
        .collect()
}
