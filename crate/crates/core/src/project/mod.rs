//! Projects: a page collection with its extractions, templates, labels and
//! active model, persisted as snapshot directories and driven by
//! background jobs.

mod archive;
mod service;
mod store;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::editor::{EditError, LabelRecord, LabelStatus};
use crate::extract::TableRegion;
use crate::finetune::FinetuneError;
use crate::layout::PageLayout;
use crate::structure::TableGrid;
use crate::template::{Recommendation, RecommendationKind, TemplateAssignment};

pub use archive::{export_archive, read_archive, ArchiveEntry, ArchiveError};
pub use service::{
    BaseSummary, FileDiagnostic, JobInfo, JobKind, JobState, JobStatus, LabelSummary, ModelInfo, PageDetail, PageSummary,
    ProjectInfo, Progress, Service, UploadFile,
};
pub use store::{FaultInjector, Store, StoreError};

/// Tables found on one page by one model version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub model_version: String,
    pub regions: Vec<TableRegion>,
    pub grids: Vec<TableGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectState {
    pub project_id: String,
    pub name: String,
    pub active_model: String,
    pub pages: BTreeMap<String, PageLayout>,
    /// Pages whose extraction is missing or made by another model.
    pub pending: BTreeSet<String>,
    pub extractions: BTreeMap<String, Extraction>,
    pub templates: Vec<TemplateAssignment>,
    pub recommendations: Vec<Recommendation>,
    /// Label revisions per page, oldest first.
    pub labels: BTreeMap<String, Vec<LabelRecord>>,
}

impl ProjectState {
    pub fn new(project_id: &str, name: &str, active_model: &str) -> Self {
        Self {
            project_id: project_id.to_string(),
            name: name.to_string(),
            active_model: active_model.to_string(),
            pages: BTreeMap::new(),
            pending: BTreeSet::new(),
            extractions: BTreeMap::new(),
            templates: Vec::new(),
            recommendations: Vec::new(),
            labels: BTreeMap::new(),
        }
    }

    /// Latest label revision of a page.
    pub fn label(&self, page_id: &str) -> Option<&LabelRecord> {
        self.labels.get(page_id).and_then(|revs| revs.last())
    }

    /// Latest submitted revision of a page.
    pub fn submitted_label(&self, page_id: &str) -> Option<&LabelRecord> {
        self.labels
            .get(page_id)
            .and_then(|revs| revs.iter().rev().find(|r| r.status == LabelStatus::Submitted))
    }

    pub fn labelled(&self) -> BTreeSet<String> {
        self.labels
            .iter()
            .filter(|(_, revs)| !revs.is_empty())
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn recommendation(&self, page_id: &str) -> Option<RecommendationKind> {
        self.recommendations
            .iter()
            .find(|r| r.page_id == page_id)
            .map(|r| r.kind)
    }

    pub fn template_of(&self, page_id: &str) -> Option<usize> {
        self.templates
            .iter()
            .find(|a| a.page_id == page_id)
            .map(|a| a.template_id)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProjectError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("project is busy: {0}")]
    Busy(String),
    #[error("{} file(s) rejected", .0.len())]
    InvalidDocuments(Vec<FileDiagnostic>),
    #[error("page {0} has not been extracted yet")]
    NotExtracted(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Finetune(#[from] FinetuneError),
    #[error("storage: {0}")]
    Storage(#[from] StoreError),
}

impl ProjectError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ProjectError::NotFound(_) => "not_found",
            ProjectError::Busy(_) => "busy",
            ProjectError::InvalidDocuments(_) => "invalid_documents",
            ProjectError::NotExtracted(_) => "not_extracted",
            ProjectError::Invalid(_) => "invalid_request",
            ProjectError::Edit(e) => e.code(),
            ProjectError::Finetune(FinetuneError::NothingToTrain) => "nothing_to_train",
            ProjectError::Finetune(FinetuneError::UnknownModel(_)) => "not_found",
            ProjectError::Finetune(_) => "finetune_failed",
            ProjectError::Storage(_) => "storage",
        }
    }
}
