//! The project service: per-project state behind a write lock, snapshot
//! commits through the [`Store`], and background extraction and finetune
//! jobs with polled status.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, PoisonError, RwLock};
use std::thread::JoinHandle;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{export_archive, read_archive, Extraction, ProjectError, ProjectState, Store, StoreError};
use crate::editor::{extract_table, EditContext, EditError, EditOp, LabelRecord, LabelStatus, LabeledTable};
use crate::extract::{detect_tables, page_confidence, ModelParams, TableRegion};
use crate::finetune::{finetune, now_secs, LabelledPage, ModelRegistryEntry, Registry, DEFAULT_BASE};
use crate::layout::{normalize_layout, parse_page_file, PageLayout};
use crate::structure::{to_html, TableGrid};
use crate::template::{cluster_templates, embed_page, recommend_labels, RecommendationKind, DEFAULT_CUT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadFile {
    pub name: String,
    /// Page-layout JSON text.
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDiagnostic {
    pub file: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Extraction,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobInfo {
    pub job_id: String,
    pub project_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub progress: f64,
    pub error: Option<String>,
    pub result: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Idle,
    Extracting,
    Finetuning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectInfo {
    pub project_id: String,
    pub name: String,
    pub active_model: String,
    pub pages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageSummary {
    pub page_id: String,
    pub extracted: bool,
    pub table_count: usize,
    pub confidence: Option<f64>,
    pub template_id: Option<usize>,
    pub recommendation: Option<RecommendationKind>,
    pub labelled: bool,
    pub submitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub revision: u32,
    pub status: LabelStatus,
    pub edits: usize,
}

/// Everything the editor view needs. `regions`, `grids` and `html` show
/// the latest label when one exists and the extraction otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageDetail {
    pub page_id: String,
    pub layout: PageLayout,
    pub model_version: Option<String>,
    pub stale: bool,
    pub confidence: Option<f64>,
    pub template_id: Option<usize>,
    pub recommendation: Option<RecommendationKind>,
    pub regions: Vec<TableRegion>,
    pub grids: Vec<TableGrid>,
    pub html: Vec<String>,
    pub label: Option<LabelSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub project_id: String,
    pub pages: usize,
    pub labelled: usize,
    pub submitted: usize,
    pub recommended_remaining: usize,
    pub job_state: JobState,
    pub job_id: Option<String>,
    pub progress: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    #[serde(flatten)]
    pub entry: ModelRegistryEntry,
    pub active: bool,
}

/// How confidently one base model reads a project's pages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseSummary {
    pub version_id: String,
    pub pages: usize,
    /// Pages where the model finds at least one table.
    pub pages_with_tables: usize,
    pub mean_confidence: Option<f64>,
    pub min_confidence: Option<f64>,
}

#[derive(Debug, Default)]
struct Counter {
    done: AtomicUsize,
    total: AtomicUsize,
}

impl Counter {
    fn fraction(&self) -> f64 {
        let total = self.total.load(Ordering::SeqCst);
        if total == 0 {
            return 0.0;
        }
        (self.done.load(Ordering::SeqCst) as f64 / total as f64).min(1.0)
    }

    fn tick(&self) {
        self.done.fetch_add(1, Ordering::SeqCst);
    }
}

#[derive(Clone)]
struct ActiveJob {
    job_id: String,
    kind: JobKind,
    counter: Arc<Counter>,
}

struct Slot {
    state: RwLock<Arc<ProjectState>>,
    write: Mutex<()>,
    job: Mutex<Option<ActiveJob>>,
}

impl Slot {
    fn new(state: ProjectState) -> Arc<Self> {
        Arc::new(Self {
            state: RwLock::new(Arc::new(state)),
            write: Mutex::new(()),
            job: Mutex::new(None),
        })
    }

    fn current(&self) -> Arc<ProjectState> {
        self.state.read().unwrap_or_else(PoisonError::into_inner).clone()
    }

    fn job_state(&self) -> (JobState, Option<String>, f64) {
        match lock(&self.job).as_ref() {
            None => (JobState::Idle, None, 0.0),
            Some(j) => {
                let s = match j.kind {
                    JobKind::Extraction => JobState::Extracting,
                    JobKind::Finetune => JobState::Finetuning,
                };
                (s, Some(j.job_id.clone()), j.counter.fraction())
            }
        }
    }
}

struct JobEntry {
    info: JobInfo,
    counter: Arc<Counter>,
    handle: Option<JoinHandle<()>>,
}

struct Inner {
    store: Store,
    registry: RwLock<Registry>,
    projects: RwLock<BTreeMap<String, Arc<Slot>>>,
    jobs: Mutex<BTreeMap<String, JobEntry>>,
    next_job: AtomicU64,
}

/// Cheap to clone; all clones share the same projects and jobs.
#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

fn not_found(what: &str, id: &str) -> ProjectError {
    ProjectError::NotFound(format!("{what} {id}"))
}

fn storage(e: std::io::Error) -> ProjectError {
    ProjectError::Storage(StoreError::Io(e))
}

/// Page ids name files in the store, so they are kept to a safe alphabet.
fn check_page_id(id: &str) -> Result<(), String> {
    if id.is_empty() || id.len() > 128 {
        return Err("page_id must have 1 to 128 characters".into());
    }
    if id.starts_with('.') {
        return Err("page_id must not start with '.'".into());
    }
    if !id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) {
        return Err("page_id may only contain ASCII letters, digits, '-', '_' and '.'".into());
    }
    Ok(())
}

fn extract(params: &ModelParams, page: &PageLayout) -> Extraction {
    let regions = detect_tables(params, page);
    let grids = regions
        .iter()
        .map(|r| extract_table(params, page, &r.table_id, &r.bbox))
        .collect();
    Extraction {
        model_version: params.version_id.clone(),
        regions,
        grids,
    }
}

fn extract_all(params: &ModelParams, state: &ProjectState, ids: &[String], counter: &Counter) -> Vec<(String, Extraction)> {
    counter.total.fetch_add(ids.len(), Ordering::SeqCst);
    ids.par_iter()
        .map(|id| {
            let ex = extract(params, &state.pages[id]);
            counter.tick();
            (id.clone(), ex)
        })
        .collect()
}

/// Stores extraction results made with `version`, skipping pages removed
/// or re-targeted meanwhile, then recomputes templates and recommendations.
fn apply_extractions(state: &mut ProjectState, version: &str, results: Vec<(String, Extraction)>) {
    if state.active_model == version {
        for (id, ex) in results {
            if state.pages.contains_key(&id) {
                state.pending.remove(&id);
                state.extractions.insert(id, ex);
            }
        }
    }
    refresh_templates(state);
}

fn refresh_templates(state: &mut ProjectState) {
    let embeddings = state
        .extractions
        .iter()
        .map(|(id, ex)| (id.clone(), embed_page(&state.pages[id], &ex.regions)))
        .collect();
    let clustering = cluster_templates(&embeddings, DEFAULT_CUT);
    let confidences = state
        .extractions
        .iter()
        .map(|(id, ex)| (id.clone(), page_confidence(&ex.regions)))
        .collect();
    state.recommendations = recommend_labels(&clustering.assignments, &confidences, &state.labelled());
    state.templates = clustering.assignments;
}

fn store_revision(state: &mut ProjectState, record: LabelRecord) {
    let revs = state.labels.entry(record.page_id.clone()).or_default();
    match revs.last_mut() {
        Some(last) if last.revision == record.revision => *last = record,
        _ => revs.push(record),
    }
}

impl Service {
    pub fn open(root: &std::path::Path) -> Result<Self, ProjectError> {
        Self::with_store(Store::open(root)?)
    }

    /// Loads the registry and every committed project from `store`.
    pub fn with_store(store: Store) -> Result<Self, ProjectError> {
        let registry = Registry::open(&store.models_dir())?;
        let mut projects = BTreeMap::new();
        for id in store.list_projects()? {
            if let Some(state) = store.load(&id)? {
                projects.insert(id, Slot::new(state));
            }
        }
        Ok(Self {
            inner: Arc::new(Inner {
                store,
                registry: RwLock::new(registry),
                projects: RwLock::new(projects),
                jobs: Mutex::new(BTreeMap::new()),
                next_job: AtomicU64::new(1),
            }),
        })
    }

    fn slot(&self, project_id: &str) -> Result<Arc<Slot>, ProjectError> {
        self.inner
            .projects
            .read()
            .unwrap_or_else(PoisonError::into_inner)
            .get(project_id)
            .cloned()
            .ok_or_else(|| not_found("project", project_id))
    }

    fn model_params(&self, version_id: &str) -> Result<ModelParams, ProjectError> {
        self.inner
            .registry
            .read()
            .unwrap_or_else(PoisonError::into_inner)
            .params(version_id)
            .map_err(|_| not_found("model", version_id))
    }

    /// Runs `f` on a copy of the state under the project's write lock and
    /// commits the copy. On any error neither disk nor memory changes.
    fn mutate<T>(
        &self,
        project_id: &str,
        f: impl FnOnce(&mut ProjectState) -> Result<T, ProjectError>,
    ) -> Result<T, ProjectError> {
        let slot = self.slot(project_id)?;
        let _w = lock(&slot.write);
        let current = slot.current();
        let mut next = (*current).clone();
        let out = f(&mut next)?;
        if next != *current {
            self.inner.store.commit(&next)?;
            *slot.state.write().unwrap_or_else(PoisonError::into_inner) = Arc::new(next);
        }
        Ok(out)
    }

    /// A consistent snapshot of a project's state.
    pub fn state(&self, project_id: &str) -> Result<Arc<ProjectState>, ProjectError> {
        Ok(self.slot(project_id)?.current())
    }

    pub fn create_project(&self, name: &str) -> Result<ProjectInfo, ProjectError> {
        let mut projects = self.inner.projects.write().unwrap_or_else(PoisonError::into_inner);
        let id = (projects.len() + 1..)
            .map(|n| format!("prj{n}"))
            .find(|id| !projects.contains_key(id) && !self.inner.store.exists(id))
            .expect("unbounded");
        let state = ProjectState::new(&id, name, DEFAULT_BASE);
        self.inner.store.commit(&state)?;
        let info = project_info(&state);
        projects.insert(id, Slot::new(state));
        Ok(info)
    }

    pub fn list_projects(&self) -> Vec<ProjectInfo> {
        let slots: Vec<Arc<Slot>> = self
            .inner
            .projects
            .read()
            .unwrap_or_else(PoisonError::into_inner)
            .values()
            .cloned()
            .collect();
        slots.iter().map(|s| project_info(&s.current())).collect()
    }

    pub fn project(&self, project_id: &str) -> Result<ProjectInfo, ProjectError> {
        Ok(project_info(&*self.state(project_id)?))
    }

    /// Adds pages in one atomic step and marks them for extraction.
    /// Returns the number of pages added.
    pub fn add_documents(&self, project_id: &str, files: &[UploadFile]) -> Result<usize, ProjectError> {
        self.mutate(project_id, |state| {
            let mut diagnostics = Vec::new();
            let mut parsed = Vec::new();
            let mut seen = BTreeSet::new();
            for file in files {
                let diag = |message: String| FileDiagnostic {
                    file: file.name.clone(),
                    message,
                };
                let page = match parse_page_file(file.content.as_bytes()) {
                    Ok(p) => p,
                    Err(e) => {
                        diagnostics.push(diag(e.to_string()));
                        continue;
                    }
                };
                if let Err(m) = check_page_id(&page.page_id) {
                    diagnostics.push(diag(m));
                } else if state.pages.contains_key(&page.page_id) || !seen.insert(page.page_id.clone()) {
                    diagnostics.push(diag(format!("duplicate page_id {}", page.page_id)));
                } else {
                    parsed.push(normalize_layout(page));
                }
            }
            if !diagnostics.is_empty() {
                return Err(ProjectError::InvalidDocuments(diagnostics));
            }
            let n = parsed.len();
            for page in parsed {
                state.pending.insert(page.page_id.clone());
                state.pages.insert(page.page_id.clone(), page);
            }
            Ok(n)
        })
    }

    fn start_job<F>(&self, project_id: &str, kind: JobKind, slot: &Slot, work: F) -> Result<JobInfo, ProjectError>
    where
        F: FnOnce(&Service, &Counter) -> Result<serde_json::Value, ProjectError> + Send + 'static,
    {
        let mut job = lock(&slot.job);
        if let Some(running) = job.as_ref() {
            return Err(ProjectError::Busy(format!(
                "{} job {} is running",
                match running.kind {
                    JobKind::Extraction => "extraction",
                    JobKind::Finetune => "finetune",
                },
                running.job_id
            )));
        }
        let job_id = format!("job-{}", self.inner.next_job.fetch_add(1, Ordering::SeqCst));
        let counter = Arc::new(Counter::default());
        let info = JobInfo {
            job_id: job_id.clone(),
            project_id: project_id.to_string(),
            kind,
            status: JobStatus::Running,
            progress: 0.0,
            error: None,
            result: None,
        };
        lock(&self.inner.jobs).insert(
            job_id.clone(),
            JobEntry {
                info: info.clone(),
                counter: counter.clone(),
                handle: None,
            },
        );
        *job = Some(ActiveJob {
            job_id: job_id.clone(),
            kind,
            counter: counter.clone(),
        });

        let svc = self.clone();
        let pid = project_id.to_string();
        let jid = job_id.clone();
        let handle = std::thread::spawn(move || {
            let outcome = work(&svc, &counter);
            if let Err(e) = &outcome {
                log::warn!("job {jid} on {pid} failed: {e}");
            }
            if let Some(entry) = lock(&svc.inner.jobs).get_mut(&jid) {
                match outcome {
                    Ok(v) => {
                        entry.info.status = JobStatus::Done;
                        entry.info.result = Some(v);
                    }
                    Err(e) => {
                        entry.info.status = JobStatus::Failed;
                        entry.info.error = Some(e.to_string());
                    }
                }
            }
            if let Ok(slot) = svc.slot(&pid) {
                *lock(&slot.job) = None;
            }
        });
        if let Some(entry) = lock(&self.inner.jobs).get_mut(&job_id) {
            entry.handle = Some(handle);
        }
        Ok(info)
    }

    /// Starts extracting every pending page with the active model.
    pub fn run_extraction(&self, project_id: &str) -> Result<JobInfo, ProjectError> {
        let slot = self.slot(project_id)?;
        let pid = project_id.to_string();
        self.start_job(project_id, JobKind::Extraction, &slot, move |svc, counter| {
            let snapshot = svc.state(&pid)?;
            let params = svc.model_params(&snapshot.active_model)?;
            let ids: Vec<String> = snapshot.pending.iter().cloned().collect();
            let results = extract_all(&params, &snapshot, &ids, counter);
            svc.mutate(&pid, |state| {
                apply_extractions(state, &params.version_id, results);
                Ok(())
            })?;
            Ok(json!({ "pages_extracted": ids.len(), "model_version": params.version_id }))
        })
    }

    /// Starts a finetune job from the latest submitted revisions. The new
    /// model becomes active and every page is re-extracted with it before
    /// the job ends. `base` defaults to the active model.
    pub fn start_finetune(&self, project_id: &str, base: Option<&str>) -> Result<JobInfo, ProjectError> {
        let slot = self.slot(project_id)?;
        let snapshot = slot.current();
        let base_id = base.unwrap_or(&snapshot.active_model).to_string();
        self.model_params(&base_id)?;
        if !snapshot.pages.keys().any(|id| snapshot.submitted_label(id).is_some()) {
            return Err(crate::finetune::FinetuneError::NothingToTrain.into());
        }
        let pid = project_id.to_string();
        self.start_job(project_id, JobKind::Finetune, &slot, move |svc, counter| {
            counter.total.store(1, Ordering::SeqCst);
            let snapshot = svc.state(&pid)?;
            let base = svc.model_params(&base_id)?;
            let labels: Vec<LabelledPage<'_>> = snapshot
                .pages
                .iter()
                .filter_map(|(id, page)| snapshot.submitted_label(id).map(|record| LabelledPage { record, page }))
                .collect();
            let outcome = finetune(&labels, &base, "pending")?;
            let entry = {
                let mut reg = svc.inner.registry.write().unwrap_or_else(PoisonError::into_inner);
                let version_id = reg.next_version_id(&base_id);
                let entry = ModelRegistryEntry {
                    params: ModelParams {
                        version_id,
                        ..outcome.params.clone()
                    },
                    created_at: now_secs(),
                    training_pages: outcome.training_pages.clone(),
                    metrics: Some(outcome.metrics),
                };
                reg.register(entry)?.clone()
            };
            counter.tick();
            let ids: Vec<String> = snapshot.pages.keys().cloned().collect();
            let results = extract_all(&entry.params, &snapshot, &ids, counter);
            let version = entry.params.version_id.clone();
            svc.mutate(&pid, |state| {
                state.active_model = version.clone();
                state.pending = state.pages.keys().cloned().collect();
                apply_extractions(state, &version, results);
                Ok(())
            })?;
            Ok(json!({
                "version_id": version,
                "parent_id": base_id,
                "choice": outcome.choice,
                "metrics": outcome.metrics,
                "base_f1": outcome.base_f1,
                "training_pages": outcome.training_pages.len(),
            }))
        })
    }

    pub fn get_job(&self, job_id: &str) -> Result<JobInfo, ProjectError> {
        let jobs = lock(&self.inner.jobs);
        let entry = jobs.get(job_id).ok_or_else(|| not_found("job", job_id))?;
        let mut info = entry.info.clone();
        info.progress = match info.status {
            JobStatus::Running => entry.counter.fraction(),
            _ => 1.0,
        };
        Ok(info)
    }

    /// Blocks until the job has finished.
    pub fn wait_job(&self, job_id: &str) -> Result<JobInfo, ProjectError> {
        let handle = lock(&self.inner.jobs)
            .get_mut(job_id)
            .ok_or_else(|| not_found("job", job_id))?
            .handle
            .take();
        if let Some(h) = handle {
            if h.join().is_err() {
                let mut jobs = lock(&self.inner.jobs);
                if let Some(entry) = jobs.get_mut(job_id) {
                    entry.info.status = JobStatus::Failed;
                    entry.info.error = Some("job panicked".into());
                }
            }
        }
        self.get_job(job_id)
    }

    /// Pages ordered impact first, then easy, then unrecommended; within
    /// each group by ascending confidence (pages without one last), then id.
    pub fn list_pages(&self, project_id: &str) -> Result<Vec<PageSummary>, ProjectError> {
        let state = self.state(project_id)?;
        let mut pages: Vec<PageSummary> = state.pages.keys().map(|id| summarize(&state, id)).collect();
        let rank = |k: Option<RecommendationKind>| match k {
            Some(RecommendationKind::Impact) => 0,
            Some(RecommendationKind::Easy) => 1,
            None => 2,
        };
        pages.sort_by(|a, b| {
            rank(a.recommendation)
                .cmp(&rank(b.recommendation))
                .then_with(|| match (a.confidence, b.confidence) {
                    (Some(x), Some(y)) => x.total_cmp(&y),
                    (Some(_), None) => std::cmp::Ordering::Less,
                    (None, Some(_)) => std::cmp::Ordering::Greater,
                    (None, None) => std::cmp::Ordering::Equal,
                })
                .then_with(|| a.page_id.cmp(&b.page_id))
        });
        Ok(pages)
    }

    pub fn get_page(&self, project_id: &str, page_id: &str) -> Result<PageDetail, ProjectError> {
        let state = self.state(project_id)?;
        let page = state.pages.get(page_id).ok_or_else(|| not_found("page", page_id))?;
        let extraction = state.extractions.get(page_id);
        let label = state.label(page_id);
        let (regions, grids, layout) = match (label, extraction) {
            (Some(rec), _) => (
                rec.tables.iter().map(|t| t.region.clone()).collect(),
                rec.tables.iter().map(|t| t.grid.clone()).collect::<Vec<_>>(),
                rec.effective_page(page),
            ),
            (None, Some(ex)) => (ex.regions.clone(), ex.grids.clone(), page.clone()),
            (None, None) => (Vec::new(), Vec::new(), page.clone()),
        };
        Ok(PageDetail {
            page_id: page_id.to_string(),
            layout,
            model_version: extraction.map(|e| e.model_version.clone()),
            stale: state.pending.contains(page_id),
            confidence: extraction.and_then(|e| page_confidence(&e.regions)),
            template_id: state.template_of(page_id),
            recommendation: state.recommendation(page_id),
            html: grids.iter().map(to_html).collect(),
            regions,
            grids,
            label: label.map(|r| LabelSummary {
                revision: r.revision,
                status: r.status,
                edits: r.edit_log.len(),
            }),
        })
    }

    fn working_record(state: &ProjectState, page_id: &str) -> Result<LabelRecord, ProjectError> {
        if !state.pages.contains_key(page_id) {
            return Err(not_found("page", page_id));
        }
        match state.label(page_id) {
            Some(r) if r.is_submitted() => Ok(r.revise()),
            Some(r) => Ok(r.clone()),
            None => {
                let ex = state
                    .extractions
                    .get(page_id)
                    .ok_or_else(|| ProjectError::NotExtracted(page_id.to_string()))?;
                Ok(LabelRecord::from_extraction(page_id, &ex.regions, &ex.grids))
            }
        }
    }

    /// Applies one edit to the page's draft label. The first edit seeds the
    /// draft from the extraction; an edit after submission opens a new
    /// revision.
    pub fn apply_op(&self, project_id: &str, page_id: &str, op: EditOp) -> Result<PageDetail, ProjectError> {
        self.mutate(project_id, |state| {
            let model = self.model_params(&state.active_model)?;
            let record = Self::working_record(state, page_id)?;
            let ctx = EditContext {
                page: &state.pages[page_id],
                model: &model,
            };
            let next = record.apply(ctx, op)?;
            store_revision(state, next);
            Ok(())
        })?;
        self.get_page(project_id, page_id)
    }

    /// Submits the draft, seeding it from the extraction if the page has
    /// no label yet.
    pub fn submit(&self, project_id: &str, page_id: &str) -> Result<PageDetail, ProjectError> {
        self.mutate(project_id, |state| {
            if state.label(page_id).is_some_and(LabelRecord::is_submitted) {
                return Err(EditError::NotDraft.into());
            }
            let record = Self::working_record(state, page_id)?;
            store_revision(state, record.submit()?);
            Ok(())
        })?;
        self.get_page(project_id, page_id)
    }

    pub fn get_progress(&self, project_id: &str) -> Result<Progress, ProjectError> {
        let slot = self.slot(project_id)?;
        let state = slot.current();
        let labelled = state.labelled();
        let (job_state, job_id, progress) = slot.job_state();
        Ok(Progress {
            project_id: project_id.to_string(),
            pages: state.pages.len(),
            labelled: labelled.len(),
            submitted: state.pages.keys().filter(|id| state.submitted_label(id).is_some()).count(),
            recommended_remaining: state
                .recommendations
                .iter()
                .filter(|r| !labelled.contains(&r.page_id))
                .count(),
            job_state,
            job_id,
            progress,
        })
    }

    /// Registry entries; `active` marks the given project's model.
    pub fn list_models(&self, project_id: Option<&str>) -> Result<Vec<ModelInfo>, ProjectError> {
        let active = project_id.map(|p| self.state(p)).transpose()?.map(|s| s.active_model.clone());
        let reg = self.inner.registry.read().unwrap_or_else(PoisonError::into_inner);
        Ok(reg
            .list()
            .map(|e| ModelInfo {
                active: active.as_deref() == Some(e.version_id()),
                entry: e.clone(),
            })
            .collect())
    }

    /// Runs every base model over the project's pages without storing
    /// anything, so the user can judge which base fits the collection.
    pub fn compare_bases(&self, project_id: &str) -> Result<Vec<BaseSummary>, ProjectError> {
        let state = self.state(project_id)?;
        let bases: Vec<ModelParams> = {
            let reg = self.inner.registry.read().unwrap_or_else(PoisonError::into_inner);
            reg.list().filter(|e| e.is_base()).map(|e| e.params.clone()).collect()
        };
        Ok(bases
            .iter()
            .map(|params| {
                let confs: Vec<Option<f64>> = state
                    .pages
                    .par_iter()
                    .map(|(_, page)| page_confidence(&detect_tables(params, page)))
                    .collect();
                let found: Vec<f64> = confs.iter().flatten().copied().collect();
                BaseSummary {
                    version_id: params.version_id.clone(),
                    pages: confs.len(),
                    pages_with_tables: found.len(),
                    mean_confidence: (!found.is_empty()).then(|| found.iter().sum::<f64>() / found.len() as f64),
                    min_confidence: found.iter().copied().reduce(f64::min),
                }
            })
            .collect())
    }

    /// Switches the active model and marks every page for re-extraction.
    /// Selecting the current model changes nothing.
    pub fn select_model(&self, project_id: &str, version_id: &str) -> Result<ProjectInfo, ProjectError> {
        self.model_params(version_id)?;
        let slot = self.slot(project_id)?;
        let job = lock(&slot.job);
        if let Some(j) = job.as_ref() {
            return Err(ProjectError::Busy(format!("job {} is running", j.job_id)));
        }
        self.mutate(project_id, |state| {
            if state.active_model != version_id {
                state.active_model = version_id.to_string();
                state.pending = state.pages.keys().cloned().collect();
            }
            Ok(())
        })?;
        drop(job);
        self.project(project_id)
    }

    pub fn export(&self, project_id: &str) -> Result<Vec<u8>, ProjectError> {
        export_archive(&*self.state(project_id)?).map_err(storage)
    }

    /// Loads labels from an archive made by [`Service::export`]. Every
    /// listed page must already exist in the project. Returns the number
    /// of pages labelled.
    pub fn import(&self, project_id: &str, archive: &[u8]) -> Result<usize, ProjectError> {
        let entries = read_archive(archive).map_err(|e| ProjectError::Invalid(e.to_string()))?;
        self.mutate(project_id, |state| {
            for e in &entries {
                if !state.pages.contains_key(&e.page_id) {
                    return Err(not_found("page", &e.page_id));
                }
            }
            for e in entries.iter() {
                let tables: Vec<LabeledTable> = e
                    .grids
                    .iter()
                    .map(|g| LabeledTable {
                        region: TableRegion {
                            table_id: g.table_id.clone(),
                            bbox: g.bbox,
                            confidence: 1.0,
                        },
                        grid: g.clone(),
                    })
                    .collect();
                let revision = state.label(&e.page_id).map_or(e.revision, |r| r.revision + 1);
                let revs = state.labels.entry(e.page_id.clone()).or_default();
                revs.push(LabelRecord {
                    page_id: e.page_id.clone(),
                    revision,
                    status: e.status,
                    initial: tables.clone(),
                    tables,
                    token_edits: BTreeMap::new(),
                    edit_log: Vec::new(),
                });
            }
            Ok(entries.len())
        })
    }
}

fn project_info(state: &ProjectState) -> ProjectInfo {
    ProjectInfo {
        project_id: state.project_id.clone(),
        name: state.name.clone(),
        active_model: state.active_model.clone(),
        pages: state.pages.len(),
    }
}

fn summarize(state: &ProjectState, page_id: &str) -> PageSummary {
    let extraction = state.extractions.get(page_id);
    PageSummary {
        page_id: page_id.to_string(),
        extracted: extraction.is_some(),
        table_count: extraction.map_or(0, |e| e.regions.len()),
        confidence: extraction.and_then(|e| page_confidence(&e.regions)),
        template_id: state.template_of(page_id),
        recommendation: state.recommendation(page_id),
        labelled: state.label(page_id).is_some(),
        submitted: state.submitted_label(page_id).is_some(),
    }
}
