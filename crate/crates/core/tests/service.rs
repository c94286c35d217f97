use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tablesmith_core::corpus::{generate_collection, TemplateSpec};
use tablesmith_core::editor::{EditOp, LabelStatus};
use tablesmith_core::project::{JobStatus, ProjectError, Service, UploadFile};
use tablesmith_core::template::RecommendationKind;
use tablesmith_core::{Axis, BBox};

fn loaded(dir: &std::path::Path, per_template: usize) -> (Service, String) {
    let specs = vec![
        (TemplateSpec { seed: 3, n_rows: 6, n_cols: 4, ..TemplateSpec::default() }, per_template),
        (
            TemplateSpec {
                seed: 4,
                n_rows: 8,
                n_cols: 3,
                ruled: true,
                origin_x: 300,
                origin_y: 420,
                ..TemplateSpec::default()
            },
            per_template,
        ),
    ];
    let corpus = generate_collection(&specs).unwrap();
    let svc = Service::open(dir).unwrap();
    let pid = svc.create_project("props").unwrap().project_id;
    let files: Vec<UploadFile> = corpus
        .pages
        .iter()
        .map(|g| UploadFile { name: format!("{}.json", g.page.page_id), content: g.page.to_json() })
        .collect();
    svc.add_documents(&pid, &files).unwrap();
    let job = svc.run_extraction(&pid).unwrap();
    assert_eq!(svc.wait_job(&job.job_id).unwrap().status, JobStatus::Done);
    (svc, pid)
}

fn random_op(rng: &mut ChaCha8Rng) -> EditOp {
    let table_id = format!("t{}", rng.random_range(0..2));
    match rng.random_range(0..5) {
        0 => EditOp::MergeRows { table_id, row_indices: vec![0, rng.random_range(0..4)] },
        1 => EditOp::MergeCols { table_id, col_indices: vec![1, 2] },
        2 => EditOp::SplitCell {
            table_id,
            cell_id: format!("c{}", rng.random_range(0..30)),
            axis: Axis::Col,
            count: 2,
        },
        3 => EditOp::DeleteTable { table_id },
        _ => EditOp::AddTable { bbox: BBox::raw(0.0, 0.0, rng.random_range(5.0..600.0), 40.0) },
    }
}

#[test]
fn page_order_matches_review_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let (svc, pid) = loaded(dir.path(), 5);
    let state = svc.state(&pid).unwrap();
    let listed = svc.list_pages(&pid).unwrap();
    assert_eq!(listed.len(), state.pages.len());

    // Recomputed from raw state rather than from the summaries.
    let key = |id: &str| {
        let rank = match state.recommendations.iter().find(|r| r.page_id == id).map(|r| r.kind) {
            Some(RecommendationKind::Impact) => 0,
            Some(RecommendationKind::Easy) => 1,
            None => 2,
        };
        let conf = state.extractions[id].regions.iter().map(|r| r.confidence).reduce(f64::min);
        (rank, conf, id.to_string())
    };
    let cmp = |a: &(i32, Option<f64>, String), b: &(i32, Option<f64>, String)| {
        a.0.cmp(&b.0)
            .then(match (a.1, b.1) {
                (Some(x), Some(y)) => x.partial_cmp(&y).unwrap(),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => Ordering::Equal,
            })
            .then(a.2.cmp(&b.2))
    };
    let mut expected: Vec<_> = state.pages.keys().map(|id| key(id)).collect();
    expected.sort_by(cmp);
    let got: Vec<&str> = listed.iter().map(|p| p.page_id.as_str()).collect();
    let want: Vec<&str> = expected.iter().map(|k| k.2.as_str()).collect();
    assert_eq!(got, want);
    let impacts = listed.iter().filter(|p| p.recommendation == Some(RecommendationKind::Impact)).count();
    let templates: std::collections::BTreeSet<_> = state.templates.iter().map(|t| t.template_id).collect();
    assert_eq!(impacts, templates.len());
}

#[test]
fn second_extraction_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let (svc, pid) = loaded(dir.path(), 3);
    let before = svc.state(&pid).unwrap();
    assert!(before.pending.is_empty());
    let job = svc.run_extraction(&pid).unwrap();
    assert_eq!(svc.wait_job(&job.job_id).unwrap().status, JobStatus::Done);
    assert_eq!(*svc.state(&pid).unwrap(), *before);
}

#[test]
fn progress_matches_recount_and_errors_leave_no_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (svc, pid) = loaded(dir.path(), 4);
    let ids: Vec<String> = svc.state(&pid).unwrap().pages.keys().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut failures = 0;
    for step in 0..120 {
        let page = &ids[rng.random_range(0..ids.len())];
        let before = svc.state(&pid).unwrap();
        let result = match rng.random_range(0..6) {
            0 => svc.submit(&pid, page).map(|_| ()),
            1 => svc.apply_op(&pid, "missing", random_op(&mut rng)).map(|_| ()),
            _ => svc.apply_op(&pid, page, random_op(&mut rng)).map(|_| ()),
        };
        if let Err(e) = result {
            failures += 1;
            assert!(!matches!(e, ProjectError::Storage(_)), "step {step}: {e}");
            assert_eq!(*svc.state(&pid).unwrap(), *before, "step {step} mutated on {e}");
        }

        let state = svc.state(&pid).unwrap();
        let labelled = state.labels.values().filter(|revs| !revs.is_empty()).count();
        let submitted = state
            .labels
            .values()
            .filter(|revs| revs.iter().any(|r| r.status == LabelStatus::Submitted))
            .count();
        let progress = svc.get_progress(&pid).unwrap();
        assert_eq!((progress.pages, progress.labelled, progress.submitted), (ids.len(), labelled, submitted));
        assert!(progress.recommended_remaining <= 2 * state.templates.len());
    }
    assert!(failures > 0, "the script never hit an error path");

    // What is on disk is what was in memory.
    let reopened = Service::open(dir.path()).unwrap();
    assert_eq!(*reopened.state(&pid).unwrap(), *svc.state(&pid).unwrap());
}
