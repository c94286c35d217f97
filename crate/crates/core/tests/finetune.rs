use std::collections::BTreeSet;

use proptest::prelude::*;

use tablesmith_core::corpus::{generate_collection, TemplateSpec};
use tablesmith_core::editor::LabelRecord;
use tablesmith_core::finetune::{
    builtin_bases, finetune, match_boxes, training_f1, DetectionCounts, LabelledPage, ModelRegistryEntry, Registry,
};
use tablesmith_core::{iou, BBox, PageLayout};

fn bbox() -> impl Strategy<Value = BBox> {
    (0u32..200, 0u32..200, 1u32..120, 1u32..120)
        .prop_map(|(x, y, w, h)| BBox::raw(x as f64, y as f64, (x + w) as f64, (y + h) as f64))
}

fn labelled_corpus(seed: u64) -> (Vec<PageLayout>, Vec<LabelRecord>) {
    let spec = TemplateSpec { seed, n_rows: 5, n_cols: 3, header_span: seed % 2 == 0, ..TemplateSpec::default() };
    let corpus = generate_collection(&[(spec, 3)]).unwrap();
    let pages = corpus.pages.iter().map(|g| g.page.clone()).collect();
    let records = corpus
        .pages
        .iter()
        .map(|g| {
            LabelRecord::from_extraction(&g.page.page_id, std::slice::from_ref(&g.region), std::slice::from_ref(&g.grid))
                .submit()
                .unwrap()
        })
        .collect();
    (pages, records)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (x, y) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(x, y);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn matching_is_one_to_one(pred in prop::collection::vec(bbox(), 0..8), truth in prop::collection::vec(bbox(), 0..8)) {
        let m = match_boxes(&pred, &truth);
        prop_assert_eq!(m.len(), pred.len());
        let used: Vec<usize> = m.iter().flatten().copied().collect();
        let distinct: BTreeSet<usize> = used.iter().copied().collect();
        prop_assert_eq!(used.len(), distinct.len());
        for (i, t) in m.iter().enumerate() {
            if let Some(t) = t {
                prop_assert!(iou(&pred[i], &truth[*t]) >= 0.5);
            }
        }
        let c = DetectionCounts::of(&pred, &truth);
        prop_assert_eq!(c.tp + c.fp, pred.len());
        prop_assert_eq!(c.tp + c.fn_, truth.len());
        prop_assert!((0.0..=1.0).contains(&c.f1()));
    }
}

#[test]
fn finetune_is_deterministic_and_never_worse() {
    for seed in [1, 2, 3] {
        let (pages, records) = labelled_corpus(seed);
        let labels: Vec<LabelledPage> =
            records.iter().zip(&pages).map(|(record, page)| LabelledPage { record, page }).collect();
        for base in builtin_bases() {
            let a = finetune(&labels, &base, "x.ft1").unwrap();
            let b = finetune(&labels, &base, "x.ft1").unwrap();
            assert_eq!(a, b, "seed {seed} base {}", base.version_id);
            assert!(training_f1(&a.params, &labels) >= training_f1(&base, &labels));
            assert_eq!(a.params.parent_id.as_deref(), Some(base.version_id.as_str()));
            assert!(a.params.validate().is_ok());
            assert!(!a.training_pages.is_empty());
        }
    }
}

#[test]
fn registry_chains_stay_acyclic_across_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let mut reg = Registry::open(dir.path()).unwrap();
    let mut s = 17u64;
    for i in 0..40 {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let ids: Vec<String> = reg.list().map(|e| e.version_id().to_string()).collect();
        // Sometimes point at a model that does not exist yet.
        let parent = if (s >> 60) == 0 { format!("ghost{i}") } else { ids[(s >> 33) as usize % ids.len()].clone() };
        let params = tablesmith_core::ModelParams {
            version_id: reg.next_version_id(&parent),
            parent_id: Some(parent.clone()),
            ..builtin_bases().remove(0)
        };
        let entry = ModelRegistryEntry { params, created_at: i, training_pages: vec![format!("p{i}")], metrics: None };
        let known = reg.get(&parent).is_some();
        assert_eq!(reg.register(entry).is_ok(), known);
    }
    let reopened = Registry::open(dir.path()).unwrap();
    assert_eq!(reopened.list().collect::<Vec<_>>(), reg.list().collect::<Vec<_>>());
    let n = reopened.list().count();
    for e in reopened.list() {
        let mut seen = BTreeSet::new();
        let mut cur = Some(e);
        while let Some(c) = cur {
            assert!(seen.insert(c.version_id().to_string()), "cycle through {}", c.version_id());
            assert!(seen.len() <= n);
            assert!(c.is_base() || !c.training_pages.is_empty());
            cur = c.parent_id().map(|p| reopened.get(p).expect("parent registered"));
        }
    }
}
