use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use tablesmith_core::template::{
    cluster_templates, cosine_distance, recommend_labels, LayoutEmbedding, RecommendationKind, TemplateAssignment,
    DEFAULT_CUT,
};

/// A handful of noisy copies around a few random prototypes.
fn embeddings() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, 6), 1..4),
        prop::collection::vec((0usize..4, prop::collection::vec(-0.05f64..0.05, 6)), 1..14),
    )
        .prop_map(|(protos, draws)| {
            draws
                .into_iter()
                .map(|(k, noise)| {
                    let p = &protos[k % protos.len()];
                    p.iter().zip(noise).map(|(a, n)| (a + n).max(0.0) + 1e-3).collect()
                })
                .collect()
        })
}

fn as_map(vs: &[Vec<f64>], names: &[String]) -> BTreeMap<String, LayoutEmbedding> {
    names.iter().cloned().zip(vs.iter().cloned().map(LayoutEmbedding)).collect()
}

/// Partition as a set of sets of embedding indices.
fn partition(assign: &[TemplateAssignment], index_of: &BTreeMap<String, usize>) -> BTreeSet<BTreeSet<usize>> {
    let mut groups: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for a in assign {
        groups.entry(a.template_id).or_default().insert(index_of[&a.page_id]);
    }
    groups.into_values().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn clustering_ignores_page_naming(vs in embeddings(), rot in 0usize..50) {
        let n = vs.len();
        let a: Vec<String> = (0..n).map(|i| format!("p{i:03}")).collect();
        // Renaming permutes the id order the clusterer iterates in.
        let b: Vec<String> = (0..n).map(|i| format!("q{:03}", (i + rot) % n)).collect();
        let pa = partition(&cluster_templates(&as_map(&vs, &a), DEFAULT_CUT).assignments,
            &a.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect());
        let pb = partition(&cluster_templates(&as_map(&vs, &b), DEFAULT_CUT).assignments,
            &b.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect());
        prop_assert_eq!(pa, pb);
    }

    #[test]
    fn merges_respect_the_cut(vs in embeddings(), cut in 0.01f64..0.8) {
        let names: Vec<String> = (0..vs.len()).map(|i| format!("p{i:03}")).collect();
        let c = cluster_templates(&as_map(&vs, &names), cut);
        for m in &c.merges {
            prop_assert!(m.distance <= cut);
            // Linkage recomputed from scratch over the merged members.
            let idx = |s: &String| names.iter().position(|n| n == s).unwrap();
            let total: f64 = m.left.iter().flat_map(|l| m.right.iter().map(move |r| (l, r)))
                .map(|(l, r)| cosine_distance(&vs[idx(l)], &vs[idx(r)]))
                .sum();
            let avg = total / (m.left.len() * m.right.len()) as f64;
            prop_assert!((avg - m.distance).abs() < 1e-9);
        }
        let templates: BTreeSet<usize> = c.assignments.iter().map(|a| a.template_id).collect();
        prop_assert_eq!(templates.len() + c.merges.len(), vs.len());
    }

    #[test]
    fn recommendations_are_distinct_and_bounded(
        pages in prop::collection::vec((0usize..4, prop::option::of(0.0f64..1.0), any::<bool>()), 0..20),
    ) {
        let (assign, confs, labelled) = inputs(&pages);
        let recs = recommend_labels(&assign, &confs, &labelled);
        let mut seen = BTreeSet::new();
        for r in &recs {
            prop_assert!(seen.insert(r.page_id.clone()), "page recommended twice");
            prop_assert!(!labelled.contains(&r.page_id));
            prop_assert!(confs[&r.page_id].is_some());
        }
        for t in 0..4 {
            let eligible = assign.iter()
                .filter(|a| a.template_id == t && !labelled.contains(&a.page_id) && confs[&a.page_id].is_some())
                .count();
            let got: Vec<_> = recs.iter().filter(|r| r.template_id == t).collect();
            prop_assert_eq!(got.len(), eligible.min(2));
            if eligible > 0 {
                prop_assert_eq!(got[0].kind, RecommendationKind::Impact);
            }
        }
    }

    #[test]
    fn recommendations_survive_monotone_rescaling(
        pages in prop::collection::vec((0usize..4, prop::option::of(0.0f64..1.0), any::<bool>()), 0..20),
    ) {
        let (assign, confs, labelled) = inputs(&pages);
        let squashed: BTreeMap<String, Option<f64>> =
            confs.iter().map(|(k, v)| (k.clone(), v.map(|c| (c * 3.0).exp() / 50.0 + 0.01))).collect();
        prop_assert_eq!(recommend_labels(&assign, &squashed, &labelled), recommend_labels(&assign, &confs, &labelled));
    }
}

type Inputs = (Vec<TemplateAssignment>, BTreeMap<String, Option<f64>>, BTreeSet<String>);

fn inputs(pages: &[(usize, Option<f64>, bool)]) -> Inputs {
    let mut assign = Vec::new();
    let mut confs = BTreeMap::new();
    let mut labelled = BTreeSet::new();
    for (i, (t, c, l)) in pages.iter().enumerate() {
        let id = format!("p{i:03}");
        assign.push(TemplateAssignment {
            page_id: id.clone(),
            template_id: *t,
            distance_to_medoid: 0.0,
        });
        confs.insert(id.clone(), *c);
        if *l {
            labelled.insert(id);
        }
    }
    (assign, confs, labelled)
}
