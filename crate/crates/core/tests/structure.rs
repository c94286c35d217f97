use proptest::prelude::*;

use tablesmith_core::corpus::cell_layout;
use tablesmith_core::extract::CellBox;
use tablesmith_core::layout::{PageLayout, Token};
use tablesmith_core::structure::{build_grid, cluster_axis, from_annotation, to_html};
use tablesmith_core::BBox;

fn empty_page() -> PageLayout {
    PageLayout {
        page_id: "p".into(),
        width: 1000.0,
        height: 1000.0,
        tokens: Vec::new(),
        rulings: Vec::new(),
        raster_ref: None,
    }
}

/// Random boxes inside a 400x400 region, dropped when they overlap an
/// earlier one.
fn disjoint_boxes() -> impl Strategy<Value = Vec<CellBox>> {
    prop::collection::vec((0u32..380, 0u32..380, 4u32..80, 4u32..40), 0..24).prop_map(|raw| {
        let mut kept: Vec<BBox> = Vec::new();
        for (x, y, w, h) in raw {
            let b = BBox::raw(x as f64 + 10.0, y as f64 + 10.0, (x + w).min(399) as f64 + 10.0, (y + h).min(399) as f64 + 10.0);
            if b.x0 < b.x1 && b.y0 < b.y1 && kept.iter().all(|k| k.intersection(&b).is_none()) {
                kept.push(b);
            }
        }
        kept.into_iter()
            .enumerate()
            .map(|(i, bbox)| CellBox {
                cell_id: format!("c{i}"),
                bbox,
                confidence: 1.0,
            })
            .collect()
    })
}

fn region() -> BBox {
    BBox::raw(5.0, 5.0, 415.0, 415.0)
}

fn tokens_for(cells: &[CellBox]) -> Vec<Token> {
    cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (cx, cy) = c.bbox.center();
            Token {
                id: format!("w{i}"),
                bbox: BBox::raw(cx - 1.0, cy - 1.0, cx + 1.0, cy + 1.0),
                text: format!("t{i}"),
            }
        })
        .collect()
}

fn lcg_shuffle<T>(v: &mut [T], mut s: u64) {
    for i in (1..v.len()).rev() {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        v.swap(i, (s >> 33) as usize % (i + 1));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn build_grid_always_tiles(cells in disjoint_boxes()) {
        let mut page = empty_page();
        page.tokens = tokens_for(&cells);
        let g = build_grid("t0", &region(), &cells, &page);
        prop_assert!(g.validate().is_ok(), "{:?}", g.tiling_report());
        let mut ids: Vec<&str> = g.token_ids().collect();
        let n = ids.len();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), n, "token assigned twice");
    }

    #[test]
    fn build_grid_ignores_input_order(cells in disjoint_boxes(), seed in any::<u64>()) {
        let mut page = empty_page();
        page.tokens = tokens_for(&cells);
        let g = build_grid("t0", &region(), &cells, &page);
        let mut shuffled = cells.clone();
        lcg_shuffle(&mut shuffled, seed);
        let mut p2 = page.clone();
        lcg_shuffle(&mut p2.tokens, seed ^ 7);
        prop_assert_eq!(build_grid("t0", &region(), &shuffled, &p2), g);
    }

    #[test]
    fn counts_survive_uniform_scaling(seed in 0u64..5000, s in prop_oneof![Just(0.5), Just(2.0), Just(3.0), Just(0.25)]) {
        let lay = cell_layout(seed, 6, 6);
        let g = build_grid("t0", &lay.region, &lay.cells, &lay.page);
        let cells: Vec<CellBox> = lay.cells.iter().map(|c| CellBox { bbox: c.bbox.scaled(s), ..c.clone() }).collect();
        let mut page = lay.page.clone();
        page.width *= s;
        page.height *= s;
        for t in &mut page.tokens {
            t.bbox = t.bbox.scaled(s);
        }
        let scaled = build_grid("t0", &lay.region.scaled(s), &cells, &page);
        prop_assert_eq!((scaled.n_rows, scaled.n_cols), (g.n_rows, g.n_cols));
    }

    #[test]
    fn html_agrees_across_formats(seed in 0u64..5000) {
        let lay = cell_layout(seed, 6, 6);
        let g = build_grid("t0", &lay.region, &lay.cells, &lay.page);
        let back = from_annotation(&g.export()).unwrap();
        prop_assert_eq!(to_html(&back), to_html(&g));
        prop_assert_eq!(back.export(), g.export());
    }

    #[test]
    fn cluster_axis_matches_closure(iv in prop::collection::vec((0u32..200, 1u32..30), 1..12)) {
        // Disjoint-or-nested intervals on a coarse lattice: each interval
        // snaps to a multiple of 40, so closure components are the slots.
        let intervals: Vec<(f64, f64)> = iv
            .iter()
            .map(|(a, w)| {
                let slot = (a / 40) as f64 * 40.0;
                (slot + (*w % 5) as f64, slot + 30.0 - (*w % 3) as f64)
            })
            .collect();
        let out = cluster_axis(&intervals, 0.5);
        let mut slots: Vec<u32> = iv.iter().map(|(a, _)| a / 40).collect();
        slots.sort();
        slots.dedup();
        prop_assert_eq!(out.bands.len(), slots.len());
        for (i, (a, _)) in iv.iter().enumerate() {
            let want = slots.iter().position(|s| *s == a / 40).unwrap();
            prop_assert_eq!(out.assignment[i].clone(), vec![want]);
        }
    }
}

#[test]
fn fifty_random_grids_round_trip() {
    for seed in 0..50 {
        let lay = cell_layout(seed * 31 + 7, 6, 6);
        let g = build_grid("t0", &lay.region, &lay.cells, &lay.page);
        assert_eq!(from_annotation(&g.export()).unwrap(), g, "seed {seed}");
    }
}
