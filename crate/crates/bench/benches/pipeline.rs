use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use tablesmith_core::corpus::{cell_layout, generate_collection, TemplateSpec};
use tablesmith_core::editor::LabelRecord;
use tablesmith_core::extract::{detect_cells, detect_tables};
use tablesmith_core::finetune::{builtin_bases, extract_page, finetune, LabelledPage};
use tablesmith_core::structure::build_grid;
use tablesmith_core::template::{cluster_templates, embed_page, DEFAULT_CUT};

fn corpus(per_template: usize) -> tablesmith_core::corpus::Corpus {
    let a = TemplateSpec { seed: 1, n_rows: 10, n_cols: 5, ..TemplateSpec::default() };
    let b = TemplateSpec {
        seed: 2,
        n_rows: 8,
        n_cols: 3,
        ruled: true,
        origin_x: 300,
        origin_y: 420,
        ..TemplateSpec::default()
    };
    generate_collection(&[(a, per_template), (b, per_template)]).expect("valid specs")
}

fn extraction(c: &mut Criterion) {
    let model = builtin_bases().remove(0);
    let page = corpus(1).pages.remove(0);
    c.bench_function("detect_tables", |b| b.iter(|| detect_tables(&model, black_box(&page.page))));
    c.bench_function("detect_cells", |b| {
        b.iter(|| detect_cells(&model, black_box(&page.page), &page.region.bbox))
    });
    c.bench_function("extract_page", |b| b.iter(|| extract_page(&model, black_box(&page.page))));
}

fn structure(c: &mut Criterion) {
    let lay = cell_layout(42, 20, 12);
    c.bench_function("build_grid_20x12", |b| {
        b.iter(|| build_grid("t0", &lay.region, black_box(&lay.cells), &lay.page))
    });
}

fn templates(c: &mut Criterion) {
    let model = builtin_bases().remove(0);
    let corpus = corpus(50);
    let embeddings: BTreeMap<_, _> = corpus
        .pages
        .iter()
        .map(|g| (g.page.page_id.clone(), embed_page(&g.page, &detect_tables(&model, &g.page))))
        .collect();
    c.bench_function("cluster_100_pages", |b| b.iter(|| cluster_templates(black_box(&embeddings), DEFAULT_CUT)));
}

fn training(c: &mut Criterion) {
    let base = builtin_bases().remove(0);
    let corpus = corpus(4);
    let records: Vec<LabelRecord> = corpus
        .pages
        .iter()
        .map(|g| {
            LabelRecord::from_extraction(&g.page.page_id, std::slice::from_ref(&g.region), std::slice::from_ref(&g.grid))
                .submit()
                .expect("fresh draft")
        })
        .collect();
    let labels: Vec<LabelledPage> = records
        .iter()
        .zip(&corpus.pages)
        .map(|(record, g)| LabelledPage { record, page: &g.page })
        .collect();
    let mut group = c.benchmark_group("finetune");
    group.sample_size(10);
    group.bench_function("8_pages", |b| {
        b.iter_batched(|| labels.clone(), |l| finetune(&l, &base, "bench.ft1"), BatchSize::SmallInput)
    });
    group.finish();
}

criterion_group!(benches, extraction, structure, templates, training);
criterion_main!(benches);
