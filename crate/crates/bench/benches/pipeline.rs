use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use luminocity::assoc::query_bbox;
use luminocity::geokey::encode_latlon;
use luminocity::gridmap::build_height_grid;
use luminocity::ingest::{from_tsv, to_tsv};
use luminocity::render::{animate, composite, render_density, render_height};
use luminocity::{BBox, Colormap, GeoKeyFormat, GridSpec, Query, TableSet};
use luminocity_bench::{city_cloud, records};

fn encode(c: &mut Criterion) {
    let recs = records(&GridSpec::mit_campus(), 10_000, 1);
    let fmt = GeoKeyFormat::default();
    c.bench_function("encode_10k", |b| {
        b.iter(|| {
            for r in &recs {
                black_box(encode_latlon(r.lat, r.lon, fmt).unwrap());
            }
        })
    });
    c.bench_function("tsv_round_trip_10k", |b| {
        b.iter(|| {
            for r in &recs {
                black_box(from_tsv(&to_tsv(r)).unwrap());
            }
        })
    });
}

fn store(c: &mut Criterion) {
    let spec = GridSpec::mit_campus();
    let fmt = GeoKeyFormat::default();
    let recs = records(&spec, 10_000, 2);
    c.bench_function("put_1k", |b| {
        b.iter_batched(
            || tempfile::tempdir().unwrap(),
            |dir| {
                let ts = TableSet::open(dir.path(), fmt).unwrap();
                for r in &recs[..1000] {
                    ts.put_record(r).unwrap();
                }
                ts.flush().unwrap();
            },
            BatchSize::PerIteration,
        )
    });

    let dir = tempfile::tempdir().unwrap();
    let ts = TableSet::open(dir.path(), fmt).unwrap();
    for r in &recs {
        ts.put_record(r).unwrap();
    }
    let snap = ts.snapshot();
    let small = Query::bbox(BBox::new(42.352, 42.354, -71.096, -71.093).unwrap());
    let whole = Query::bbox(spec.bbox);
    let keyword = Query::bbox(spec.bbox).keyword("snow");
    c.bench_function("query_small_box", |b| b.iter(|| black_box(query_bbox(&snap, &small, fmt).unwrap())));
    c.bench_function("query_campus", |b| b.iter(|| black_box(query_bbox(&snap, &whole, fmt).unwrap())));
    c.bench_function("query_campus_keyword", |b| b.iter(|| black_box(query_bbox(&snap, &keyword, fmt).unwrap())));
}

fn render(c: &mut Criterion) {
    let spec = GridSpec::mit_campus();
    let cloud = city_cloud(&spec, 40, 3);
    c.bench_function("height_grid_252k_points", |b| b.iter(|| black_box(build_height_grid(&cloud, &spec))));

    let hg = build_height_grid(&cloud, &spec);
    let recs = records(&spec, 10_000, 4);
    let cmap = Colormap::default();
    c.bench_function("render_height", |b| b.iter(|| black_box(render_height(&hg, &cmap))));
    c.bench_function("render_density_10k", |b| b.iter(|| black_box(render_density(&recs, &spec, &cmap, true))));
    let base = render_height(&hg, &cmap);
    let over = render_density(&recs, &spec, &cmap, true);
    c.bench_function("composite", |b| b.iter(|| black_box(composite(&base, &over, 0.6).unwrap())));
    let (t0, t1) = (1_388_534_400, 1_388_534_400 + 7 * 86_400);
    c.bench_function("animate_24_bins", |b| {
        b.iter(|| black_box(animate(&recs, &spec, t0, t1, 24, &cmap, false).unwrap()))
    });
}

criterion_group!(benches, encode, store, render);
criterion_main!(benches);
