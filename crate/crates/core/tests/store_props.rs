use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use luminocity::geokey::{encode_latlon, GeoKeyFormat};
use luminocity::ingest::{escape_field, TweetRecord};
use luminocity::store::{Cell, EngineOptions, Table, TableSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &["Red", "sox", "MIT", "dome", "coffee", "rain", "the", "big-data", "Boston!"];
const USERS: &[&str] = &["alice", "bob", "c\tarol", "dave\\"];

fn random_record(rng: &mut impl Rng, id_space: u32) -> TweetRecord {
    let n = rng.random_range(0..6);
    let text: Vec<&str> = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
    TweetRecord {
        id: format!("t{:04}", rng.random_range(0..id_space)),
        timestamp: rng.random_range(1_388_534_400..1_388_620_800),
        lat: rng.random_range(42_340..42_370) as f64 / 1000.0,
        lon: rng.random_range(-71_110..-71_080) as f64 / 1000.0,
        user: USERS[rng.random_range(0..USERS.len())].to_owned(),
        text: text.join(" "),
    }
}

fn small_opts() -> EngineOptions {
    EngineOptions { memtable_limit: 200, max_segments: 3, sync_writes: false }
}

/// `Tedge` columns computed without the store's own helpers.
fn expected_columns(rec: &TweetRecord) -> BTreeSet<String> {
    let mut cols = BTreeSet::new();
    let t = chrono::DateTime::from_timestamp(rec.timestamp, 0).unwrap();
    cols.insert(format!("time|{}", t.format("%Y-%m-%dT%H:%MZ")));
    cols.insert(format!("user|{}", escape_field(&rec.user)));
    cols.insert(format!("latlon|{}", encode_latlon(rec.lat, rec.lon, GeoKeyFormat::default()).unwrap()));
    for w in rec.text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        cols.insert(format!("word|{}", w.to_lowercase()));
    }
    cols
}

fn dump(ts: &TableSet) -> Vec<u8> {
    let snap = ts.snapshot();
    let mut out = Vec::new();
    for table in Table::SCHEMA {
        for cell in snap.scan_table(table) {
            out.extend_from_slice(format!("{}\0{}\0{}\0{}\n", table.name(), cell.row, cell.col, cell.val).as_bytes());
        }
    }
    out
}

fn check_consistency(ts: &TableSet, latest: &BTreeMap<String, TweetRecord>) {
    let snap = ts.snapshot();
    let edge: BTreeSet<(String, String)> = snap.scan_table(Table::Edge).map(|c| (c.row, c.col)).collect();
    let transpose: BTreeSet<(String, String)> =
        snap.scan_table(Table::EdgeTranspose).map(|c| (c.col, c.row)).collect();
    assert_eq!(edge, transpose, "transpose mismatch");

    let want_edge: BTreeSet<(String, String)> = latest
        .iter()
        .flat_map(|(id, rec)| expected_columns(rec).into_iter().map(move |c| (id.clone(), c)))
        .collect();
    assert_eq!(edge, want_edge);

    let mut recount: BTreeMap<String, u64> = BTreeMap::new();
    for (_, col) in &edge {
        *recount.entry(col.clone()).or_default() += 1;
    }
    let degrees: BTreeMap<String, u64> = snap
        .scan_table(Table::Degree)
        .map(|c| {
            assert_eq!(c.col, "degree");
            (c.row, c.val.parse().unwrap())
        })
        .collect();
    assert_eq!(degrees, recount, "degree mismatch");

    for (id, rec) in latest {
        assert_eq!(snap.get_text(id).as_deref(), Some(rec.text.as_str()));
        assert_eq!(snap.get(Table::Text, id, "meta|ts"), Some(rec.timestamp.to_string()));
    }
    assert_eq!(snap.record_count(), latest.len());
}

#[test]
fn random_batches_stay_consistent_and_survive_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut latest = BTreeMap::new();
    let before = {
        let ts = TableSet::open_with(dir.path(), GeoKeyFormat::default(), small_opts()).unwrap();
        for round in 0..10 {
            for _ in 0..rng.random_range(20..80) {
                let rec = random_record(&mut rng, 60);
                ts.put_record(&rec).unwrap();
                latest.insert(rec.id.clone(), rec);
            }
            check_consistency(&ts, &latest);
            if round % 4 == 3 {
                ts.compact().unwrap();
            }
        }
        ts.sync().unwrap();
        dump(&ts)
    };
    let ts = TableSet::open_with(dir.path(), GeoKeyFormat::default(), small_opts()).unwrap();
    assert_eq!(dump(&ts), before);
    check_consistency(&ts, &latest);
    assert_eq!(ts.rebuild_degrees().unwrap(), 0);
}

#[test]
fn concurrent_writers_keep_degrees_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ts = Arc::new(TableSet::open_with(dir.path(), GeoKeyFormat::default(), small_opts()).unwrap());
    let handles: Vec<_> = (0..4)
        .map(|t| {
            let ts = Arc::clone(&ts);
            std::thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + t);
                let mut mine = Vec::new();
                for i in 0..100 {
                    let mut rec = random_record(&mut rng, 1000);
                    rec.id = format!("w{t}-{i}");
                    ts.put_record(&rec).unwrap();
                    mine.push(rec);
                }
                mine
            })
        })
        .collect();
    let mut latest = BTreeMap::new();
    for h in handles {
        for rec in h.join().unwrap() {
            latest.insert(rec.id.clone(), rec);
        }
    }
    check_consistency(&ts, &latest);
}

#[test]
fn snapshot_ignores_later_writes() {
    let dir = tempfile::tempdir().unwrap();
    let ts = TableSet::open_with(dir.path(), GeoKeyFormat::default(), small_opts()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        ts.put_record(&random_record(&mut rng, 50)).unwrap();
    }
    let snap = ts.snapshot();
    let frozen: Vec<Cell> = snap.scan_table(Table::Edge).collect();
    let mut iter = snap.scan_table(Table::Edge);
    let first = iter.next().unwrap();
    for _ in 0..300 {
        ts.put_record(&random_record(&mut rng, 500)).unwrap();
    }
    ts.compact().unwrap();
    let rest: Vec<Cell> = std::iter::once(first).chain(iter).collect();
    assert_eq!(rest, frozen);
}

fn key_strategy() -> impl Strategy<Value = String> {
    "[a-d]{1,3}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scan_range_matches_brute_force(
        cells in prop::collection::vec((key_strategy(), key_strategy(), "[0-9]{1,2}"), 0..150),
        start in key_strategy(), end in key_strategy(),
        flush_at in 0usize..150,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let ts = TableSet::open_with(dir.path(), GeoKeyFormat::default(), small_opts()).unwrap();
        let mut model = BTreeMap::new();
        for (i, (r, c, v)) in cells.iter().enumerate() {
            if i == flush_at {
                ts.flush().unwrap();
            }
            ts.put_cell(Table::Edge, Cell::new(r.as_str(), c.as_str(), v.as_str())).unwrap();
            model.insert((r.clone(), c.clone()), v.clone());
        }
        let got: Vec<(String, String, String)> =
            ts.scan_range(Table::Edge, &start, &end).into_iter().map(|c| (c.row, c.col, c.val)).collect();
        let want: Vec<(String, String, String)> = model
            .into_iter()
            .filter(|((r, _), _)| start.as_str() <= r.as_str() && r.as_str() <= end.as_str())
            .map(|((r, c), v)| (r, c, v))
            .collect();
        prop_assert!(got.windows(2).all(|w| (&w[0].0, &w[0].1) < (&w[1].0, &w[1].1)));
        prop_assert_eq!(got, want);
    }
}
