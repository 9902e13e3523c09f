//! Seeded synthetic inputs shared by the benchmarks.

use luminocity::gridmap::{Point, PointCloud};
use luminocity::{GridSpec, TweetRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &["red", "sox", "dome", "coffee", "snow", "lab", "kendall", "river", "game", "exam"];

/// `n` records scattered over the grid box and a week of timestamps.
pub fn records(spec: &GridSpec, n: usize, seed: u64) -> Vec<TweetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = spec.bbox;
    (0..n)
        .map(|i| {
            let words = rng.random_range(1..6);
            let text: Vec<&str> = (0..words).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
            TweetRecord {
                id: format!("{i:08}"),
                timestamp: 1_388_534_400 + rng.random_range(0..7 * 86_400),
                lat: rng.random_range(b.lat_min..=b.lat_max),
                lon: rng.random_range(b.lon_min..=b.lon_max),
                user: format!("user{}", rng.random_range(0..500)),
                text: text.join(" "),
            }
        })
        .collect()
}

/// Ground plus a block of buildings, `per_cell` points per grid cell.
pub fn city_cloud(spec: &GridSpec, per_cell: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = spec.bbox;
    let (dlat, dlon) = ((b.lat_max - b.lat_min) / spec.nrows as f64, (b.lon_max - b.lon_min) / spec.ncols as f64);
    let mut points = Vec::with_capacity(spec.cell_count() * per_cell);
    for r in 0..spec.nrows {
        for c in 0..spec.ncols {
            let roof = if (r / 8 + c / 8) % 3 == 0 { 5.0 + ((r * 31 + c * 17) % 40) as f64 } else { 0.0 };
            for k in 0..per_cell {
                let z = if roof > 0.0 && k % 2 == 1 { roof } else { 0.0 };
                points.push(Point {
                    lat: b.lat_min + (r as f64 + rng.random_range(0.0..1.0)) * dlat,
                    lon: b.lon_min + (c as f64 + rng.random_range(0.0..1.0)) * dlon,
                    z: z + rng.random_range(-0.2..0.2),
                });
            }
        }
    }
    PointCloud { points }
}
