use std::path::Path;
use std::time::Duration;

use futures::StreamExt;
use luminocity::assoc::query_bbox;
use luminocity::ingest::to_feed_line;
use luminocity::render::{default_stopwords, render_height, top_terms};
use luminocity::{BBox, Colormap, GridSpec, HeightGrid, Query, Rgb, SchemeConfig, TweetRecord};
use luminocity_service::{window_records, DataDir, FrameMessage, Server, ServerConfig, ServiceError};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

fn grid() -> GridSpec {
    GridSpec::new(BBox::mit_campus(), 7, 9).unwrap()
}

fn config(dir: &Path) -> ServerConfig {
    ServerConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        data_dir: dir.to_path_buf(),
        grid: grid(),
        frame_period_ms: 10,
        ..Default::default()
    }
}

fn records() -> Vec<TweetRecord> {
    (0..60)
        .map(|i| TweetRecord {
            id: format!("{i:03}"),
            timestamp: 1_388_534_400 + i * 600,
            lat: 42.3495 + (i % 9) as f64 * 0.001,
            lon: -71.0995 + (i % 11) as f64 * 0.001,
            user: format!("u{}", i % 4),
            text: ["red sox win", "snow at MIT", "coffee and the dome", "rain rain"][i as usize % 4].into(),
        })
        .collect()
}

fn seed_heightmap(dir: &Path) -> HeightGrid {
    let spec = grid();
    let heights = (0..spec.cell_count()).map(|i| (i % 13) as f64 * 1.5).collect();
    let hg = HeightGrid { spec, heights };
    DataDir::new(dir).save_heightmap(&hg).unwrap();
    hg
}

fn url(server: &Server, path: &str) -> String {
    format!("http://{}{}", server.local_addr(), path)
}

async fn ingest(server: &Server, recs: &[TweetRecord]) -> Value {
    let body: String = recs.iter().map(|r| to_feed_line(r) + "\n").collect();
    reqwest::Client::new()
        .post(url(server, "/api/ingest"))
        .body(body)
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap()
}

async fn get_json(server: &Server, path: &str) -> (u16, Value) {
    let resp = reqwest::get(url(server, path)).await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap())
}

async fn put_scheme(server: &Server, body: Value) -> (u16, Value) {
    let resp = reqwest::Client::new().put(url(server, "/api/scheme")).json(&body).send().await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap())
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn connect(server: &Server) -> Ws {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{}/api/frames", server.local_addr())).await.unwrap();
    ws
}

async fn next_frame(ws: &mut Ws) -> FrameMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.expect("frame timeout");
        if let Message::Text(text) = msg.unwrap().unwrap() {
            return serde_json::from_str(&text).unwrap();
        }
    }
}

#[tokio::test]
async fn fresh_server_reports_zero_counts() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(config(dir.path())).await.unwrap();
    let (status, stats) = get_json(&server, "/api/stats").await;
    assert_eq!(status, 200);
    for key in ["lines_read", "records_kept", "records_dropped_no_geo", "records_dropped_malformed", "records_stored"] {
        assert_eq!(stats[key], 0, "{key}");
    }
    server.shutdown().await;
}

#[tokio::test]
async fn ingest_counts_only_geotagged_lines() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(config(dir.path())).await.unwrap();
    let body = [
        to_feed_line(&records()[0]),
        r#"{"id":"2","ts":1,"user":"b","text":"no location"}"#.to_owned(),
        "not json".to_owned(),
    ]
    .join("\n");
    let resp: Value = reqwest::Client::new()
        .post(url(&server, "/api/ingest"))
        .body(body)
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(resp["records_kept"], 1);
    let (_, stats) = get_json(&server, "/api/stats").await;
    assert_eq!(stats["records_kept"], 1);
    assert_eq!(stats["lines_read"], 3);
    assert_eq!(stats["records_dropped_no_geo"], 1);
    assert_eq!(stats["records_dropped_malformed"], 1);
    assert_eq!(stats["records_stored"], 1);
    server.shutdown().await;
}

#[tokio::test]
async fn tweets_endpoint_matches_library_query() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(config(dir.path())).await.unwrap();
    ingest(&server, &records()).await;
    let cases: [(&str, Query); 4] = [
        ("", Query::bbox(grid().bbox)),
        ("?lat0=42.351&lat1=42.355&lon0=-71.097&lon1=-71.091", Query::bbox(BBox::new(42.351, 42.355, -71.097, -71.091).unwrap())),
        ("?q=SNOW&from=1388540000", Query::bbox(grid().bbox).between(Some(1_388_540_000), None).keyword("SNOW")),
        (
            "?lat0=42.3&lat1=42.4&lon0=-71.2&lon1=-71.0&from=1388534400&to=1388550000",
            Query::bbox(BBox::new(42.3, 42.4, -71.2, -71.0).unwrap()).between(Some(1_388_534_400), Some(1_388_550_000)),
        ),
    ];
    for (qs, query) in cases {
        let (status, body) = get_json(&server, &format!("/api/tweets{qs}")).await;
        assert_eq!(status, 200, "{qs}");
        let got: Vec<TweetRecord> = serde_json::from_value(body).unwrap();
        let want = query_bbox(&server.store().snapshot(), &query, server.config().key_format).unwrap();
        assert!(!want.is_empty(), "{qs}");
        assert_eq!(got, want, "{qs}");
    }
    let (status, _) = get_json(&server, "/api/tweets?lat0=43&lat1=42").await;
    assert_eq!(status, 400);
    let (status, _) = get_json(&server, "/api/tweets?from=5&to=1").await;
    assert_eq!(status, 400);
    server.shutdown().await;
}

#[tokio::test]
async fn first_frame_after_height_scheme_equals_direct_render() {
    let dir = tempfile::tempdir().unwrap();
    let hg = seed_heightmap(dir.path());
    let server = Server::start(config(dir.path())).await.unwrap();
    let (status, _) = put_scheme(&server, json!({"mode": "density"})).await;
    assert_eq!(status, 200);
    let (status, _) = put_scheme(&server, json!({"mode": "height"})).await;
    assert_eq!(status, 200);
    let mut ws = connect(&server).await;
    let frame = next_frame(&mut ws).await.decode().unwrap();
    let want = render_height(&hg, &Colormap::default());
    assert_eq!((frame.width, frame.height), (9, 7));
    assert_eq!(frame.pixels, want.pixels);

    let (_, body) = get_json(&server, "/api/heightmap").await;
    assert_eq!(body["nrows"], 7);
    assert_eq!(body["ncols"], 9);
    let heights: Vec<f64> = serde_json::from_value(body["heights"].clone()).unwrap();
    assert_eq!(heights, hg.heights);
    let bbox: BBox = serde_json::from_value(body["bbox"].clone()).unwrap();
    assert_eq!(bbox, grid().bbox);
    server.shutdown().await;
}

#[tokio::test]
async fn seq_strictly_increases_for_fast_and_slow_subscribers() {
    let dir = tempfile::tempdir().unwrap();
    seed_heightmap(dir.path());
    let server = Server::start(config(dir.path())).await.unwrap();
    let mut fast = connect(&server).await;
    let mut slow = connect(&server).await;
    let mut last = 0;
    for _ in 0..30 {
        let f = next_frame(&mut fast).await;
        assert!(f.seq > last, "{} after {last}", f.seq);
        last = f.seq;
    }
    // the slow reader lets frames pile up; it may skip but never reorder
    tokio::time::sleep(Duration::from_millis(300)).await;
    let mut last_slow = 0;
    let mut gaps = 0;
    for _ in 0..20 {
        let f = next_frame(&mut slow).await;
        assert!(f.seq > last_slow);
        if last_slow != 0 && f.seq != last_slow + 1 {
            gaps += 1;
        }
        last_slow = f.seq;
    }
    println!("slow subscriber saw {gaps} gaps");
    server.shutdown().await;
}

#[tokio::test]
async fn no_frame_mixes_two_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let hg = seed_heightmap(dir.path());
    let server = Server::start(config(dir.path())).await.unwrap();
    let a = Colormap::new(Rgb(0, 0, 0), Rgb(255, 255, 255));
    let b = Colormap::new(Rgb(200, 10, 10), Rgb(10, 200, 10));
    let want_a = render_height(&hg, &a).pixels;
    let want_b = render_height(&hg, &b).pixels;
    let mut ws = connect(&server).await;
    let reader = tokio::spawn(async move {
        let mut frames = Vec::new();
        for _ in 0..60 {
            frames.push(next_frame(&mut ws).await.decode().unwrap().pixels);
        }
        frames
    });
    for i in 0..40 {
        let cmap = if i % 2 == 0 { a } else { b };
        put_scheme(&server, json!({"mode": "height", "colormap": cmap})).await;
        tokio::time::sleep(Duration::from_millis(7)).await;
    }
    let frames = reader.await.unwrap();
    let default = render_height(&hg, &Colormap::default()).pixels;
    for f in &frames {
        assert!(*f == want_a || *f == want_b || *f == default, "frame mixes schemes");
    }
    server.shutdown().await;
}

#[tokio::test]
async fn scheme_validation_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(config(dir.path())).await.unwrap();
    let (_, initial) = get_json(&server, "/api/scheme").await;
    assert_eq!(serde_json::from_value::<SchemeConfig>(initial).unwrap(), SchemeConfig::default());
    for bad in [json!({"alpha": 2.0}), json!({"mode": "sparkle"}), json!({"bins": 0}), json!({"colour": 1})] {
        let (status, body) = put_scheme(&server, bad.clone()).await;
        assert_eq!(status, 400, "{bad}");
        assert!(body["error"].is_string());
    }
    let (status, _) = put_scheme(&server, json!({"mode": "keyword", "keyword": "snow", "alpha": 0.25})).await;
    assert_eq!(status, 200);
    let (_, now) = get_json(&server, "/api/scheme").await;
    let now: SchemeConfig = serde_json::from_value(now).unwrap();
    assert_eq!(now.keyword, "snow");
    assert_eq!(now.alpha, 0.25);
    server.shutdown().await;
}

#[tokio::test]
async fn topics_match_library_top_terms() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(config(dir.path())).await.unwrap();
    ingest(&server, &records()).await;
    put_scheme(&server, json!({"mode": "topics", "t0": 1_388_540_000})).await;
    let (status, body) = get_json(&server, "/api/topics?k=2").await;
    assert_eq!(status, 200);
    let got: Vec<Vec<(String, u32)>> = serde_json::from_value(body).unwrap();
    let fmt = server.config().key_format;
    let recs = window_records(&server.store().snapshot(), &grid(), fmt, Some(1_388_540_000), None).unwrap();
    let want = top_terms(&recs, &grid(), 2, &default_stopwords());
    assert_eq!(got, want);
    assert!(got.iter().any(|cell| !cell.is_empty()));
    assert!(got.iter().flatten().all(|(t, _)| t != "the" && t != "and"));
    server.shutdown().await;
}

#[tokio::test]
async fn follows_a_growing_feed_file() {
    let dir = tempfile::tempdir().unwrap();
    let feed = dir.path().join("feed.jsonl");
    let recs = records();
    std::fs::write(&feed, recs[..10].iter().map(|r| to_feed_line(r) + "\n").collect::<String>()).unwrap();
    let cfg = ServerConfig { feed: Some(feed.clone()), ..config(&dir.path().join("data")) };
    let server = Server::start(cfg).await.unwrap();
    let mut tail: String = recs[10..20].iter().map(|r| to_feed_line(r) + "\n").collect();
    // a half-written line must wait for its newline
    tail.push_str(&to_feed_line(&recs[20])[..15]);
    use std::io::Write;
    std::fs::OpenOptions::new().append(true).open(&feed).unwrap().write_all(tail.as_bytes()).unwrap();
    let mut stored = 0;
    for _ in 0..50 {
        let (_, stats) = get_json(&server, "/api/stats").await;
        stored = stats["records_stored"].as_u64().unwrap();
        if stored == 20 {
            break;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    assert_eq!(stored, 20);
    let rest = &to_feed_line(&recs[20])[15..];
    std::fs::OpenOptions::new().append(true).open(&feed).unwrap().write_all(format!("{rest}\n").as_bytes()).unwrap();
    for _ in 0..50 {
        let (_, stats) = get_json(&server, "/api/stats").await;
        stored = stats["records_stored"].as_u64().unwrap();
        if stored == 21 {
            break;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    assert_eq!(stored, 21);
    let (_, stats) = get_json(&server, "/api/stats").await;
    assert_eq!(stats["records_dropped_malformed"], 0);
    server.shutdown().await;
}

#[tokio::test]
async fn restart_reloads_store() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(config(dir.path())).await.unwrap();
    ingest(&server, &records()).await;
    let (_, before) = get_json(&server, "/api/tweets").await;
    server.shutdown().await;
    let server = Server::start(config(dir.path())).await.unwrap();
    let (_, after) = get_json(&server, "/api/tweets").await;
    assert_eq!(before, after);
    let (_, stats) = get_json(&server, "/api/stats").await;
    assert_eq!(stats["records_stored"], 60);
    server.shutdown().await;
}

#[tokio::test]
async fn occupied_port_is_a_bind_failure() {
    let dir = tempfile::tempdir().unwrap();
    let first = Server::start(config(dir.path())).await.unwrap();
    let cfg = ServerConfig { listen: first.local_addr(), ..config(&dir.path().join("other")) };
    assert!(matches!(Server::start(cfg).await, Err(ServiceError::Bind { .. })));
    first.shutdown().await;
}
