#![allow(dead_code)]

use std::io::Cursor;
use std::net::SocketAddr;
use std::path::Path;

use polescan_core::api::IDEMPOTENCY_HEADER;
use polescan_core::dataset::Provenance;
use polescan_core::tracker::GeoPoint;
use polescan_service::{AppState, Server, ServiceConfig};
use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

pub struct TestServer {
    pub dir: tempfile::TempDir,
    pub base: String,
    pub state: AppState,
    pub http: reqwest::Client,
    _stop: tokio::sync::oneshot::Sender<()>,
}

/// A distinct tiny PNG per seed.
pub fn png(seed: u32, w: u32, h: u32) -> Vec<u8> {
    let img = image::RgbImage::from_fn(w, h, |x, y| {
        image::Rgb([(seed & 0xff) as u8, (seed >> 8) as u8, ((x * 7 + y * 13) % 256) as u8])
    });
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png).unwrap();
    out
}

pub fn write_blob(root: &Path, key: &str, bytes: &[u8]) {
    let path = root.join(key);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, bytes).unwrap();
}

pub async fn start_with(cfg: impl FnOnce(&Path) -> ServiceConfig) -> TestServer {
    let dir = tempfile::tempdir().unwrap();
    let mut config = cfg(dir.path());
    config.bind = SocketAddr::from(([127, 0, 0, 1], 0));
    config.durable = false;
    let server = Server::bind(config).await.unwrap();
    let base = format!("http://{}", server.local_addr());
    let state = server.state().clone();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    tokio::spawn(server.run(async {
        let _ = rx.await;
    }));
    TestServer {
        dir,
        base,
        state,
        http: reqwest::Client::new(),
        _stop: tx,
    }
}

pub async fn start() -> TestServer {
    start_with(ServiceConfig::rooted).await
}

impl TestServer {
    pub fn blob_root(&self) -> std::path::PathBuf {
        self.dir.path().join("blobs")
    }

    /// Ingests `n` images directly through the tracker; every other one is
    /// geo-tagged when `geo` is set.
    pub fn seed_images(&self, n: u32, geo: bool) -> Vec<String> {
        (0..n)
            .map(|i| {
                let key = format!("in/img_{i:04}.png");
                let bytes = png(i + 1, 8, 6);
                write_blob(&self.blob_root(), &key, &bytes);
                let meta = polescan_core::tracker::IngestMeta {
                    provenance: Provenance::Real,
                    geo: (geo && i % 2 == 0).then_some(GeoPoint {
                        lat: 45.0 + f64::from(i) * 0.01,
                        lon: -75.0,
                    }),
                    width: None,
                    height: None,
                };
                self.state
                    .tracker()
                    .ingest_image(self.state.blobs(), &key, meta)
                    .unwrap()
                    .image_id
            })
            .collect()
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn get(&self, path: &str) -> Response {
        self.http.get(self.url(path)).send().await.unwrap()
    }

    pub async fn post<B: Serialize>(&self, path: &str, body: &B, key: Option<&str>) -> Response {
        let mut req = self.http.post(self.url(path)).json(body);
        if let Some(k) = key {
            req = req.header(IDEMPOTENCY_HEADER, k);
        }
        req.send().await.unwrap()
    }

    pub async fn get_json<T: DeserializeOwned>(&self, path: &str) -> T {
        let resp = self.get(path).await;
        assert_eq!(resp.status(), StatusCode::OK, "GET {path}");
        resp.json().await.unwrap()
    }
}

/// Status and the `code` field of an error body.
pub async fn error_code(resp: Response) -> (StatusCode, String) {
    let status = resp.status();
    let body: Value = resp.json().await.unwrap();
    assert!(body.get("message").is_some() && body.get("detail").is_some(), "{body}");
    (status, body["code"].as_str().unwrap_or_default().to_string())
}
