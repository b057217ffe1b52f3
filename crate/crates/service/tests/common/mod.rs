#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use nuclick_core::io;
use nuclick_core::synth::{self, SynthConfig};
use nuclick_net::{Network, NetworkConfig};
use nuclick_pipeline::Segmenter;
use nuclick_service::{ModelRegistry, Workbench};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tower::ServiceExt;

pub const MODEL: &str = "tiny.nuck";

pub fn tiny_segmenter() -> Segmenter {
    let cfg = NetworkConfig {
        base_width: 4,
        depth: 2,
        ms_block_levels: vec![1],
        ms_dilations: vec![1, 2],
        patch_size: 32,
        ..NetworkConfig::default()
    };
    Segmenter::new(Network::build(cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap())
}

pub fn registry() -> ModelRegistry {
    let mut r = ModelRegistry::default();
    r.insert(MODEL, tiny_segmenter());
    r
}

pub fn image_png(seed: u64) -> Vec<u8> {
    let (img, _) = synth::generate(&SynthConfig::nuclei(48, 40, seed)).unwrap();
    io::encode_rgb_png(&img).unwrap()
}

pub struct Client {
    pub app: axum::Router,
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|_| panic!("not JSON: {}", String::from_utf8_lossy(&self.body)))
    }
}

impl Client {
    pub fn new(bench: Arc<Workbench>) -> Self {
        Self {
            app: nuclick_service::api::router(bench),
        }
    }

    pub async fn send(&self, method: Method, uri: &str, body: Vec<u8>, headers: &[(&str, &str)]) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let resp = self.app.clone().oneshot(req.body(Body::from(body)).unwrap()).await.unwrap();
        let status = resp.status();
        let content_type = resp
            .headers()
            .get("content-type")
            .map(|v| v.to_str().unwrap().to_owned());
        let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        Reply { status, content_type, body }
    }

    pub async fn get(&self, uri: &str) -> Reply {
        self.send(Method::GET, uri, Vec::new(), &[]).await
    }

    pub async fn post_json(&self, uri: &str, v: Value) -> Reply {
        self.send(Method::POST, uri, serde_json::to_vec(&v).unwrap(), &[]).await
    }

    pub async fn session(&self) -> String {
        let r = self.post_json("/api/sessions", serde_json::json!({ "model": MODEL })).await;
        assert_eq!(r.status, StatusCode::CREATED);
        r.json()["session_id"].as_str().unwrap().to_owned()
    }
}

pub fn click(x: f64, y: f64) -> Value {
    serde_json::json!({ "kind": "click", "points": [[x, y]] })
}
