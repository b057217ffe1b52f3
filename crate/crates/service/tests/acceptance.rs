//! End-to-end acceptance run. Prints one line per criterion and exits
//! non-zero if any fails.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

#[path = "../../net/tests/fd/mod.rs"]
mod fd;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request};
use http_body_util::BodyExt;
use image::RgbImage;
use nuclick_core::metrics::{aji, evaluate as score, object_level, panoptic};
use nuclick_core::morph::{edt, reconstruct, skeletonize};
use nuclick_core::signals::{self, GuideInput};
use nuclick_core::synth::{self, ObjectKind, SynthConfig};
use nuclick_core::{io, morph, BinaryMask, LabelMap};
use nuclick_net::{checkpoint, loss, weight_map, LossOptions, NetworkConfig};
use nuclick_pipeline::eval::skeleton_path;
use nuclick_pipeline::{evaluate, train_on, GuideMode, Segmenter, TrainConfig};
use nuclick_service::{api, ModelRegistry, Session, Workbench};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

type Data = Vec<(RgbImage, LabelMap)>;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradients(r: &mut Report) {
    let t = Instant::now();
    let checks: [(&str, fn() -> f64); 7] = [
        ("conv", fd::conv),
        ("up2", fd::up2),
        ("pool/relu/sigmoid", fd::pool_and_activations),
        ("add/concat", fd::add_and_concat),
        ("batchnorm", fd::batchnorm),
        ("loss", fd::loss_fn),
        ("network", fd::network),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, f) in checks {
        let e = f();
        worst = worst.max(e);
        parts.push(format!("{name} {e:.1e}"));
    }
    let elapsed = t.elapsed();
    r.line(
        "gradient correctness",
        worst < fd::TOL && elapsed < Duration::from_secs(120),
        format!("{} cases each, worst rel err {worst:.2e} (< {:.0e}); {}; {}", fd::CASES, fd::TOL, parts.join(", "), secs(elapsed)),
    );
}

fn morphology(r: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut edt_ok = 0;
    for i in 0..50 {
        let m = oracles::random_mask(&mut rng, 32, 32, 0.4 + 0.5 * (i as f64 / 50.0));
        if edt(&m).unwrap().data() == oracles::edt_brute(&m).as_slice() {
            edt_ok += 1;
        }
    }
    let mut rec_ok = 0;
    for _ in 0..50 {
        let mask = oracles::random_mask(&mut rng, 32, 32, 0.55);
        let marker = oracles::random_mask(&mut rng, 32, 32, 0.01);
        if reconstruct(&marker, &mask).unwrap() == oracles::reconstruct_fixpoint(&marker, &mask) {
            rec_ok += 1;
        }
    }
    let mut skel_ok = 0;
    for i in 0..50 {
        let m = oracles::random_blobs(&mut rng, 40, 40, i % 2 == 1);
        let s = skeletonize(&m);
        if s.is_subset_of(&m) && oracles::topology(&s) == oracles::topology(&m) && oracles::is_thin(&s) {
            skel_ok += 1;
        }
    }
    let elapsed = t.elapsed();
    r.line(
        "morphology oracles",
        edt_ok == 50 && rec_ok == 50 && skel_ok == 50 && elapsed < Duration::from_secs(60),
        format!("edt exact {edt_ok}/50, reconstruct {rec_ok}/50, skeleton topology {skel_ok}/50; {}", secs(elapsed)),
    );
}

fn metrics(r: &mut Report) {
    const TOL: f64 = 1e-9;
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    let mut identical_ok = 0;
    for _ in 0..100 {
        let gt = oracles::random_labels(&mut rng, 16, 16, 5);
        let pred = oracles::perturbed_labels(&mut rng, &gt);
        let p = panoptic(&gt, &pred).unwrap();
        let (dq, sq, pq) = oracles::panoptic_brute(&gt, &pred);
        let o = object_level(&gt, &pred).unwrap();
        let (f1, od, hd) = oracles::object_level_brute(&gt, &pred);
        let diffs = [
            aji(&gt, &pred).unwrap() - oracles::aji_brute(&gt, &pred),
            p.dq - dq,
            p.sq - sq,
            p.pq - pq,
            o.f1 - f1,
            o.dice - od,
            o.hausdorff - hd,
        ];
        worst = diffs.iter().fold(worst, |w, d| w.max(d.abs()));
        let s = score(&gt, &gt).unwrap();
        if (s.dq, s.sq, s.pq, s.aji, s.hausdorff_mean) == (1.0, 1.0, 1.0, 1.0, 0.0) {
            identical_ok += 1;
        }
    }
    let elapsed = t.elapsed();
    r.line(
        "metric oracles",
        worst < TOL && identical_ok == 100 && elapsed < Duration::from_secs(60),
        format!("100 pairs, worst |diff| {worst:.1e} (< 1e-9); identical maps (1,1,1)/1/0 in {identical_ok}/100; {}", secs(elapsed)),
    );
}

fn row_masks(n: usize, target: usize, other: usize) -> (BinaryMask, BinaryMask) {
    let g = BinaryMask::from_fn(n, 1, |x, _| x < target);
    let o = BinaryMask::from_fn(n, 1, |x, _| x >= target && x < target + other);
    (g, o)
}

fn loss_values(r: &mut Report) {
    // ratio -> (weight on G, weight on G~)
    let mut levels_ok = true;
    for (target, other, wg, wo) in [(100, 0, 2.0, 1.0), (100, 50, 2.0, 2.0), (100, 300, 10.0, 4.0)] {
        let (g, o) = row_masks(500, target, other);
        let w = weight_map(&g, &o).unwrap();
        levels_ok &= w.data()[..target].iter().all(|&v| v == wg);
        levels_ok &= w.data()[target..target + other].iter().all(|&v| v == wo);
        levels_ok &= w.data()[target + other..].iter().all(|&v| v == 1.0);
    }
    let (g, o) = row_masks(4, 2, 0);
    let w = weight_map(&g, &o).unwrap();
    let (v, _) = loss(&[0.5f64; 4], &[1.0, 1.0, 0.0, 0.0], w.data(), LossOptions::default()).unwrap();
    let eps = 1e-6;
    let dice = 1.0 - (0.5 * 2.0 + eps) / (2.0 + 2.0 + eps);
    let ce = (2.0 + 2.0 + 1.0 + 1.0) * std::f64::consts::LN_2 / 4.0;
    let err = (v.dice - dice).abs().max((v.ce - ce).abs()).max((v.total() - dice - ce).abs());
    r.line(
        "loss values",
        levels_ok && err < 1e-6,
        format!("weight-map levels for ratios 0/0.5/3 exact: {levels_ok}; hand case total {:.7} vs {:.7}, err {err:.1e}", v.total(), dice + ce),
    );
}

fn nuclei(seed: u64, n: usize, touching: Option<f64>) -> Data {
    (0..n)
        .map(|i| {
            let mut cfg = SynthConfig::nuclei(64, 64, seed * 1000 + i as u64);
            if let Some(t) = touching {
                cfg.touching_prob = t;
            }
            synth::generate(&cfg).unwrap()
        })
        .collect()
}

fn train(data: &Data, cfg: &TrainConfig) -> (Segmenter, Duration) {
    let t = Instant::now();
    let out = train_on(data, cfg, |_, _| Ok(())).unwrap();
    (Segmenter::new(out.net), t.elapsed())
}

/// Number of 8-adjacent object pairs over all images.
fn touching_pairs(data: &Data) -> usize {
    data.iter()
        .map(|(_, labels)| {
            let mut n = 0;
            let ids = labels.labels();
            for &a in &ids {
                let grown = morph::dilate(&labels.instance(a));
                n += ids.iter().filter(|&&b| b > a && grown.intersects(&labels.instance(b))).count();
            }
            n
        })
        .sum()
}

fn desk_scale(r: &mut Report) -> Segmenter {
    let train_set = nuclei(1, 200, None);
    let val = nuclei(2, 50, None);
    let cfg = TrainConfig::default();
    let (seg, took) = train(&train_set, &cfg);
    let centroid = evaluate(&seg, &val, GuideMode::GtCentroid, 0).unwrap();
    r.line(
        "desk-scale training",
        centroid.aji >= 0.75 && centroid.pq >= 0.70 && took <= Duration::from_secs(30 * 60),
        format!(
            "depth {} width {}, 200 images, {} epochs in {}; held-out gt-centroid AJI {:.4} (>= 0.75), PQ {:.4} (>= 0.70)",
            cfg.network.depth,
            cfg.network.base_width,
            cfg.epochs,
            secs(took),
            centroid.aji,
            centroid.pq
        ),
    );

    let exact = evaluate(&seg, &val, GuideMode::Jitter(0.0), 0).unwrap();
    let jitter = evaluate(&seg, &val, GuideMode::Jitter(3.0), 0).unwrap();
    r.line(
        "jitter robustness",
        jitter.aji >= exact.aji - 0.03,
        format!("AJI sigma=0 {:.4}, sigma=3 {:.4}, change {:+.4} (>= -0.03)", exact.aji, jitter.aji, jitter.aji - exact.aji),
    );

    let touching = nuclei(3, 50, Some(0.9));
    let ablated_cfg = TrainConfig {
        network: NetworkConfig {
            use_exclusion: false,
            ..cfg.network.clone()
        },
        ..cfg
    };
    let (ablated, took) = train(&train_set, &ablated_cfg);
    let with = evaluate(&seg, &touching, GuideMode::GtCentroid, 0).unwrap();
    let without = evaluate(&ablated, &touching, GuideMode::GtCentroid, 0).unwrap();
    r.line(
        "exclusion ablation",
        with.aji >= without.aji,
        format!(
            "{} touching pairs in 50 images; AJI with {:.4}, without {:.4}, gap {:+.4} (>= 0); ablated model trained in {}",
            touching_pairs(&touching),
            with.aji,
            without.aji,
            with.aji - without.aji,
            secs(took)
        ),
    );
    seg
}

fn hole_semantics(r: &mut Report) {
    let mut train_cfg = SynthConfig::glands(64, 64, 0);
    train_cfg.lumen_fill_prob = 0.5;
    let data: Data = (0..200).map(|i| synth::generate(&train_cfg.with_seed(5000 + i)).unwrap()).collect();
    let cfg = TrainConfig {
        epochs: 20,
        network: NetworkConfig {
            kind: ObjectKind::Gland,
            ..NetworkConfig::default()
        },
        ..TrainConfig::default()
    };
    let (seg, took) = train(&data, &cfg);

    let mut test_cfg = SynthConfig::glands(64, 64, 0);
    test_cfg.count = (1, 1);
    let (mut included, mut excluded) = (0, 0);
    for i in 0..20 {
        let (img, gt) = synth::generate(&test_cfg.with_seed(9000 + i)).unwrap();
        let gland = gt.instance(gt.labels()[0]);
        let lumen = synth::holes_of(&gland);
        let squiggle = |m: &BinaryMask| GuideInput::Squiggle {
            points: skeleton_path(&signals::gland_inclusion_at(m, 0.0).unwrap()),
        };
        let fraction = |g: GuideInput| {
            let pred = seg.segment_image(&img, &[g]).unwrap().foreground();
            lumen.and(&pred).count() as f64 / lumen.count() as f64
        };
        if fraction(squiggle(&gland.or(&lumen))) >= 0.9 {
            included += 1;
        }
        if fraction(squiggle(&gland)) <= 0.1 {
            excluded += 1;
        }
    }
    r.line(
        "hole semantics",
        included >= 16 && excluded >= 16,
        format!(
            "gland model, {} epochs in {}; lumen-crossing squiggle includes >= 90% of lumen in {included}/20, rim squiggle excludes >= 90% in {excluded}/20 (each >= 16/20)",
            cfg.epochs,
            secs(took)
        ),
    );
}

async fn call(app: &axum::Router, method: Method, uri: &str, body: Vec<u8>) -> (u16, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn service_contract(r: &mut Report, seg: Segmenter) {
    let dir = tempfile::tempdir().unwrap();
    let models = dir.path().join("models");
    std::fs::create_dir_all(&models).unwrap();
    let ckpt = models.join("nuclei.nuck");
    checkpoint::save(seg.net(), &ckpt).unwrap();

    let (img, gt) = synth::generate(&SynthConfig::nuclei(96, 80, 4242)).unwrap();
    let png = io::encode_rgb_png(&img).unwrap();
    let image_path = dir.path().join("image.png");
    std::fs::write(&image_path, &png).unwrap();
    let mut guides: Vec<GuideInput> = gt
        .labels()
        .into_iter()
        .map(|id| GuideInput::click(morph::centroid(&gt, id).unwrap()))
        .collect();
    guides.push(GuideInput::Squiggle {
        points: vec![[5.0, 5.0], [9.0, 7.0], [12.0, 12.0]],
    });
    let guides_path = dir.path().join("guides.json");
    std::fs::write(&guides_path, serde_json::to_vec(&guides).unwrap()).unwrap();
    let out_path = dir.path().join("labels.png");

    let status = std::process::Command::new(env!("CARGO_BIN_EXE_nuclick"))
        .arg("segment")
        .arg("--image")
        .arg(&image_path)
        .arg("--guides")
        .arg(&guides_path)
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--out")
        .arg(&out_path)
        .status()
        .unwrap();
    let cli = std::fs::read(&out_path).unwrap_or_default();

    let sessions = dir.path().join("sessions");
    let bench = Arc::new(Workbench::new(ModelRegistry::scan(&models).unwrap(), Some(sessions.clone())).unwrap());
    let app = api::router(bench.clone());
    let rt = tokio::runtime::Runtime::new().unwrap();
    let (http, session_id, codes) = rt.block_on(async {
        let mut codes = Vec::new();
        let (c, body) = call(&app, Method::POST, "/api/sessions", br#"{"model":"nuclei.nuck"}"#.to_vec()).await;
        codes.push(c);
        let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
        let id = v["session_id"].as_str().unwrap().to_owned();
        codes.push(call(&app, Method::PUT, &format!("/api/sessions/{id}/image"), png.clone()).await.0);
        for g in &guides {
            codes.push(call(&app, Method::POST, &format!("/api/sessions/{id}/objects"), serde_json::to_vec(g).unwrap()).await.0);
        }
        let (c, labels) = call(&app, Method::GET, &format!("/api/sessions/{id}/labelmap"), Vec::new()).await;
        codes.push(c);
        (labels, id, codes)
    });
    let http_ok = codes.iter().all(|c| (200..300).contains(c));
    let objects = io::decode_labels_png(&http).map(|l| l.labels().len()).unwrap_or(0);
    r.line(
        "service contract: CLI vs HTTP",
        status.success() && http_ok && !cli.is_empty() && cli == http,
        format!(
            "{} guides, {objects} objects; CLI {status}, HTTP statuses ok: {http_ok}; label PNGs {} bytes vs {} bytes, identical: {}",
            guides.len(),
            cli.len(),
            http.len(),
            cli == http
        ),
    );

    // Replay: in memory from the live log, and from disk in a fresh workbench.
    let live = bench.session(&session_id).unwrap();
    let mut live = live.lock().unwrap();
    live.revise(2, guides[0].clone(), None).unwrap();
    live.delete(1, None).unwrap();
    live.undo(bench.registry()).unwrap();
    let registry = ModelRegistry::scan(&models).unwrap();
    let replayed = Session::replay(live.events(), live.blobs().clone(), &registry).unwrap();
    let reloaded = Workbench::new(registry, Some(sessions)).unwrap();
    let reloaded = reloaded.session(&session_id).unwrap();
    let reloaded = reloaded.lock().unwrap();
    let same = |s: &Session| s.state() == live.state() && s.label_map_png().unwrap() == live.label_map_png().unwrap();
    r.line(
        "service contract: event-log replay",
        same(&replayed) && same(&reloaded),
        format!(
            "{} events, revision {}; in-memory replay identical: {}, on-disk reload identical: {}",
            live.events().len(),
            live.revision(),
            same(&replayed),
            same(&reloaded)
        ),
    );
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut r = Report { failures: 0 };
    gradients(&mut r);
    morphology(&mut r);
    metrics(&mut r);
    loss_values(&mut r);
    let seg = desk_scale(&mut r);
    hole_semantics(&mut r);
    service_contract(&mut r, seg);
    println!("{} criteria failed; total {}", r.failures, secs(start.elapsed()));
    if r.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
