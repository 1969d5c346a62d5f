use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mrxlate_core::data::{write_slice, Domain, Grid};
use mrxlate_core::models::ModelKind;
use mrxlate_study::server::{BlindedItem, CreateResponse, RatingAck, SessionStatus};
use mrxlate_study::{router, AppState, ImagePool, Label, PerceptualReport, StudyItem, StudySession, Store};
use proptest::prelude::*;
use serde_json::{json, Value};
use tower::ServiceExt;

const MODELS: [ModelKind; 5] = ModelKind::ALL;

fn write_pool(dir: &Path, n: usize, size: (usize, usize), offset: f64) {
    for d in Domain::ALL {
        std::fs::create_dir_all(dir.join(d.as_str())).unwrap();
        for i in 0..n {
            let (h, w) = size;
            let px = (0..h * w).map(|k| ((k * 7 + i) % 11) as f64 * 0.1 + offset).collect();
            write_slice(&dir.join(d.as_str()).join(format!("img{i:03}.png")), &Grid::new(w, h, px).unwrap()).unwrap();
        }
    }
}

struct Fixture {
    dir: tempfile::TempDir,
    real: Arc<ImagePool>,
    synthetic: Arc<ImagePool>,
}

impl Fixture {
    fn new(n_real: usize, n_syn: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_pool(&dir.path().join("real"), n_real, (12, 10), 0.0);
        let real = ImagePool::scan(&dir.path().join("real"), None).unwrap();
        let mut synthetic = ImagePool::default();
        for m in MODELS {
            let p = dir.path().join("syn").join(m.as_str());
            write_pool(&p, n_syn, (8, 8), 0.5);
            synthetic.extend(ImagePool::scan(&p, Some(m)).unwrap());
        }
        Fixture {
            dir,
            real: Arc::new(real),
            synthetic: Arc::new(synthetic),
        }
    }

    fn app(&self) -> (Router, Arc<Store>) {
        let store = Arc::new(Store::open(&self.dir.path().join("sessions.jsonl")).unwrap());
        let state = AppState {
            store: store.clone(),
            real_pool: self.real.clone(),
            synthetic_pool: self.synthetic.clone(),
            default_seed: 0,
            display_shape: Some((8, 8)),
        };
        (router(state), store)
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

/// Fails on any key or string value that would reveal truth or provenance.
fn assert_blind(v: &Value) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                assert!(
                    !["truth", "source_model", "image_ref", "judgment"].contains(&k.as_str()),
                    "leaky key {k} in {v}"
                );
                if k == "image_png_base64" {
                    use base64::Engine;
                    let png = base64::engine::general_purpose::STANDARD.decode(x.as_str().unwrap()).unwrap();
                    assert_eq!(&png[1..4], b"PNG");
                    continue;
                }
                assert_blind(x);
            }
        }
        Value::Array(a) => a.iter().for_each(assert_blind),
        Value::String(s) => {
            let s = s.to_ascii_lowercase();
            assert!(s != "real" && s != "synthetic", "leaky value {s}");
            assert!(!MODELS.iter().any(|m| s.contains(m.as_str())), "leaky value {s}");
            assert!(!s.contains("syn") && !s.contains(".png"), "leaky value {s}");
        }
        _ => {}
    }
}

fn rt() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap()
}

#[test]
fn default_session_walkthrough() {
    let fx = Fixture::new(48, 12);
    let (app, store) = fx.app();
    rt().block_on(async {
        let (s, v) = call_json(&app, "POST", "/sessions", Some(json!({"seed": 3}))).await;
        assert_eq!(s, StatusCode::CREATED);
        let created: CreateResponse = serde_json::from_value(v).unwrap();
        assert_eq!(created.total, 168);
        let id = created.session_id;

        let session = store.get(&id).unwrap().lock().unwrap().clone();
        let c = session.counts();
        assert_eq!(
            (
                c[&(Domain::T1, Label::Real)],
                c[&(Domain::T2, Label::Real)],
                c[&(Domain::T1, Label::Synthetic)],
                c[&(Domain::T2, Label::Synthetic)]
            ),
            (48, 48, 36, 36)
        );

        let (s, _) = call_json(&app, "GET", &format!("/sessions/{id}/report"), None).await;
        assert_eq!(s, StatusCode::FORBIDDEN);

        for i in 0..168 {
            let (s, v) = call_json(&app, "GET", &format!("/sessions/{id}/next"), None).await;
            assert_eq!(s, StatusCode::OK);
            assert_blind(&v);
            let item: BlindedItem = serde_json::from_value(v).unwrap();
            assert_eq!((item.position, item.width, item.height), (i, 8, 8));
            let body = json!({"item_id": item.item_id, "judgment": "real", "latency_ms": 250});
            let (s, v) = call_json(&app, "POST", &format!("/sessions/{id}/ratings"), Some(body)).await;
            assert_eq!(s, StatusCode::OK);
            assert_blind(&v);
            let ack: RatingAck = serde_json::from_value(v).unwrap();
            assert_eq!(ack.completed, i == 167);
        }
        let (s, _) = call_json(&app, "GET", &format!("/sessions/{id}/next"), None).await;
        assert_eq!(s, StatusCode::GONE);

        let (s, v) = call_json(&app, "GET", &format!("/sessions/{id}/report"), None).await;
        assert_eq!(s, StatusCode::OK);
        let r: PerceptualReport = serde_json::from_value(v).unwrap();
        assert_eq!(r.rated, 168);
        assert!(r.fooling_rate_by_domain.values().all(|f| f.rate == 1.0 && f.synthetic_rated == 36));
        assert_eq!(r.fooling_rate_by_model.len(), 3);
        assert!(r.fooling_rate_by_model.values().all(|f| f.synthetic_rated == 24));
    });
}

fn item(i: usize, domain: Domain, truth: Label, model: Option<ModelKind>) -> StudyItem {
    StudyItem {
        item_id: format!("item{i}"),
        image_ref: format!("unused{i}.png").into(),
        domain,
        truth,
        source_model: model,
    }
}

#[test]
fn scripted_eight_item_session() {
    use Domain::{T1, T2};
    use Label::{Real as R, Synthetic as S};
    let items = vec![
        item(0, T1, R, None),
        item(1, T1, S, Some(ModelKind::CycleGan)),
        item(2, T2, R, None),
        item(3, T2, S, Some(ModelKind::Unit)),
        item(4, T1, R, None),
        item(5, T2, S, Some(ModelKind::CycleGanS)),
        item(6, T1, S, Some(ModelKind::Unit)),
        item(7, T2, R, None),
    ];
    let script = [R, R, S, R, R, R, S, S];
    let fx = Fixture::new(1, 1);
    let (app, store) = fx.app();
    store
        .insert(StudySession {
            session_id: "scripted".into(),
            seed: 0,
            composition: mrxlate_study::Composition::new(4, 4),
            items,
            cursor: 0,
            created_at_ms: 0,
            completed: false,
            ratings: vec![],
        })
        .unwrap();
    rt().block_on(async {
        for (i, j) in script.iter().enumerate() {
            let body = json!({"item_id": format!("item{i}"), "judgment": j, "latency_ms": 100});
            let (s, _) = call_json(&app, "POST", "/sessions/scripted/ratings", Some(body)).await;
            assert_eq!(s, StatusCode::OK);
        }
        let (_, v) = call_json(&app, "GET", "/sessions/scripted/report", None).await;
        let r: PerceptualReport = serde_json::from_value(v).unwrap();
        // counted by hand from the item table and script above
        let expected = [
            (T1, R, R, 2),
            (T1, R, S, 0),
            (T1, S, R, 1),
            (T1, S, S, 1),
            (T2, R, R, 0),
            (T2, R, S, 2),
            (T2, S, R, 2),
            (T2, S, S, 0),
        ];
        for (d, t, j, n) in expected {
            assert_eq!(r.count(d, t, j), n, "{d} {t} judged {j}");
        }
        assert_eq!(r.fooling_rate_by_domain[&T1].rate, 0.5);
        assert_eq!(r.fooling_rate_by_domain[&T2].rate, 1.0);
        assert_eq!(r.fooling_rate_by_model[&ModelKind::CycleGan].rate, 1.0);
        assert_eq!(r.fooling_rate_by_model[&ModelKind::CycleGanS].rate, 1.0);
        assert_eq!(r.fooling_rate_by_model[&ModelKind::Unit].rate, 0.5);

        let (s, csv) = call(&app, "GET", "/sessions/scripted/report?format=csv", None).await;
        assert_eq!(s, StatusCode::OK);
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv.contains("confusion,T2,,synthetic,real,2,,,"));
        assert!(csv.contains("fooling_model,,unit,,,,2,1,0.5"));
    });
}

#[test]
fn protocol_errors() {
    let fx = Fixture::new(4, 2);
    let (app, _) = fx.app();
    rt().block_on(async {
        let bad = json!({"composition": {"real": 3, "synthetic": 2}});
        let (s, v) = call_json(&app, "POST", "/sessions", Some(bad)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
        assert_eq!(v["code"], "config");
        let big = json!({"composition": {"real": 2, "synthetic": 40}});
        assert_eq!(call_json(&app, "POST", "/sessions", Some(big)).await.0, StatusCode::BAD_REQUEST);

        let rating = json!({"item_id": "x", "judgment": "real", "latency_ms": 1});
        let (s, _) = call_json(&app, "POST", "/sessions/nope/ratings", Some(rating.clone())).await;
        assert_eq!(s, StatusCode::NOT_FOUND);
        assert_eq!(call_json(&app, "GET", "/sessions/nope/next", None).await.0, StatusCode::NOT_FOUND);

        let small = json!({"composition": {"real": 2, "synthetic": 2}, "seed": 1});
        let (_, v) = call_json(&app, "POST", "/sessions", Some(small)).await;
        let id = v["session_id"].as_str().unwrap().to_string();

        let (s, v) = call_json(&app, "GET", &format!("/sessions/{id}/report?partial=true"), None).await;
        assert_eq!(s, StatusCode::OK);
        let r: PerceptualReport = serde_json::from_value(v).unwrap();
        assert_eq!(r.rated, 0);
        assert!(r.confusion.iter().all(|c| c.count == 0));
        assert!(r.fooling_rate_by_domain.values().all(|f| f.rate == 0.0));

        let (_, first) = call_json(&app, "GET", &format!("/sessions/{id}/next"), None).await;
        let (_, again) = call_json(&app, "GET", &format!("/sessions/{id}/next"), None).await;
        assert_eq!(first, again);
        let (s, _) = call_json(&app, "POST", &format!("/sessions/{id}/ratings"), Some(rating)).await;
        assert_eq!(s, StatusCode::CONFLICT);
        let ok = json!({"item_id": first["item_id"], "judgment": "synthetic", "latency_ms": 5});
        assert_eq!(call_json(&app, "POST", &format!("/sessions/{id}/ratings"), Some(ok.clone())).await.0, StatusCode::OK);
        let (s, v) = call_json(&app, "POST", &format!("/sessions/{id}/ratings"), Some(ok)).await;
        assert_eq!(s, StatusCode::CONFLICT);
        assert_eq!(v["code"], "order_violation");
        let (_, v) = call_json(&app, "GET", &format!("/sessions/{id}"), None).await;
        assert_eq!(v["cursor"], 1);

        let (s, _) = call_json(&app, "GET", &format!("/sessions/{id}/report?format=xml&partial=true"), None).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
    });
}

#[test]
fn state_survives_restart() {
    let fx = Fixture::new(4, 2);
    let (id, before, next_item) = {
        let (app, store) = fx.app();
        rt().block_on(async {
            let body = json!({"composition": {"real": 4, "synthetic": 2}, "seed": 8});
            let (_, v) = call_json(&app, "POST", "/sessions", Some(body)).await;
            let id = v["session_id"].as_str().unwrap().to_string();
            for _ in 0..3 {
                let (_, it) = call_json(&app, "GET", &format!("/sessions/{id}/next"), None).await;
                let r = json!({"item_id": it["item_id"], "judgment": "real", "latency_ms": 7});
                call_json(&app, "POST", &format!("/sessions/{id}/ratings"), Some(r)).await;
            }
            let (_, it) = call_json(&app, "GET", &format!("/sessions/{id}/next"), None).await;
            let before = store.get(&id).unwrap().lock().unwrap().clone();
            (id, before, it)
        })
    };
    let (app, store) = fx.app();
    assert_eq!(*store.get(&id).unwrap().lock().unwrap(), before);
    rt().block_on(async {
        let (_, v) = call_json(&app, "GET", &format!("/sessions/{id}"), None).await;
        let st: SessionStatus = serde_json::from_value(v).unwrap();
        assert_eq!((st.cursor, st.total, st.completed), (3, 6, false));
        let (_, it) = call_json(&app, "GET", &format!("/sessions/{id}/next"), None).await;
        assert_eq!(it, next_item);
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Every payload served before completion, including errors, is blind.
    #[test]
    fn no_payload_leaks_before_completion(
        real_half in 0usize..4,
        syn_half in 0usize..4,
        seed in any::<u64>(),
        judgments in prop::collection::vec(any::<bool>(), 16),
    ) {
        prop_assume!(real_half + syn_half > 0);
        let fx = Fixture::new(4, 2);
        let (app, _) = fx.app();
        rt().block_on(async {
            let body = json!({"composition": {"real": 2 * real_half, "synthetic": 2 * syn_half}, "seed": seed});
            let (s, v) = call_json(&app, "POST", "/sessions", Some(body)).await;
            assert_eq!(s, StatusCode::CREATED);
            assert_blind(&v);
            let id = v["session_id"].as_str().unwrap().to_string();
            let total = v["total"].as_u64().unwrap() as usize;
            for i in 0..total {
                let (_, v) = call_json(&app, "GET", &format!("/sessions/{id}"), None).await;
                assert_blind(&v);
                let (_, v) = call_json(&app, "GET", &format!("/sessions/{id}/report"), None).await;
                assert_blind(&v);
                let (_, it) = call_json(&app, "GET", &format!("/sessions/{id}/next"), None).await;
                assert_blind(&it);
                let wrong = json!({"item_id": "0000000000000000", "judgment": "real", "latency_ms": 1});
                let (_, v) = call_json(&app, "POST", &format!("/sessions/{id}/ratings"), Some(wrong)).await;
                assert_blind(&v);
                let j = if judgments[i] { "real" } else { "synthetic" };
                let r = json!({"item_id": it["item_id"], "judgment": j, "latency_ms": 3});
                let (s, v) = call_json(&app, "POST", &format!("/sessions/{id}/ratings"), Some(r)).await;
                assert_eq!(s, StatusCode::OK);
                assert_blind(&v);
            }
            let (s, _) = call_json(&app, "GET", &format!("/sessions/{id}/report"), None).await;
            assert_eq!(s, StatusCode::OK);
        });
    }
}
