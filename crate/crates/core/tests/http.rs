//! HTTP backend against an in-process server speaking the model-server
//! protocol.

mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use nerflip_core::augment::{augment, AugmentConfig};
use nerflip_core::gateway::{
    Backend, BackendError, FillRequest, Gateway, GatewayError, HttpBackend, Lexicons, MockBackend, TypeScoreRequest,
};
use nerflip_core::pipeline::{run_pipeline, RunMode};
use nerflip_core::tagger::{NerAnnotateRequest, NerTrainRequest, NerTrainer, StubTrainer};
use serde_json::{json, Value};

type Handler = dyn Fn(&str, Value) -> (u16, String) + Send + Sync;

struct Server {
    url: String,
    log: Arc<Mutex<Vec<(String, Value)>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<(String, Vec<u8>)> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_string();
    let mut len = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        if h == "\r\n" || h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some((path, body))
}

fn serve(handler: Arc<Handler>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Vec::new()));
    let seen = log.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let (handler, seen) = (handler.clone(), seen.clone());
            thread::spawn(move || {
                let Some((path, body)) = read_request(&mut stream) else { return };
                let value: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                seen.lock().unwrap().push((path.clone(), value.clone()));
                let (status, text) = handler(&path, value);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            });
        }
    });
    Server { url, log }
}

/// Serve the mock generator and the stub tagger over HTTP.
fn model_server(mock: MockBackend, tagger: StubTrainer) -> Server {
    serve(Arc::new(move |path, body| {
        let out = match path {
            "/v1/fill" => mock.fill(&serde_json::from_value::<FillRequest>(body).unwrap()).map(|r| json!(r)),
            "/v1/score-types" => mock.score_types(&serde_json::from_value(body).unwrap()).map(|r| json!(r)),
            "/v1/generator/train" => Ok(json!({})),
            "/v1/ner/train" => tagger.train(&serde_json::from_value::<NerTrainRequest>(body).unwrap()).map(|r| json!(r)),
            "/v1/ner/annotate" => tagger.annotate(&serde_json::from_value::<NerAnnotateRequest>(body).unwrap()).map(|r| json!(r)),
            _ => return (404, json!({"code": "not_found", "message": path}).to_string()),
        };
        match out {
            Ok(v) => (200, v.to_string()),
            Err(e) => (400, json!({"code": "bad_request", "message": e.to_string()}).to_string()),
        }
    }))
}

fn client(url: &str) -> HttpBackend {
    HttpBackend::new(url, Duration::from_secs(10)).unwrap()
}

#[test]
fn score_types_wire_format() {
    let server = serve(Arc::new(|_, body| {
        let id = body["request_id"].clone();
        (200, json!({"request_id": id, "types": ["person", "location"]}).to_string())
    }));
    let req = TypeScoreRequest::new("q1", vec!["[ Ann |".into(), "] met [ Paris |".into(), "] .".into()]);
    assert_eq!(req.slot_count(), 2);
    let resp = client(&server.url).score_types(&req).unwrap();
    assert_eq!(resp.types, vec!["person", "location"]);
    assert_eq!(resp.scores, None);
    let log = server.log.lock().unwrap();
    let (path, body) = &log[0];
    assert_eq!(path, "/v1/score-types");
    assert_eq!(body["segments"].as_array().unwrap().len(), 3);
    assert_eq!(body["text"], "[ Ann | <TYPE> ] met [ Paris | <TYPE> ] .");
}

#[test]
fn status_codes_map_to_error_kinds() {
    let server = serve(Arc::new(|path, _| match path {
        "/v1/fill" => (503, "overloaded".into()),
        "/v1/score-types" => (429, String::new()),
        "/v1/ner/train" => (422, json!({"code": "bad_schema", "message": "unknown type"}).to_string()),
        "/v1/ner/annotate" => (200, "{\"annotations\": 3}".into()),
        _ => (404, String::new()),
    }));
    let http = client(&server.url);
    let schema = common::schema();
    let gw = Gateway::new(schema.clone()).with_retries(2, Duration::ZERO);
    let req = TypeScoreRequest::new("q", vec!["[ a |".into(), "]".into()]);
    assert!(matches!(http.score_types(&req), Err(BackendError::Transient(_))));
    match gw.score_types(&req, &http) {
        Err(GatewayError::BackendUnavailable { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
    let train = NerTrainRequest {
        schema: schema.clone(),
        examples: vec![],
        originals: vec![],
        mixup_pairs: vec![],
        mixup: Default::default(),
        init_model: None,
        seed: 1,
    };
    match http.train(&train) {
        Err(BackendError::Fatal(m)) => assert!(m.contains("422 bad_schema: unknown type"), "{m}"),
        other => panic!("{other:?}"),
    }
    let ann = NerAnnotateRequest { model: "m".into(), sentences: vec![] };
    assert!(matches!(http.annotate(&ann), Err(BackendError::Fatal(m)) if m.contains("malformed")));

    let closed = TcpListener::bind("127.0.0.1:0").unwrap();
    let dead = format!("http://{}", closed.local_addr().unwrap());
    drop(closed);
    assert!(matches!(client(&dead).annotate(&ann), Err(BackendError::Transient(_))));
}

#[test]
fn gateway_retries_through_transient_http_failures() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let server = serve(Arc::new(move |_, body| {
        if c.fetch_add(1, Ordering::SeqCst) < 2 {
            return (500, String::new());
        }
        (200, json!({"request_id": body["request_id"], "types": ["person"]}).to_string())
    }));
    let gw = Gateway::new(common::schema()).with_retries(3, Duration::ZERO);
    let req = TypeScoreRequest::new("q", vec!["[ Ann |".into(), "]".into()]);
    let resp = gw.score_types(&req, &client(&server.url)).unwrap();
    assert_eq!(resp.types, vec!["person"]);
    assert_eq!(calls.load(Ordering::SeqCst), 3);
}

#[test]
fn augmentation_over_http_matches_in_process() {
    let train = common::natural_corpus(20, 2, "");
    let mock = || MockBackend::new(common::schema(), Lexicons::from_dataset(&common::dataset(train.clone())));
    let server = model_server(mock(), StubTrainer::new());
    let gw = Gateway::new(common::schema()).with_retries(1, Duration::ZERO);
    let cfg = AugmentConfig::default();
    let local = augment(&train, &cfg, 2, &gw, &mock()).unwrap();
    let remote = augment(&train, &cfg, 2, &gw, &client(&server.url)).unwrap();
    assert_eq!(local.samples, remote.samples);
    assert_eq!(local.report, remote.report);
}

#[test]
fn full_run_over_http_matches_in_process() {
    let inputs = common::small_inputs(3);
    let cfg = common::small_config(3, 1);
    let mock = || MockBackend::new(inputs.schema.clone(), Lexicons::from_dataset(&common::dataset(inputs.train.clone())));

    let local_dir = tempfile::tempdir().unwrap();
    let local = run_pipeline(RunMode::RunStar, &cfg, &inputs, &mock(), &StubTrainer::new(), local_dir.path()).unwrap();

    let server = model_server(mock(), StubTrainer::new());
    let http = client(&server.url);
    let remote_dir = tempfile::tempdir().unwrap();
    let remote = run_pipeline(RunMode::RunStar, &cfg, &inputs, &http, &http, remote_dir.path()).unwrap();

    assert_eq!(local.manifest, remote.manifest);
    let paths: Vec<String> = server.log.lock().unwrap().iter().map(|(p, _)| p.clone()).collect();
    for p in ["/v1/generator/train", "/v1/fill", "/v1/score-types", "/v1/ner/train", "/v1/ner/annotate"] {
        assert!(paths.iter().any(|q| q == p), "{p} never called");
    }
    let log = server.log.lock().unwrap();
    let train_body = &log.iter().find(|(p, _)| p == "/v1/ner/train").unwrap().1;
    for key in ["schema", "examples", "originals", "mixup_pairs", "mixup", "seed"] {
        assert!(train_body.get(key).is_some(), "train request lacks {key}");
    }
    let later = log.iter().filter(|(p, _)| p == "/v1/ner/train").nth(1).unwrap();
    assert!(!later.1["mixup_pairs"].as_array().unwrap().is_empty());
}
