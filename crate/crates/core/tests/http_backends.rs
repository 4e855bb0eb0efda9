//! HTTP backend discipline against a counting fake server: request shapes,
//! retry/backoff behavior, and the per-endpoint in-flight bound.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};
use tiny_http::{Response, Server};

use tagsynth::backends::{
    BackendConfig, BackendError, BackendSuiteConfig, Backends, ImageRef, ImageStore, RetryPolicy,
    Stage, CAPTION_TASK_PROMPT,
};
use tagsynth::policy::{render_text_instruction, TemplateRegistry, TextPolicy};
use tagsynth::tags::VisualTags;

/// Shared observation point for the fake server.
#[derive(Default)]
struct ServerState {
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    total_requests: AtomicUsize,
    /// Respond 500 to this many requests before succeeding.
    fail_first: AtomicUsize,
    bodies: Mutex<Vec<Value>>,
    auth_headers: Mutex<Vec<Option<String>>>,
    /// Per-request handling delay, to force overlap.
    delay: Mutex<Duration>,
}

impl ServerState {
    fn bodies(&self) -> Vec<Value> {
        self.bodies.lock().unwrap().clone()
    }
}

/// Spawn a fake JSON endpoint; `respond` builds the reply for each request
/// body. Returns the URL and the observation state.
fn spawn_server(
    workers: usize,
    respond: impl Fn(&Value) -> Value + Send + Sync + 'static,
) -> (String, Arc<ServerState>) {
    let server = Arc::new(Server::http("127.0.0.1:0").expect("bind test server"));
    let url = format!("http://{}", server.server_addr());
    let state = Arc::new(ServerState::default());
    let respond = Arc::new(respond);
    for _ in 0..workers {
        let server = Arc::clone(&server);
        let state = Arc::clone(&state);
        let respond = Arc::clone(&respond);
        std::thread::spawn(move || {
            while let Ok(mut request) = server.recv() {
                let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                state.max_in_flight.fetch_max(now, Ordering::SeqCst);
                state.total_requests.fetch_add(1, Ordering::SeqCst);

                let auth = request
                    .headers()
                    .iter()
                    .find(|h| h.field.equiv("Authorization"))
                    .map(|h| h.value.as_str().to_string());
                state.auth_headers.lock().unwrap().push(auth);

                let mut body = String::new();
                let _ = request.as_reader().read_to_string(&mut body);
                let parsed: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
                state.bodies.lock().unwrap().push(parsed.clone());

                let delay = *state.delay.lock().unwrap();
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }

                let should_fail = state
                    .fail_first
                    .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                    .is_ok();
                let response = if should_fail {
                    Response::from_string("{\"error\":\"injected\"}").with_status_code(500)
                } else {
                    Response::from_string(respond(&parsed).to_string()).with_status_code(200)
                };
                state.in_flight.fetch_sub(1, Ordering::SeqCst);
                let _ = request.respond(response);
            }
        });
    }
    (url, state)
}

fn quick_retry(endpoint: &str, max_in_flight: usize, attempts: u32) -> BackendConfig {
    BackendConfig {
        endpoint: endpoint.to_string(),
        max_in_flight,
        timeout_secs: 5.0,
        retry: RetryPolicy {
            max_attempts: attempts,
            backoff_base_ms: 5,
        },
        ..BackendConfig::default()
    }
}

fn suite(llm_url: &str, other_url: &str) -> BackendSuiteConfig {
    BackendSuiteConfig {
        captioner: quick_retry(other_url, 4, 3),
        extractor_llm: quick_retry(llm_url, 4, 3),
        classifier: quick_retry(other_url, 4, 3),
        generator_llm: quick_retry(llm_url, 4, 3),
        text_to_image: quick_retry(other_url, 4, 3),
        classifier_top_k: 20,
    }
}

fn instruction() -> tagsynth::policy::Instruction {
    let registry = TemplateRegistry::new();
    let tags = VisualTags::from_objects(vec!["sofa", "rug"]);
    render_text_instruction(&registry, &tags, None, &TextPolicy::builtin(1)).unwrap()
}

fn backends_for(config: &BackendSuiteConfig) -> (tempfile::TempDir, Backends) {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(ImageStore::open(dir.path().join("store")).unwrap());
    let backends = Backends::over_http(config, store).unwrap();
    (dir, backends)
}

#[test]
fn chat_payload_carries_greedy_decoding_by_default() {
    let (url, state) = spawn_server(1, |_| {
        json!({"choices": [{"message": {"content": "a fine reply"}}]})
    });
    let (_dir, backends) = backends_for(&suite(&url, &url));
    let reply = backends.generate_text(&instruction()).unwrap();
    assert_eq!(reply, "a fine reply");
    let body = &state.bodies()[0];
    assert_eq!(body["greedy"], json!(true));
    assert_eq!(body["temperature"], json!(0.0));
    assert_eq!(body["messages"][0]["role"], json!("user"));
    assert!(body["messages"][0]["content"]
        .as_str()
        .unwrap()
        .contains("Phrases: sofa, rug."));
}

#[test]
fn captioner_request_carries_task_prompt() {
    let (url, state) = spawn_server(1, |_| json!({"caption": "a room"}));
    let (_dir, backends) = backends_for(&suite(&url, &url));
    let caption = backends.generate_caption(&ImageRef::new("img_1")).unwrap();
    assert_eq!(caption, "a room");
    let body = &state.bodies()[0];
    assert_eq!(body["task_prompt"], json!(CAPTION_TASK_PROMPT));
    assert_eq!(body["image_ref"], json!("img_1"));
}

#[test]
fn t2i_request_carries_guidance_and_steps_defaults() {
    let encoded = base64::engine::general_purpose::STANDARD.encode(b"img-bytes");
    let (url, state) = spawn_server(1, move |_| json!({"image_b64": encoded}));
    let (_dir, backends) = backends_for(&suite(&url, &url));
    let image = backends.generate_image("a cat", 99).unwrap();
    assert!(image.is_store_ref());
    assert_eq!(
        backends.image_store().get(&image).unwrap().unwrap(),
        b"img-bytes"
    );
    let body = &state.bodies()[0];
    assert_eq!(body["guidance_scale"], json!(7.0));
    assert_eq!(body["steps"], json!(28));
    assert_eq!(body["seed"], json!(99));
    assert_eq!(body["prompt"], json!("a cat"));
}

#[test]
fn zero_byte_image_is_degenerate() {
    let (url, _state) = spawn_server(1, |_| json!({"image_b64": ""}));
    let (_dir, backends) = backends_for(&suite(&url, &url));
    let err = backends.generate_image("a cat", 1).unwrap_err();
    assert!(matches!(err, BackendError::DegenerateImage));
}

#[test]
fn bearer_token_rides_on_requests() {
    let (url, state) = spawn_server(1, |_| json!({"caption": "ok"}));
    let mut config = suite(&url, &url);
    config.captioner.auth_token = Some("sekrit".to_string());
    let (_dir, backends) = backends_for(&config);
    backends.generate_caption(&ImageRef::new("img_1")).unwrap();
    let headers = state.auth_headers.lock().unwrap().clone();
    assert_eq!(headers[0].as_deref(), Some("Bearer sekrit"));
}

#[test]
fn empty_caption_from_the_captioner_is_degenerate() {
    let (url, _state) = spawn_server(1, |_| json!({"caption": "  "}));
    let (_dir, backends) = backends_for(&suite(&url, &url));
    let err = backends.generate_caption(&ImageRef::new("img_9")).unwrap_err();
    assert!(matches!(err, BackendError::DegenerateCaption));
    // The tagger surfaces it from its captioner stage.
    let err = backends.tag_image(&ImageRef::new("img_9")).unwrap_err();
    assert_eq!(err.to_string(), "degenerate caption");
}

#[test]
fn transient_failures_retry_until_success() {
    let (url, state) = spawn_server(1, |_| json!({"caption": "recovered"}));
    state.fail_first.store(2, Ordering::SeqCst);
    let (_dir, backends) = backends_for(&suite(&url, &url));
    let caption = backends.generate_caption(&ImageRef::new("img_2")).unwrap();
    assert_eq!(caption, "recovered");
    assert_eq!(state.total_requests.load(Ordering::SeqCst), 3);
    let log = backends.call_log().snapshot();
    assert_eq!(log.len(), 1);
    assert_eq!(log[0].attempts, 3);
    assert!(log[0].ok);
    assert_eq!(log[0].stage, Stage::Captioner);
}

#[test]
fn unreachable_endpoint_errors_after_exact_attempts() {
    // Nothing listens on this port after the listener drops.
    let dead_url = {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}", listener.local_addr().unwrap())
    };
    let (live_url, _) = spawn_server(1, |_| json!({}));
    let mut config = suite(&live_url, &live_url);
    config.captioner = quick_retry(&dead_url, 2, 3);
    let (_dir, backends) = backends_for(&config);
    let err = backends.generate_caption(&ImageRef::new("img_3")).unwrap_err();
    match err {
        BackendError::Transport { attempts, stage, .. } => {
            assert_eq!(attempts, 3);
            assert_eq!(stage, Stage::Captioner);
        }
        other => panic!("expected transport exhaustion, got {other}"),
    }
    let log = backends.call_log().snapshot();
    assert_eq!(log[0].attempts, 3);
    assert!(!log[0].ok);
}

#[test]
fn in_flight_requests_never_exceed_the_bound() {
    let (url, state) = spawn_server(8, |_| json!({"caption": "ok"}));
    *state.delay.lock().unwrap() = Duration::from_millis(25);
    let mut config = suite(&url, &url);
    config.captioner = quick_retry(&url, 3, 1);
    let (_dir, backends) = backends_for(&config);

    std::thread::scope(|scope| {
        for i in 0..12 {
            let backends = &backends;
            scope.spawn(move || {
                backends
                    .generate_caption(&ImageRef::new(format!("img_{i}")))
                    .unwrap();
            });
        }
    });
    assert_eq!(state.total_requests.load(Ordering::SeqCst), 12);
    let peak = state.max_in_flight.load(Ordering::SeqCst);
    assert!(peak <= 3, "saw {peak} concurrent requests, bound is 3");
    assert!(peak >= 2, "test never overlapped requests; not exercising the bound");
}

#[test]
fn extraction_reprompts_once_then_flags() {
    // First reply unparseable, second reply valid.
    let call_count = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&call_count);
    let (url, state) = spawn_server(1, move |_| {
        let n = counter.fetch_add(1, Ordering::SeqCst);
        if n == 0 {
            json!({"choices": [{"message": {"content": "I cannot do that"}}]})
        } else {
            json!({"choices": [{"message": {"content": "attributes: tall\nobjects: tree\nrelations: next to"}}]})
        }
    });
    let (_dir, backends) = backends_for(&suite(&url, &url));
    let out = backends.extract_tags_from_caption("a tall tree").unwrap();
    assert_eq!(out.objects, vec!["tree"]);
    assert_eq!(state.total_requests.load(Ordering::SeqCst), 2);
    let retry_body = &state.bodies()[1];
    assert!(retry_body["messages"][0]["content"]
        .as_str()
        .unwrap()
        .contains("could not be parsed"));

    // Always-unparseable extractor flags the sample after one reprompt.
    let (url2, state2) = spawn_server(1, |_| {
        json!({"choices": [{"message": {"content": "still chatting"}}]})
    });
    let (_dir2, backends2) = backends_for(&suite(&url2, &url2));
    let err = backends2.extract_tags_from_caption("a caption").unwrap_err();
    assert!(matches!(err, BackendError::UnparseableExtraction(_)));
    assert_eq!(state2.total_requests.load(Ordering::SeqCst), 2);
}
