mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine;
use proptest::prelude::*;

use dstgen::edges::{EdgeMap, EDGE};
use dstgen::generation::{
    decode_request, encode_request, encode_response, generate_image, DiffusionBackend, ErrorCategory, GenerationClient,
    GenerationError, GenerationParams, GenerationRequest, HttpDiffusion, MockDiffusion, RetryPolicy, RgbImage,
    WireRequest,
};

use common::{dead_url, StubServer};

fn edge_map(w: u32, h: u32) -> EdgeMap {
    let pixels = (0..h).flat_map(|y| (0..w).map(move |x| if x == w / 2 || y == h / 3 { EDGE } else { 0 })).collect();
    EdgeMap::from_raw(w, h, pixels).unwrap()
}

fn request(w: u32, h: u32) -> GenerationRequest {
    GenerationRequest {
        edge_map: edge_map(w, h),
        prompt: "a photo of coffee mug, ceramic".into(),
        seed: 987_654_321,
        params: GenerationParams::default(),
    }
}

fn no_wait(retries: u32) -> RetryPolicy {
    RetryPolicy { retries, base_delay: Duration::from_millis(1), max_delay: Duration::from_millis(5) }
}

fn gray_png_response(w: u32, h: u32) -> String {
    encode_response(&RgbImage { width: w, height: h, pixels: vec![128; (w * h * 3) as usize] }).unwrap()
}

#[test]
fn mock_darkens_edges_over_noise_and_is_repeatable() {
    let req = request(64, 48);
    let mock = MockDiffusion::default();
    let img = generate_image(&mock, &req).unwrap();
    assert_eq!((img.width, img.height, img.pixels.len()), (64, 48, 64 * 48 * 3));
    for y in 0..48 {
        for x in 0..64 {
            let i = ((y * 64 + x) * 3) as usize;
            let px = &img.pixels[i..i + 3];
            if req.edge_map.is_edge(x, y) {
                assert!(px.iter().all(|&c| c < 64), "edge ({x},{y}) = {px:?}");
            } else {
                assert!(px.iter().all(|&c| c >= 96), "bg ({x},{y}) = {px:?}");
            }
        }
    }
    assert_eq!(img, generate_image(&mock, &req).unwrap());
    let mut other = req.clone();
    other.seed += 1;
    assert_ne!(img, generate_image(&mock, &other).unwrap());
    other = req.clone();
    other.prompt.push('!');
    assert_ne!(img, generate_image(&mock, &other).unwrap());
}

#[test]
fn mock_full_size_dimensions() {
    let img = generate_image(&MockDiffusion::default(), &request(512, 512)).unwrap();
    assert_eq!((img.width, img.height), (512, 512));
}

#[test]
fn request_serialization_uses_documented_field_names() {
    let req = request(16, 8);
    let json = encode_request(&req).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["conditioning_scale", "edge_map_png_base64", "guidance_scale", "prompt", "seed", "steps"]);
    assert_eq!(v["steps"], 30);
    assert_eq!(v["guidance_scale"], 7.5);
    let png = base64::engine::general_purpose::STANDARD.decode(v["edge_map_png_base64"].as_str().unwrap()).unwrap();
    assert_eq!(EdgeMap::from_png(&png).unwrap(), req.edge_map);
    assert_eq!(decode_request(&json).unwrap(), req);
}

#[test]
fn http_backend_posts_to_generate() {
    let server = StubServer::start(|req| {
        let wire: WireRequest = serde_json::from_str(&req.body).unwrap();
        assert_eq!(wire.seed, 987_654_321);
        (200, gray_png_response(32, 24))
    });
    let backend = HttpDiffusion::new(&server.url(), Duration::from_secs(5)).unwrap();
    let img = generate_image(&backend, &request(32, 24)).unwrap();
    assert_eq!((img.width, img.height), (32, 24));
    assert!(img.pixels.iter().all(|&p| p == 128));
    let reqs = server.requests.lock().unwrap();
    assert_eq!((reqs[0].method.as_str(), reqs[0].path.as_str()), ("POST", "/generate"));
}

#[test]
fn wrong_dimensions_fail_without_retry() {
    let server = StubServer::start(|_| (200, gray_png_response(16, 16)));
    let backend = HttpDiffusion::new(&server.url(), Duration::from_secs(5)).unwrap();
    let client = GenerationClient::new(Box::new(backend), no_wait(3), 2);
    let failed = client.generate(&request(32, 24)).unwrap_err();
    assert_eq!(failed.category, ErrorCategory::Dimension);
    assert_eq!(failed.attempts, 1);
    assert!(matches!(failed.last_error, GenerationError::DimensionMismatch { got_w: 16, want_w: 32, .. }));
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn server_errors_are_retried_until_success() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = Arc::clone(&calls);
    let server = StubServer::start(move |_| {
        if c.fetch_add(1, Ordering::SeqCst) < 2 {
            (503, "busy".into())
        } else {
            (200, gray_png_response(8, 8))
        }
    });
    let backend = HttpDiffusion::new(&server.url(), Duration::from_secs(5)).unwrap();
    let client = GenerationClient::new(Box::new(backend), no_wait(3), 1);
    assert!(client.generate(&request(8, 8)).is_ok());
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);

    let server = StubServer::start(|_| (500, "boom".into()));
    let backend = HttpDiffusion::new(&server.url(), Duration::from_secs(5)).unwrap();
    let failed = GenerationClient::new(Box::new(backend), no_wait(2), 1).generate(&request(8, 8)).unwrap_err();
    assert_eq!((failed.category, failed.attempts), (ErrorCategory::Http, 3));
    assert!(matches!(failed.last_error, GenerationError::HttpStatus { status: 500, .. }));
}

#[test]
fn client_errors_and_garbage_are_not_retried() {
    for (status, body, cat) in [
        (400, "bad".to_string(), ErrorCategory::Http),
        (200, "{\"image_png_base64\":\"!!!\"}".to_string(), ErrorCategory::Decode),
        (200, "not json".to_string(), ErrorCategory::Decode),
    ] {
        let server = StubServer::start(move |_| (status, body.clone()));
        let backend = HttpDiffusion::new(&server.url(), Duration::from_secs(5)).unwrap();
        let failed = GenerationClient::new(Box::new(backend), no_wait(3), 1).generate(&request(8, 8)).unwrap_err();
        assert_eq!((failed.category, failed.attempts), (cat, 1), "{status}");
        assert_eq!(server.hits.load(Ordering::SeqCst), 1);
    }
}

#[test]
fn unreachable_backend_with_one_retry_is_connect_failure() {
    let backend = HttpDiffusion::new(&dead_url(), Duration::from_secs(5)).unwrap();
    let failed = GenerationClient::new(Box::new(backend), no_wait(1), 1).generate(&request(8, 8)).unwrap_err();
    assert_eq!(failed.category, ErrorCategory::Connect);
    assert_eq!(failed.category.as_str(), "connect");
    assert_eq!(failed.attempts, 2);
}

#[test]
fn slow_backend_times_out() {
    let server = StubServer::start(|_| {
        thread::sleep(Duration::from_millis(1500));
        (200, gray_png_response(8, 8))
    });
    let backend = HttpDiffusion::new(&server.url(), Duration::from_millis(200)).unwrap();
    let started = Instant::now();
    let failed = GenerationClient::new(Box::new(backend), no_wait(0), 1).generate(&request(8, 8)).unwrap_err();
    assert_eq!(failed.category, ErrorCategory::Timeout);
    assert!(started.elapsed() < Duration::from_millis(1400));
}

#[test]
fn invalid_params_are_rejected_before_sending() {
    let server = StubServer::start(|_| (200, gray_png_response(8, 8)));
    let backend = HttpDiffusion::new(&server.url(), Duration::from_secs(5)).unwrap();
    let mut req = request(8, 8);
    req.params.steps = 0;
    assert!(matches!(generate_image(&backend, &req), Err(GenerationError::InvalidRequest(_))));
    req.params = GenerationParams { conditioning_scale: -0.5, ..Default::default() };
    assert!(generate_image(&backend, &req).is_err());
    assert_eq!(server.hits.load(Ordering::SeqCst), 0);
}

struct Counting {
    active: AtomicUsize,
    peak: AtomicUsize,
}

impl DiffusionBackend for Counting {
    fn generate(&self, req: &GenerationRequest) -> Result<RgbImage, GenerationError> {
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(20));
        self.active.fetch_sub(1, Ordering::SeqCst);
        MockDiffusion::default().generate(req)
    }
}

struct Shared(Arc<Counting>);

impl DiffusionBackend for Shared {
    fn generate(&self, req: &GenerationRequest) -> Result<RgbImage, GenerationError> {
        self.0.generate(req)
    }
}

#[test]
fn client_caps_concurrent_requests() {
    let counting = Arc::new(Counting { active: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
    let client = Arc::new(GenerationClient::new(Box::new(Shared(Arc::clone(&counting))), no_wait(0), 3));
    assert_eq!(client.max_in_flight(), 3);
    let req = Arc::new(request(16, 16));
    let handles: Vec<_> = (0..10)
        .map(|_| {
            let (c, r) = (Arc::clone(&client), Arc::clone(&req));
            thread::spawn(move || c.generate(&r).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let peak = counting.peak.load(Ordering::SeqCst);
    assert!((1..=3).contains(&peak), "{peak}");
}

#[test]
fn backoff_doubles_and_caps() {
    let p = RetryPolicy { retries: 5, base_delay: Duration::from_millis(500), max_delay: Duration::from_secs(3) };
    let delays: Vec<u128> = (1..=5).map(|n| p.delay(n).as_millis()).collect();
    assert_eq!(delays, [500, 1000, 2000, 3000, 3000]);
    assert_eq!(RetryPolicy::default().retries, 3);
}

fn any_request() -> impl Strategy<Value = GenerationRequest> {
    (1u32..24, 1u32..24, "[ -~]{0,40}", any::<u64>(), 1u32..200, 0.0..20.0f64, 0.0..2.0f64, any::<u64>()).prop_map(
        |(w, h, prompt, seed, steps, g, c, salt)| {
            let pixels = (0..w * h).map(|i| if (u64::from(i) ^ salt) % 3 == 0 { EDGE } else { 0 }).collect();
            GenerationRequest {
                edge_map: EdgeMap::from_raw(w, h, pixels).unwrap(),
                prompt,
                seed,
                params: GenerationParams { steps, guidance_scale: g, conditioning_scale: c },
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn request_round_trips_field_exact(req in any_request()) {
        let json = encode_request(&req).unwrap();
        prop_assert_eq!(decode_request(&json).unwrap(), req);
    }

    #[test]
    fn mock_is_a_function_of_its_inputs(req in any_request()) {
        let a = MockDiffusion::default().generate(&req).unwrap();
        let b = MockDiffusion::default().generate(&req.clone()).unwrap();
        prop_assert_eq!((a.width, a.height), (req.edge_map.width(), req.edge_map.height()));
        prop_assert_eq!(a, b);
    }
}
