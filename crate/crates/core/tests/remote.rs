#![cfg(feature = "remote")]

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Multipart, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::json;

use vista_core::inpaint::{inpaint_checked, ConceptHandle, InpaintBackend, InpaintRequest, RemoteBackend, RemoteConfig};
use vista_core::scene::{ImageBuffer, MaskMap};
use vista_core::Error;

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Echo,
    WrongSize,
    Drift,
    /// Replies 503 this many times, then echoes.
    Unavailable(usize),
    UnknownConcept,
}

#[derive(Default)]
struct Seen {
    images: usize,
    masks: usize,
    fields: Vec<(String, String)>,
}

struct Stub {
    mode: Mode,
    calls: AtomicUsize,
    seen: Mutex<Seen>,
}

async fn read_form(mut form: Multipart) -> (Option<Vec<u8>>, Seen) {
    let mut seen = Seen::default();
    let mut image = None;
    while let Some(field) = form.next_field().await.unwrap() {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.unwrap().to_vec();
        match name.as_str() {
            "images[]" => seen.images += 1,
            "fused_masks[]" | "fused_mask" => seen.masks += 1,
            "image" => image = Some(bytes),
            _ => seen.fields.push((name, String::from_utf8(bytes).unwrap())),
        }
    }
    (image, seen)
}

fn error(status: StatusCode, kind: &str) -> Response {
    (status, Json(json!({"error": kind, "detail": "stub"}))).into_response()
}

async fn learn(State(stub): State<Arc<Stub>>, form: Multipart) -> Response {
    let (_, seen) = read_form(form).await;
    *stub.seen.lock().unwrap() = seen;
    Json(json!({"concept_id": "concept-1"})).into_response()
}

async fn inpaint(State(stub): State<Arc<Stub>>, form: Multipart) -> Response {
    let call = stub.calls.fetch_add(1, Ordering::SeqCst);
    let (image, seen) = read_form(form).await;
    *stub.seen.lock().unwrap() = seen;
    let image = image.expect("image part");
    let png = |bytes: Vec<u8>| ([("content-type", "image/png")], bytes).into_response();
    match stub.mode {
        Mode::Echo => png(image),
        Mode::Unavailable(n) if call < n => error(StatusCode::SERVICE_UNAVAILABLE, "busy"),
        Mode::Unavailable(_) => png(image),
        Mode::WrongSize => png(ImageBuffer::new(8, 8).encode_png().unwrap()),
        Mode::Drift => {
            let mut img = ImageBuffer::decode_png(&image).unwrap();
            for v in &mut img.data {
                *v = (*v + 0.1).min(1.0);
            }
            png(img.encode_png().unwrap())
        }
        Mode::UnknownConcept => error(StatusCode::NOT_FOUND, "unknown_concept"),
    }
}

/// Serves the stub on an ephemeral port from a background runtime.
fn serve(mode: Mode) -> (SocketAddr, Arc<Stub>) {
    let stub = Arc::new(Stub {
        mode,
        calls: AtomicUsize::new(0),
        seen: Mutex::new(Seen::default()),
    });
    let app = Router::new()
        .route("/concept/learn", post(learn))
        .route("/inpaint", post(inpaint))
        .with_state(stub.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (rx.recv().unwrap(), stub)
}

fn backend(addr: SocketAddr) -> RemoteBackend {
    RemoteBackend::with_config(
        &format!("http://{addr}/"),
        RemoteConfig {
            retries: 3,
            backoff: Duration::from_millis(5),
            timeout: Duration::from_secs(20),
            ..Default::default()
        },
    )
}

fn gradient_image(w: usize, h: usize) -> ImageBuffer {
    let mut img = ImageBuffer::new(w, h);
    for y in 0..h {
        for x in 0..w {
            img.set_pixel(x, y, [x as f64 / w as f64, y as f64 / h as f64, 0.5]);
        }
    }
    img.quantized()
}

fn half_mask(w: usize, h: usize) -> MaskMap {
    let mut m = MaskMap::zeros(w, h);
    for y in 0..h {
        for x in w / 2..w {
            m.data[y * w + x] = 1.0;
        }
    }
    m
}

fn request<'a>(image: &'a ImageBuffer, mask: &'a MaskMap, concept: &'a ConceptHandle) -> InpaintRequest<'a> {
    InpaintRequest {
        view: 0,
        image,
        mask,
        concept,
        strength: 0.8,
        steps: 50,
        seed: 42,
    }
}

#[test]
fn learn_concept_uploads_every_view() {
    let (addr, stub) = serve(Mode::Echo);
    let images = vec![gradient_image(16, 12); 3];
    let masks = vec![half_mask(16, 12); 3];
    let concept = backend(addr).learn_concept(&images, &masks).unwrap();
    assert_eq!(concept.as_str(), "concept-1");
    let seen = stub.seen.lock().unwrap();
    assert_eq!((seen.images, seen.masks), (3, 3));
    assert!(seen.fields.contains(&("steps".into(), "3000".into())));
    assert!(seen.fields.contains(&("token_count".into(), "1".into())));
}

#[test]
fn echo_service_round_trips_exactly() {
    let (addr, stub) = serve(Mode::Echo);
    let image = gradient_image(16, 12);
    let mask = half_mask(16, 12);
    let concept = ConceptHandle::new("concept-1").unwrap();
    let out = inpaint_checked(&backend(addr), &request(&image, &mask, &concept)).unwrap();
    assert_eq!(out, image);
    let seen = stub.seen.lock().unwrap();
    assert_eq!(seen.masks, 1);
    for (k, v) in [("concept_id", "concept-1"), ("strength", "0.8"), ("steps", "50"), ("seed", "42")] {
        assert!(seen.fields.contains(&(k.to_string(), v.to_string())), "missing field {k}");
    }
}

#[test]
fn wrong_dimensions_are_a_contract_violation() {
    let (addr, _) = serve(Mode::WrongSize);
    let image = gradient_image(16, 12);
    let mask = half_mask(16, 12);
    let concept = ConceptHandle::new("c").unwrap();
    let err = inpaint_checked(&backend(addr), &request(&image, &mask, &concept)).unwrap_err();
    assert!(matches!(err, Error::ContractViolation(_)), "{err}");
}

#[test]
fn unmasked_drift_is_a_contract_violation() {
    let (addr, _) = serve(Mode::Drift);
    let image = gradient_image(16, 12);
    let mask = half_mask(16, 12);
    let concept = ConceptHandle::new("c").unwrap();
    let err = inpaint_checked(&backend(addr), &request(&image, &mask, &concept)).unwrap_err();
    assert!(matches!(err, Error::ContractViolation(_)), "{err}");
}

#[test]
fn unavailable_service_is_retried() {
    let (addr, stub) = serve(Mode::Unavailable(2));
    let image = gradient_image(16, 12);
    let mask = half_mask(16, 12);
    let concept = ConceptHandle::new("c").unwrap();
    let out = inpaint_checked(&backend(addr), &request(&image, &mask, &concept)).unwrap();
    assert_eq!(out, image);
    assert_eq!(stub.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_are_bounded() {
    let (addr, stub) = serve(Mode::Unavailable(10));
    let image = gradient_image(8, 8);
    let mask = half_mask(8, 8);
    let concept = ConceptHandle::new("c").unwrap();
    let err = backend(addr).inpaint(&request(&image, &mask, &concept)).unwrap_err();
    assert!(matches!(err, Error::Protocol { status: 503, .. }), "{err}");
    assert_eq!(stub.calls.load(Ordering::SeqCst), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let (addr, stub) = serve(Mode::UnknownConcept);
    let image = gradient_image(8, 8);
    let mask = half_mask(8, 8);
    let concept = ConceptHandle::new("gone").unwrap();
    let err = backend(addr).inpaint(&request(&image, &mask, &concept)).unwrap_err();
    match err {
        Error::Protocol { status, body } => {
            assert_eq!(status, 404);
            assert!(body.contains("unknown_concept"));
        }
        other => panic!("unexpected {other}"),
    }
    assert_eq!(stub.calls.load(Ordering::SeqCst), 1);
}

#[test]
fn unreachable_service_is_a_network_error() {
    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let image = gradient_image(8, 8);
    let mask = half_mask(8, 8);
    let concept = ConceptHandle::new("c").unwrap();
    let err = backend(addr).inpaint(&request(&image, &mask, &concept)).unwrap_err();
    assert!(matches!(err, Error::Network(_)), "{err}");
}
