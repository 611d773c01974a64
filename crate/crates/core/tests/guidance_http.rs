mod common;

use axum::extract::Multipart;
use axum::http::StatusCode;
use axum::routing::post;
use axum::Router;
use sketchfill::guidance::{fetch_guidance, GuidanceError, GuidanceRequest, HttpProvider};
use sketchfill::raster::RasterImage;
use std::sync::{Arc, Mutex};
use std::time::Duration;

fn scribble() -> RasterImage {
    RasterImage::gray(24, 16, (0..24 * 16).map(|i| if i % 7 == 0 { 0.0 } else { 1.0 }).collect())
}

type Seen = Arc<Mutex<Vec<(String, String)>>>;

/// Echoes the scribble part back and records the text fields it saw.
fn echo_app(seen: Seen) -> Router {
    Router::new().route(
        "/generate",
        post(move |mut form: Multipart| {
            let seen = seen.clone();
            async move {
                let mut png = Vec::new();
                while let Some(field) = form.next_field().await.unwrap() {
                    let name = field.name().unwrap_or_default().to_string();
                    let bytes = field.bytes().await.unwrap();
                    if name == "scribble" {
                        png = bytes.to_vec();
                    } else {
                        seen.lock().unwrap().push((name, String::from_utf8_lossy(&bytes).into_owned()));
                    }
                }
                ([("content-type", "image/png")], png)
            }
        }),
    )
}

#[test]
fn loopback_returns_scribble_unchanged() {
    let seen: Seen = Default::default();
    let url = common::http::spawn(echo_app(seen.clone()));
    let provider = HttpProvider::new(&url, Duration::from_secs(10)).unwrap();
    let mut req = GuidanceRequest::new("a horse, sparse lines", scribble());
    req.params.insert("steps".into(), 20.0);
    req.params.insert("guidance_scale".into(), 7.5);
    let got = fetch_guidance(&provider, &req).unwrap();
    assert_eq!(got, scribble());
    let seen = seen.lock().unwrap();
    assert!(seen.contains(&("prompt".into(), "a horse, sparse lines".into())));
    let params = &seen.iter().find(|(n, _)| n == "params").unwrap().1;
    let v: serde_json::Value = serde_json::from_str(params).unwrap();
    assert_eq!(v["steps"], 20.0);
}

#[test]
fn wrong_size_reply_is_resampled() {
    let app = Router::new().route(
        "/generate",
        post(|| async { ([("content-type", "image/png")], RasterImage::filled(48, 32, 3, 0.5).to_png().unwrap()) }),
    );
    let url = common::http::spawn(app);
    let provider = HttpProvider::new(&url, Duration::from_secs(10)).unwrap();
    let got = fetch_guidance(&provider, &GuidanceRequest::new("x", scribble())).unwrap();
    assert_eq!((got.width, got.height, got.channels), (24, 16, 3));
}

#[test]
fn failures_are_guidance_unavailable() {
    let app = Router::new()
        .route("/generate", post(|| async { (StatusCode::INTERNAL_SERVER_ERROR, "boom") }));
    let url = common::http::spawn(app);
    let provider = HttpProvider::new(&url, Duration::from_secs(10)).unwrap();
    let err = fetch_guidance(&provider, &GuidanceRequest::new("x", scribble())).unwrap_err();
    assert!(matches!(err, GuidanceError::Unavailable(_)), "{err}");

    let slow = Router::new().route(
        "/generate",
        post(|| async {
            tokio::time::sleep(Duration::from_secs(5)).await;
            "late"
        }),
    );
    let url = common::http::spawn(slow);
    let provider = HttpProvider::new(&url, Duration::from_millis(200)).unwrap();
    let err = fetch_guidance(&provider, &GuidanceRequest::new("x", scribble())).unwrap_err();
    assert!(matches!(err, GuidanceError::Unavailable(_)));

    let closed = HttpProvider::new("http://127.0.0.1:9", Duration::from_millis(200)).unwrap();
    assert!(matches!(
        fetch_guidance(&closed, &GuidanceRequest::new("x", scribble())),
        Err(GuidanceError::Unavailable(_))
    ));
}
