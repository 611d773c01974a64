use super::backend::PerceptualBackend;
use super::ObjectiveError;
use crate::raster::RasterImage;
use reqwest::blocking::{multipart, Client};
use std::time::Duration;

/// Embedding service reached over HTTP (e.g. a CLIP/LPIPS sidecar).
///
/// `POST {base}/embed` with a PNG body answers a JSON array of numbers;
/// `POST {base}/distance` with multipart parts `a` and `b` (PNG) answers a
/// JSON number. No adjoints, so it is usable for evaluation only.
pub struct RemoteBackend {
    base: String,
    client: Client,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Result<Self, ObjectiveError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ObjectiveError::Backend(e.to_string()))?;
        Ok(Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            client,
        })
    }

    fn png(image: &RasterImage) -> Result<Vec<u8>, ObjectiveError> {
        Ok(image.to_png()?)
    }

    fn send<T: serde::de::DeserializeOwned>(&self, req: reqwest::blocking::RequestBuilder) -> Result<T, ObjectiveError> {
        let resp = req.send().map_err(|e| ObjectiveError::Backend(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ObjectiveError::Backend(format!("embedding service answered {status}")));
        }
        resp.json::<T>().map_err(|e| ObjectiveError::Backend(e.to_string()))
    }
}

impl PerceptualBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn embed(&self, image: &RasterImage) -> Result<Vec<f64>, ObjectiveError> {
        let req = self
            .client
            .post(format!("{}/embed", self.base))
            .header("content-type", "image/png")
            .body(Self::png(image)?);
        self.send(req)
    }

    fn distance(&self, a: &RasterImage, b: &RasterImage) -> Result<f64, ObjectiveError> {
        b.check_dims(a.width, a.height)?;
        let part = |img: &RasterImage, name: &str| -> Result<multipart::Part, ObjectiveError> {
            multipart::Part::bytes(Self::png(img)?)
                .file_name(format!("{name}.png"))
                .mime_str("image/png")
                .map_err(|e| ObjectiveError::Backend(e.to_string()))
        };
        let form = multipart::Form::new().part("a", part(a, "a")?).part("b", part(b, "b")?);
        self.send(self.client.post(format!("{}/distance", self.base)).multipart(form))
    }
}
