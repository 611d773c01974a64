use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use super::VlmError;

pub const DEFAULT_MODEL: &str = "gpt-4o";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const LIVE_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text { text: String },
    Image {
        #[serde(with = "b64")]
        png: Vec<u8>,
    },
}

mod b64 {
    use super::{Engine, B64};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        B64.decode(text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmRequest {
    pub preamble: String,
    pub parts: Vec<Part>,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl VlmRequest {
    pub fn new(preamble: impl Into<String>, parts: Vec<Part>, max_tokens: u32) -> Self {
        Self {
            preamble: preamble.into(),
            parts,
            max_tokens,
            temperature: 0.0,
        }
    }

    /// Hex SHA-256 over every field, length-prefixed so part boundaries count.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let mut field = |tag: &[u8], bytes: &[u8]| {
            h.update(tag);
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        field(b"preamble", self.preamble.as_bytes());
        for p in &self.parts {
            match p {
                Part::Text { text } => field(b"text", text.as_bytes()),
                Part::Image { png } => field(b"image", png),
            }
        }
        field(b"max_tokens", &self.max_tokens.to_le_bytes());
        field(b"temperature", &self.temperature.to_bits().to_le_bytes());
        hex::encode(h.finalize())
    }
}

/// One network round trip to a chat-completion service.
pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &VlmRequest) -> Result<String, VlmError>;
}

impl<F> ChatTransport for F
where
    F: Fn(&VlmRequest) -> Result<String, VlmError> + Send + Sync,
{
    fn send(&self, request: &VlmRequest) -> Result<String, VlmError> {
        self(request)
    }
}

/// OpenAI-compatible `chat/completions` endpoint.
pub struct OpenAiTransport {
    url: String,
    api_key: Option<String>,
    model: String,
    client: Client,
}

impl OpenAiTransport {
    /// `endpoint` is either the full completions URL or a base URL to which
    /// `/chat/completions` is appended.
    pub fn new(endpoint: &str, api_key: Option<String>, model: impl Into<String>, timeout: Duration) -> Result<Self, VlmError> {
        let endpoint = endpoint.trim_end_matches('/');
        let url = if endpoint.ends_with("/chat/completions") {
            endpoint.to_string()
        } else {
            format!("{endpoint}/chat/completions")
        };
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| VlmError::Transport(e.to_string()))?;
        Ok(Self {
            url,
            api_key,
            model: model.into(),
            client,
        })
    }

    /// Reads `VLM_ENDPOINT`, `VLM_API_KEY` and optionally `VLM_MODEL`.
    pub fn from_env() -> Result<Self, VlmError> {
        let endpoint = std::env::var("VLM_ENDPOINT").map_err(|_| VlmError::NotConfigured("VLM_ENDPOINT is not set".into()))?;
        let key = std::env::var("VLM_API_KEY").ok().filter(|k| !k.is_empty());
        let model = std::env::var("VLM_MODEL").unwrap_or_else(|_| DEFAULT_MODEL.to_string());
        Self::new(&endpoint, key, model, DEFAULT_TIMEOUT)
    }

    pub fn body(&self, request: &VlmRequest) -> Value {
        let content: Vec<Value> = request
            .parts
            .iter()
            .map(|p| match p {
                Part::Text { text } => json!({"type": "text", "text": text}),
                Part::Image { png } => json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:image/png;base64,{}", B64.encode(png))}
                }),
            })
            .collect();
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.preamble},
                {"role": "user", "content": content},
            ],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        })
    }
}

impl ChatTransport for OpenAiTransport {
    fn send(&self, request: &VlmRequest) -> Result<String, VlmError> {
        let mut req = self.client.post(&self.url).json(&self.body(request));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| VlmError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(VlmError::Transport(format!("{status}: {}", text.chars().take(200).collect::<String>())));
        }
        let v: Value = resp.json().map_err(|e| VlmError::Transport(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| VlmError::Transport("reply has no choices[0].message.content".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub request: VlmRequest,
    pub reply: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Directory of `{digest}.json` fixtures.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn get(&self, digest: &str) -> Result<Option<Fixture>, VlmError> {
        let path = self.path_for(digest);
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| VlmError::Store(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(VlmError::Store(format!("{}: {e}", path.display()))),
        }
    }

    pub fn put(&self, request: &VlmRequest, reply: &str) -> Result<PathBuf, VlmError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| VlmError::Store(format!("{}: {e}", self.dir.display())))?;
        let fixture = Fixture {
            request: request.clone(),
            reply: reply.to_string(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        let path = self.path_for(&request.digest());
        let text = serde_json::to_string_pretty(&fixture).map_err(|e| VlmError::Store(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| VlmError::Store(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VlmMode {
    Live,
    Record,
    Replay,
}

pub struct VlmClient {
    mode: VlmMode,
    transport: Option<Box<dyn ChatTransport>>,
    store: Option<FixtureStore>,
    backoff: Duration,
    lock: Mutex<()>,
}

impl VlmClient {
    pub fn live(transport: impl ChatTransport + 'static) -> Self {
        Self {
            mode: VlmMode::Live,
            transport: Some(Box::new(transport)),
            store: None,
            backoff: Duration::from_millis(500),
            lock: Mutex::new(()),
        }
    }

    pub fn record(transport: impl ChatTransport + 'static, store: FixtureStore) -> Self {
        Self {
            mode: VlmMode::Record,
            store: Some(store),
            ..Self::live(transport)
        }
    }

    /// Never touches the network.
    pub fn replay(store: FixtureStore) -> Self {
        Self {
            mode: VlmMode::Replay,
            transport: None,
            store: Some(store),
            backoff: Duration::ZERO,
            lock: Mutex::new(()),
        }
    }

    /// First retry delay; doubles for each further attempt.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn mode(&self) -> VlmMode {
        self.mode
    }

    pub fn complete(&self, request: &VlmRequest) -> Result<String, VlmError> {
        replay_or_call(self, request)
    }

    fn call_with_retries(&self, request: &VlmRequest) -> Result<String, VlmError> {
        let transport = self
            .transport
            .as_ref()
            .ok_or_else(|| VlmError::NotConfigured("no transport configured".into()))?;
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 0..LIVE_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match transport.send(request) {
                Ok(reply) => return Ok(reply),
                Err(e) => last = e.to_string(),
            }
        }
        Err(VlmError::ClientFailure {
            attempts: LIVE_ATTEMPTS,
            last,
        })
    }
}

/// Serves from the fixture store in Replay mode, otherwise calls the
/// service (persisting the exchange in Record mode).
pub fn replay_or_call(client: &VlmClient, request: &VlmRequest) -> Result<String, VlmError> {
    if request.parts.is_empty() {
        return Err(VlmError::Precondition("request has no user parts".into()));
    }
    let _serial = client.lock.lock().unwrap_or_else(|p| p.into_inner());
    match client.mode {
        VlmMode::Replay => {
            let store = client.store.as_ref().ok_or_else(|| VlmError::NotConfigured("replay without a fixture store".into()))?;
            let digest = request.digest();
            store
                .get(&digest)?
                .map(|f| f.reply)
                .ok_or(VlmError::MissingFixture(digest))
        }
        VlmMode::Live => client.call_with_retries(request),
        VlmMode::Record => {
            let reply = client.call_with_retries(request)?;
            if let Some(store) = &client.store {
                store.put(request, &reply)?;
            }
            Ok(reply)
        }
    }
}
