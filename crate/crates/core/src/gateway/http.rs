//! OpenAI-compatible chat-completions client with image attachments.
//!
//! Page images ride along as base64 data URLs, resized to the requested
//! resolution budget before encoding. Authentication is a bearer token read
//! from an environment variable named in the backend profile.

use std::io::Cursor;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError, ImageDetail, Part, Role, Usage};
use crate::corpus::{CorpusHandle, PageId};

/// Resolves page ids to image files at send time.
pub trait ImageProvider: Send + Sync {
    fn image_path(&self, page_id: &PageId) -> Option<PathBuf>;
}

impl ImageProvider for CorpusHandle {
    fn image_path(&self, page_id: &PageId) -> Option<PathBuf> {
        self.page(page_id).map(|p| p.image_path.clone())
    }
}

/// No images available; requests with image parts fail.
pub struct NoImages;

impl ImageProvider for NoImages {
    fn image_path(&self, _page_id: &PageId) -> Option<PathBuf> {
        None
    }
}

pub struct HttpBackend {
    base_url: String,
    model: String,
    api_key_env: Option<String>,
    images: Arc<dyn ImageProvider>,
    thumbnail_px: u32,
    full_px: u32,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(
        base_url: &str,
        model: &str,
        api_key_env: Option<&str>,
        images: Arc<dyn ImageProvider>,
    ) -> Self {
        HttpBackend {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key_env: api_key_env.map(str::to_string),
            images,
            thumbnail_px: 512,
            full_px: 2048,
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(180))
                .build(),
        }
    }

    pub fn with_resolution_budgets(mut self, thumbnail_px: u32, full_px: u32) -> Self {
        self.thumbnail_px = thumbnail_px;
        self.full_px = full_px;
        self
    }

    fn auth_header(&self) -> Result<Option<String>, GatewayError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(key) => Ok(Some(format!("Bearer {key}"))),
                Err(_) => Err(GatewayError::AuthFailure(format!(
                    "environment variable `{var}` is not set"
                ))),
            },
        }
    }

    fn post(&self, path: &str, payload: Value) -> Result<Value, GatewayError> {
        let url = format!("{}{path}", self.base_url);
        let mut request = self.agent.post(&url);
        if let Some(auth) = self.auth_header()? {
            request = request.set("Authorization", &auth);
        }
        match request.send_json(payload) {
            Ok(resp) => resp
                .into_json::<Value>()
                .map_err(|e| GatewayError::BadRequest(format!("malformed response body: {e}"))),
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                Err(classify_status(code, &body))
            }
            Err(ureq::Error::Transport(t)) => Err(GatewayError::Transport {
                attempts: 1,
                message: t.to_string(),
            }),
        }
    }

    /// Embeds a text with the profile's model via `/v1/embeddings`.
    pub fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        let payload = json!({ "model": self.model, "input": text });
        let body = self.post("/v1/embeddings", payload)?;
        body["data"][0]["embedding"]
            .as_array()
            .map(|xs| xs.iter().filter_map(Value::as_f64).collect())
            .ok_or_else(|| GatewayError::BadRequest("malformed embedding response".into()))
    }

    fn encode_image(&self, page_id: &PageId, detail: ImageDetail) -> Result<Value, GatewayError> {
        let path = self
            .images
            .image_path(page_id)
            .ok_or_else(|| GatewayError::ImageUnavailable(page_id.clone()))?;
        let img =
            image::open(&path).map_err(|_| GatewayError::ImageUnavailable(page_id.clone()))?;
        let (budget, detail_str) = match detail {
            ImageDetail::Thumbnail => (self.thumbnail_px, "low"),
            ImageDetail::Full => (self.full_px, "high"),
        };
        let img = if img.width().max(img.height()) > budget {
            img.thumbnail(budget, budget)
        } else {
            img
        };
        let mut png = Vec::new();
        img.write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|_| GatewayError::ImageUnavailable(page_id.clone()))?;
        let b64 = base64::engine::general_purpose::STANDARD.encode(&png);
        Ok(json!({
            "type": "image_url",
            "image_url": { "url": format!("data:image/png;base64,{b64}"), "detail": detail_str },
        }))
    }
}

fn classify_status(code: u16, body: &str) -> GatewayError {
    match code {
        401 | 403 => GatewayError::AuthFailure(format!("HTTP {code}: {body}")),
        400 if body.contains("context_length") || body.contains("maximum context") => {
            GatewayError::ContextOverflow(body.to_string())
        }
        408 | 429 | 500..=599 => GatewayError::Transport {
            attempts: 1,
            message: format!("HTTP {code}: {body}"),
        },
        _ => GatewayError::BadRequest(format!("HTTP {code}: {body}")),
    }
}

impl ChatBackend for HttpBackend {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut messages = Vec::with_capacity(req.turns.len() + 1);
        if !req.system_prompt.is_empty() {
            messages.push(json!({ "role": "system", "content": req.system_prompt }));
        }
        for turn in &req.turns {
            let role = match turn.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            let mut content = Vec::with_capacity(turn.parts.len());
            for part in &turn.parts {
                match part {
                    Part::Text { text } => content.push(json!({ "type": "text", "text": text })),
                    Part::Image { page_id, detail } => {
                        content.push(self.encode_image(page_id, *detail)?)
                    }
                }
            }
            messages.push(json!({ "role": role, "content": content }));
        }
        let mut payload = json!({
            "model": self.model,
            "messages": messages,
            "temperature": req.decoding.temperature,
        });
        if let Some(max_tokens) = req.decoding.max_tokens {
            payload["max_tokens"] = json!(max_tokens);
        }

        let body = self.post("/v1/chat/completions", payload)?;
        let text = body["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| GatewayError::BadRequest("completion has no message content".into()))?
            .to_string();
        let usage = Usage {
            prompt_tokens: body["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: body["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(ChatResponse { text, usage })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CallTag, Decoding, Gateway, RetryPolicy, Turn};
    use std::sync::mpsc;

    /// Serves a fixed sequence of (status, body) responses and reports each
    /// request body it saw.
    fn spawn_server(
        responses: Vec<(u16, String)>,
    ) -> (String, mpsc::Receiver<String>, std::thread::JoinHandle<()>) {
        let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", server.server_addr());
        let (tx, rx) = mpsc::channel();
        let handle = std::thread::spawn(move || {
            for (status, body) in responses {
                let mut request = match server.recv() {
                    Ok(r) => r,
                    Err(_) => return,
                };
                let mut seen = String::new();
                request.as_reader().read_to_string(&mut seen).ok();
                let _ = tx.send(seen);
                let response = tiny_http::Response::from_string(body)
                    .with_status_code(tiny_http::StatusCode(status));
                let _ = request.respond(response);
            }
        });
        (addr, rx, handle)
    }

    fn completion_body(text: &str) -> String {
        json!({
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3},
        })
        .to_string()
    }

    fn request_with_text(text: &str) -> ChatRequest {
        ChatRequest {
            tag: CallTag::new("seeker", 0),
            system_prompt: "sys".into(),
            turns: vec![Turn {
                role: Role::User,
                parts: vec![Part::Text { text: text.into() }],
            }],
            decoding: Decoding::default(),
        }
    }

    #[test]
    fn recovers_after_transient_failures() {
        let (addr, _rx, handle) = spawn_server(vec![
            (500, "boom".into()),
            (500, "boom".into()),
            (200, completion_body("hello")),
        ]);
        let backend = HttpBackend::new(&addr, "test-model", None, Arc::new(NoImages));
        let gateway = Gateway::new(
            Arc::new(backend),
            RetryPolicy {
                max_retries: 2,
                base_delay: Duration::from_millis(1),
            },
        );
        let resp = gateway.chat(&request_with_text("q")).unwrap();
        assert_eq!(resp.text, "hello");
        assert_eq!(resp.usage.prompt_tokens, 12);
        handle.join().unwrap();
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let (addr, rx, handle) = spawn_server(vec![(401, "no".into())]);
        let backend = HttpBackend::new(&addr, "test-model", None, Arc::new(NoImages));
        let gateway = Gateway::new(
            Arc::new(backend),
            RetryPolicy {
                max_retries: 5,
                base_delay: Duration::from_millis(1),
            },
        );
        let err = gateway.chat(&request_with_text("q")).unwrap_err();
        assert!(matches!(err, GatewayError::AuthFailure(_)));
        handle.join().unwrap();
        // Exactly one request reached the server.
        assert_eq!(rx.try_iter().count(), 1);
    }

    #[test]
    fn transport_error_reports_attempts() {
        let (addr, _rx, handle) = spawn_server(vec![(500, "a".into()), (500, "b".into())]);
        let backend = HttpBackend::new(&addr, "test-model", None, Arc::new(NoImages));
        let gateway = Gateway::new(
            Arc::new(backend),
            RetryPolicy {
                max_retries: 1,
                base_delay: Duration::from_millis(1),
            },
        );
        let err = gateway.chat(&request_with_text("q")).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 2, .. }));
        handle.join().unwrap();
    }

    #[test]
    fn context_overflow_is_classified() {
        let body = json!({"error": {"code": "context_length_exceeded", "message": "too long"}});
        let (addr, _rx, handle) = spawn_server(vec![(400, body.to_string())]);
        let backend = HttpBackend::new(&addr, "test-model", None, Arc::new(NoImages));
        let gateway = Gateway::new(Arc::new(backend), RetryPolicy::default());
        let err = gateway.chat(&request_with_text("q")).unwrap_err();
        assert!(matches!(err, GatewayError::ContextOverflow(_)));
        handle.join().unwrap();
    }

    #[test]
    fn missing_api_key_env_fails_before_sending() {
        let backend = HttpBackend::new(
            "http://127.0.0.1:1",
            "m",
            Some("DOCRAG_TEST_KEY_THAT_DOES_NOT_EXIST"),
            Arc::new(NoImages),
        );
        let err = backend.send(&request_with_text("q")).unwrap_err();
        assert!(matches!(err, GatewayError::AuthFailure(_)));
    }

    #[test]
    fn images_are_attached_as_data_urls() {
        struct OnePage(PathBuf);
        impl ImageProvider for OnePage {
            fn image_path(&self, page_id: &PageId) -> Option<PathBuf> {
                (page_id.as_str() == "d#1").then(|| self.0.clone())
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let png_path = dir.path().join("p1.png");
        image::RgbImage::from_pixel(640, 480, image::Rgb([10, 20, 30]))
            .save(&png_path)
            .unwrap();

        let (addr, rx, handle) = spawn_server(vec![(200, completion_body("ok"))]);
        let backend = HttpBackend::new(&addr, "m", None, Arc::new(OnePage(png_path)))
            .with_resolution_budgets(64, 2048);
        let req = ChatRequest {
            tag: CallTag::new("inspector", 0),
            system_prompt: String::new(),
            turns: vec![Turn {
                role: Role::User,
                parts: vec![
                    Part::Text {
                        text: "look".into(),
                    },
                    Part::Image {
                        page_id: PageId::from("d#1"),
                        detail: ImageDetail::Thumbnail,
                    },
                ],
            }],
            decoding: Decoding::default(),
        };
        backend.send(&req).unwrap();
        handle.join().unwrap();
        let body: Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        let parts = body["messages"][0]["content"].as_array().unwrap();
        assert_eq!(parts[0]["type"], "text");
        assert_eq!(parts[1]["type"], "image_url");
        let url = parts[1]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
        assert_eq!(parts[1]["image_url"]["detail"], "low");
        // Thumbnail budget resizes the 640x480 source down to 64 long side.
        let b64 = url.trim_start_matches("data:image/png;base64,");
        let png = base64::engine::general_purpose::STANDARD
            .decode(b64)
            .unwrap();
        let img = image::load_from_memory(&png).unwrap();
        assert_eq!(img.width().max(img.height()), 64);

        // Unknown page is an error.
        let bad = ChatRequest {
            turns: vec![Turn {
                role: Role::User,
                parts: vec![Part::Image {
                    page_id: PageId::from("zz#9"),
                    detail: ImageDetail::Full,
                }],
            }],
            ..req
        };
        let err = backend.send(&bad).unwrap_err();
        assert!(matches!(err, GatewayError::ImageUnavailable(_)));
    }
}
