use std::borrow::Cow;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Embedder, EmbeddingVector, ItemKind};
use crate::error::{Error, Result};
use crate::generation::{ClientConfig, GenError, HttpTransport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbedderConfig {
    pub client: ClientConfig,
    pub dim: usize,
    /// Prepend `query: ` / `passage: ` by item kind (e5-family models).
    #[serde(default)]
    pub e5_prefixes: bool,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_batch() -> usize {
    32
}

/// Embeddings-API client: `{"model", "input": [...]}` → `data[i].embedding`.
pub struct RemoteEmbedder {
    transport: HttpTransport,
    model: String,
    dim: usize,
    e5_prefixes: bool,
    batch_size: usize,
    tag: String,
}

impl RemoteEmbedder {
    pub fn new(config: &RemoteEmbedderConfig) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::Config("remote embedder dim must be positive".into()));
        }
        let tag = format!(
            "remote-{}-{}{}",
            config.client.model_name,
            config.dim,
            if config.e5_prefixes { "-e5prefix" } else { "" }
        );
        Ok(RemoteEmbedder {
            transport: HttpTransport::new(&config.client)?,
            model: config.client.model_name.clone(),
            dim: config.dim,
            e5_prefixes: config.e5_prefixes,
            batch_size: config.batch_size.max(1),
            tag,
        })
    }

    fn parse(&self, body: &Value, expected: usize) -> Result<Vec<EmbeddingVector>, GenError> {
        let data = body
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| GenError::Protocol("missing `data` array".into()))?;
        if data.len() != expected {
            return Err(GenError::Protocol(format!(
                "expected {expected} embeddings, got {}",
                data.len()
            )));
        }
        let mut slots: Vec<Option<EmbeddingVector>> = vec![None; expected];
        for (pos, item) in data.iter().enumerate() {
            let idx = item
                .get("index")
                .and_then(Value::as_u64)
                .map(|i| i as usize)
                .unwrap_or(pos);
            let values: Vec<f32> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| GenError::Protocol(format!("data[{pos}].embedding missing")))?
                .iter()
                .map(|v| v.as_f64().map(|f| f as f32))
                .collect::<Option<_>>()
                .ok_or_else(|| GenError::Protocol(format!("data[{pos}].embedding not numeric")))?;
            if values.len() != self.dim {
                return Err(GenError::Protocol(format!(
                    "data[{pos}] has dim {}, declared {}",
                    values.len(),
                    self.dim
                )));
            }
            let v = EmbeddingVector::normalized(values)
                .map_err(|e| GenError::Protocol(format!("data[{pos}]: {e}")))?;
            match slots.get_mut(idx) {
                Some(slot @ None) => *slot = Some(v),
                _ => return Err(GenError::Protocol(format!("bad or repeated index {idx}"))),
            }
        }
        Ok(slots.into_iter().map(|v| v.expect("all slots filled")).collect())
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let body = json!({"model": self.model, "input": texts});
        let response = self
            .transport
            .post_json("embeddings", &body)
            .map_err(Error::Embedder)?;
        self.parse(&response, texts.len()).map_err(Error::Embedder)
    }

    fn prepare<'a>(&self, kind: ItemKind, text: &'a str) -> Cow<'a, str> {
        if !self.e5_prefixes {
            return Cow::Borrowed(text);
        }
        let prefix = if kind.is_query_side() { "query: " } else { "passage: " };
        Cow::Owned(format!("{prefix}{text}"))
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn parallelism(&self) -> usize {
        self.transport.max_in_flight()
    }
}
