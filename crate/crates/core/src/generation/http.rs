//! Client for the completion wire protocol:
//! `POST <endpoint>/v1/completions` with a JSON body, answered by
//! `{"choices": [{"index": 0, "text": "..."}]}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, CompletionBackend, GenerationParams};

/// Environment variable holding an optional bearer token.
pub const TOKEN_ENV: &str = "ISECT_API_TOKEN";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

/// Request body. Field order is the wire order.
#[derive(Debug, Serialize)]
pub struct CompletionRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub n: u32,
    pub seed: u64,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    pub stop: &'a [String],
}

impl<'a> CompletionRequest<'a> {
    pub fn new(model: &'a str, prompt: &'a str, params: &'a GenerationParams) -> Self {
        Self {
            model,
            prompt,
            max_tokens: params.max_tokens,
            temperature: params.temperature,
            top_p: params.top_p,
            n: params.n_completions,
            seed: params.seed,
            stop: &params.stop_sequences,
        }
    }
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    index: Option<u32>,
    text: String,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

/// Removes the prompt when the server echoes it in front of the continuation.
pub fn strip_echo<'a>(prompt_text: &str, text: &'a str) -> &'a str {
    text.strip_prefix(prompt_text).unwrap_or(text)
}

/// Parses a response body into continuation texts, ordered by choice index.
pub fn parse_response(prompt_text: &str, body: &str) -> Result<Vec<String>, BackendError> {
    let parsed: CompletionResponse =
        serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let mut choices: Vec<(u32, String)> = parsed
        .choices
        .into_iter()
        .enumerate()
        .map(|(pos, c)| (c.index.unwrap_or(pos as u32), c.text))
        .collect();
    choices.sort_by_key(|(i, _)| *i);
    Ok(choices
        .into_iter()
        .map(|(_, t)| strip_echo(prompt_text, &t).to_string())
        .collect())
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    model_id: String,
    token: Option<String>,
}

impl HttpBackend {
    /// Token is read from [`TOKEN_ENV`] if set.
    pub fn new(endpoint: &str, model_id: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            agent: config.into(),
            url: format!("{}/v1/completions", endpoint.trim_end_matches('/')),
            model_id: model_id.to_string(),
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

/// One request against `endpoint` for `params.n_completions` choices.
pub fn http_generate(
    endpoint: &str,
    model_id: &str,
    prompt_text: &str,
    params: &GenerationParams,
) -> Result<Vec<String>, BackendError> {
    HttpBackend::new(endpoint, model_id, DEFAULT_TIMEOUT).complete(prompt_text, params)
}

impl CompletionBackend for HttpBackend {
    fn complete(
        &self,
        prompt_text: &str,
        params: &GenerationParams,
    ) -> Result<Vec<String>, BackendError> {
        let body =
            serde_json::to_string(&CompletionRequest::new(&self.model_id, prompt_text, params))
                .map_err(|e| BackendError::Malformed(e.to_string()))?;
        let mut request = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = request
            .send(body.as_str())
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(BackendError::Status(status));
        }
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        parse_response(prompt_text, &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_body_wire_form() {
        let params = GenerationParams {
            n_completions: 2,
            ..GenerationParams::default()
        };
        let body =
            serde_json::to_string(&CompletionRequest::new("gpt2", "A woman", &params)).unwrap();
        assert_eq!(
            body,
            r#"{"model":"gpt2","prompt":"A woman","max_tokens":50,"temperature":1.0,"top_p":0.9,"n":2,"seed":42}"#
        );
        let params = GenerationParams {
            stop_sequences: vec!["\n".into()],
            ..params
        };
        let body =
            serde_json::to_string(&CompletionRequest::new("gpt2", "A woman", &params)).unwrap();
        assert!(body.ends_with(r#""seed":42,"stop":["\n"]}"#));
    }

    #[test]
    fn response_parsing() {
        let out = parse_response(
            "A woman",
            r#"{"choices":[{"index":0,"text":" went home."}]}"#,
        )
        .unwrap();
        assert_eq!(out, [" went home."]);
        let out = parse_response(
            "A woman",
            r#"{"choices":[{"index":0,"text":"A woman went home."}]}"#,
        )
        .unwrap();
        assert_eq!(out, [" went home."]);
        let out = parse_response(
            "A",
            r#"{"id":"x","choices":[{"index":1,"text":" b","logprobs":null},{"index":0,"text":" a"}],"usage":{}}"#,
        )
        .unwrap();
        assert_eq!(out, [" a", " b"]);
        assert!(matches!(
            parse_response("A", r#"{"data":[]}"#),
            Err(BackendError::Malformed(_))
        ));
        assert!(matches!(
            parse_response("A", "not json"),
            Err(BackendError::Malformed(_))
        ));
    }
}
