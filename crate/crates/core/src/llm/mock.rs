use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use regex::Regex;
use serde::Deserialize;

use super::{Backend, ChatRequest, EmbeddingVector, LlmError};

pub const DEFAULT_MOCK_DIM: usize = 64;
pub const DEFAULT_MOCK_SEED: u64 = 0x5eed;

type Responder = Arc<dyn Fn(&ChatRequest) -> Option<String> + Send + Sync>;

/// One scripted response. A rule matches when its tag pattern matches the
/// request tag and every configured content condition holds. Tag patterns are
/// `*`, `prefix*`, `*suffix` or an exact tag.
#[derive(Clone, Deserialize)]
pub struct MockRule {
    #[serde(default = "any_tag")]
    pub tag: String,
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default)]
    pub regex: Option<String>,
    /// Returned text. With `regex`, `$1`/`${name}` expand to capture groups.
    #[serde(default)]
    pub output: String,
    #[serde(skip)]
    compiled: Option<Regex>,
    #[serde(skip)]
    responder: Option<Responder>,
}

fn any_tag() -> String {
    "*".into()
}

impl fmt::Debug for MockRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MockRule")
            .field("tag", &self.tag)
            .field("contains", &self.contains)
            .field("regex", &self.regex)
            .field("output", &self.output)
            .field("responder", &self.responder.is_some())
            .finish()
    }
}

fn tag_matches(pattern: &str, tag: &str) -> bool {
    if pattern == "*" {
        true
    } else if let Some(prefix) = pattern.strip_suffix('*') {
        tag.starts_with(prefix)
    } else if let Some(suffix) = pattern.strip_prefix('*') {
        tag.ends_with(suffix)
    } else {
        pattern == tag
    }
}

impl MockRule {
    pub fn new(tag: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            contains: None,
            regex: None,
            output: output.into(),
            compiled: None,
            responder: None,
        }
    }

    pub fn containing(mut self, needle: impl Into<String>) -> Self {
        self.contains = Some(needle.into());
        self
    }

    /// Panics on an invalid pattern; scripts loaded from files report the
    /// error instead.
    pub fn matching(mut self, pattern: &str) -> Self {
        self.compiled = Some(Regex::new(pattern).expect("valid mock regex"));
        self.regex = Some(pattern.to_string());
        self
    }

    /// A rule computed from the request. Returning `None` falls through to
    /// the next rule.
    pub fn responder(
        tag: impl Into<String>,
        f: impl Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        let mut rule = Self::new(tag, "");
        rule.responder = Some(Arc::new(f));
        rule
    }

    fn compile(&mut self) -> Result<(), LlmError> {
        if let (Some(pattern), None) = (&self.regex, &self.compiled) {
            self.compiled = Some(
                Regex::new(pattern)
                    .map_err(|e| LlmError::Config(format!("bad mock regex `{pattern}`: {e}")))?,
            );
        }
        Ok(())
    }

    fn apply(&self, req: &ChatRequest, text: &str) -> Option<String> {
        if !tag_matches(&self.tag, &req.tag) {
            return None;
        }
        if let Some(needle) = &self.contains {
            if !text.contains(needle.as_str()) {
                return None;
            }
        }
        if let Some(f) = &self.responder {
            return f(req);
        }
        match &self.compiled {
            Some(re) => {
                let caps = re.captures(text)?;
                let mut out = String::new();
                caps.expand(&self.output, &mut out);
                Some(out)
            }
            None => Some(self.output.clone()),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct MockScript {
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

fn default_dim() -> usize {
    DEFAULT_MOCK_DIM
}

fn default_seed() -> u64 {
    DEFAULT_MOCK_SEED
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            embedding_dim: DEFAULT_MOCK_DIM,
            seed: DEFAULT_MOCK_SEED,
            rules: Vec::new(),
        }
    }
}

impl MockScript {
    pub fn from_toml(text: &str) -> Result<Self, LlmError> {
        let mut script: MockScript =
            toml::from_str(text).map_err(|e| LlmError::Config(format!("mock script: {e}")))?;
        if script.embedding_dim == 0 {
            return Err(LlmError::Config("embedding_dim must be positive".into()));
        }
        for rule in &mut script.rules {
            rule.compile()?;
        }
        Ok(script)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn dim(mut self, dim: usize) -> Self {
        self.embedding_dim = dim;
        self
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Deterministic n-gram hashing embedding.
///
/// The text is lowercased, whitespace runs collapse to one space, and the
/// result is padded with a space on each side. Every character trigram is
/// hashed with 64-bit FNV-1a (the seed's eight little-endian bytes first,
/// then the trigram's UTF-8 bytes) and adds 1.0 to bucket `hash % dim`. The
/// vector is then L2-normalized. Counts are non-negative, so any non-empty
/// text yields a non-zero vector.
pub fn hash_embedding(text: &str, dim: usize, seed: u64) -> Result<EmbeddingVector, LlmError> {
    let normalized = text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    if normalized.is_empty() {
        return Err(LlmError::EmptyText);
    }
    let chars: Vec<char> = format!(" {normalized} ").chars().collect();
    let mut values = vec![0.0f64; dim];
    let mut buf = String::new();
    for window in chars.windows(3) {
        buf.clear();
        buf.extend(window);
        let h = fnv1a(seed, buf.as_bytes());
        values[(h % dim as u64) as usize] += 1.0;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut values {
        *v /= norm;
    }
    Ok(EmbeddingVector::new(values))
}

/// Scripted backend: first matching rule wins, a miss is an error.
#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    encoder: String,
    chat_calls: AtomicU64,
    embed_calls: AtomicU64,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        let encoder = format!("mock-{}", script.embedding_dim);
        Self {
            script,
            encoder,
            chat_calls: AtomicU64::new(0),
            embed_calls: AtomicU64::new(0),
        }
    }

    pub fn chat_calls(&self) -> u64 {
        self.chat_calls.load(Ordering::Relaxed)
    }

    pub fn embed_calls(&self) -> u64 {
        self.embed_calls.load(Ordering::Relaxed)
    }
}

impl Backend for MockBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, LlmError> {
        req.validate()?;
        self.chat_calls.fetch_add(1, Ordering::Relaxed);
        let text = req.full_text();
        self.script
            .rules
            .iter()
            .find_map(|rule| rule.apply(req, &text))
            .ok_or_else(|| LlmError::ScriptMiss {
                tag: req.tag.clone(),
            })
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        self.embed_calls.fetch_add(1, Ordering::Relaxed);
        hash_embedding(text, self.script.embedding_dim, self.script.seed)
    }

    fn encoder_name(&self) -> &str {
        &self.encoder
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(tag: &str, body: &str) -> ChatRequest {
        ChatRequest::new(tag).user(body)
    }

    #[test]
    fn scripted_echo() {
        let mock = MockBackend::new(
            MockScript::default()
                .rule(MockRule::new("diagnosis", "Diagnosis: Herpes Zoster").containing("Herpes")),
        );
        let out = mock.chat(&req("diagnosis", "rash, Herpes suspected")).unwrap();
        assert_eq!(out, "Diagnosis: Herpes Zoster");
    }

    #[test]
    fn miss_names_the_tag() {
        let mock = MockBackend::new(MockScript::default().rule(MockRule::new("triage", "x")));
        let err = mock.chat(&req("diagnosis", "anything")).unwrap_err();
        assert!(matches!(&err, LlmError::ScriptMiss { tag } if tag == "diagnosis"));
        assert!(err.to_string().contains("diagnosis"));
    }

    #[test]
    fn first_match_wins_and_patterns() {
        let mock = MockBackend::new(
            MockScript::default()
                .rule(MockRule::new("answer.*", "first").containing("fever"))
                .rule(MockRule::new("*.diagnosis", "second"))
                .rule(MockRule::new("*", "fallback")),
        );
        assert_eq!(mock.chat(&req("answer.diagnosis", "fever")).unwrap(), "first");
        assert_eq!(mock.chat(&req("answer.diagnosis", "cough")).unwrap(), "second");
        assert_eq!(mock.chat(&req("triage", "cough")).unwrap(), "fallback");
    }

    #[test]
    fn regex_capture_expansion() {
        let script = MockScript::from_toml(
            r#"
            [[rules]]
            tag = "echo"
            regex = "name: (?P<n>\\w+)"
            output = "hello ${n}"
            "#,
        )
        .unwrap();
        let mock = MockBackend::new(script);
        assert_eq!(mock.chat(&req("echo", "name: Ada")).unwrap(), "hello Ada");
        assert!(mock.chat(&req("echo", "nothing")).is_err());
    }

    #[test]
    fn bad_regex_is_config_error() {
        let err = MockScript::from_toml("[[rules]]\nregex = \"(\"\n").unwrap_err();
        assert!(matches!(err, LlmError::Config(_)));
    }

    #[test]
    fn embedding_is_deterministic() {
        let mock = MockBackend::new(MockScript::default());
        assert_eq!(mock.embed("abc").unwrap(), mock.embed("abc").unwrap());
        assert_eq!(mock.encoder_name(), "mock-64");
        assert!(matches!(mock.embed("   "), Err(LlmError::EmptyText)));
    }

    /// Straight-line re-derivation of the documented algorithm for "fever".
    #[test]
    fn fever_embedding_matches_documented_algorithm() {
        let dim = 16u64;
        let seed = DEFAULT_MOCK_SEED;
        let mut expected = [0.0f64; 16];
        for tri in [" fe", "fev", "eve", "ver", "er "] {
            let mut h: u64 = 0xcbf29ce484222325;
            let bytes: Vec<u8> = seed.to_le_bytes().into_iter().chain(tri.bytes()).collect();
            for b in bytes {
                h = (h ^ b as u64).wrapping_mul(0x100000001b3);
            }
            expected[(h % dim) as usize] += 1.0;
        }
        let n = expected.iter().map(|x| x * x).sum::<f64>().sqrt();
        let v = hash_embedding("fever", 16, seed).unwrap();
        assert_eq!(v.dim(), 16);
        assert!(v.norm() > 0.0);
        assert!((v.norm() - 1.0).abs() < 1e-12);
        for (got, want) in v.values.iter().zip(expected.iter()) {
            assert_eq!(*got, want / n);
        }
        assert_eq!(hash_embedding("  FEVER ", 16, seed).unwrap(), v);
    }

    #[test]
    fn shared_ngrams_raise_similarity() {
        let a = hash_embedding("blisters on one side of the chest", 64, 1).unwrap();
        let b = hash_embedding("blisters on the left side of the chest", 64, 1).unwrap();
        let c = hash_embedding("productive cough with sputum", 64, 1).unwrap();
        let dot = |x: &EmbeddingVector, y: &EmbeddingVector| {
            x.values.iter().zip(&y.values).map(|(p, q)| p * q).sum::<f64>()
        };
        assert!(dot(&a, &b) > dot(&a, &c));
    }
}
