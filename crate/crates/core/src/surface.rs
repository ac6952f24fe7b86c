//! Keyword/phrase label functions and the providers that propose them.
//!
//! A [`SurfaceRule`] holds, for each class, a set of lowercase patterns. It
//! votes for a class when patterns of exactly that class occur in the text,
//! and abstains when none or several classes match.
//!
//! Rules come from an [`LfProvider`]: either a remote chat-completion model
//! prompted with the task description and label list, or the offline
//! generator, which ranks seed tokens by smoothed log-odds.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, LabelSpace};
use crate::error::{Error, Result};
use crate::features::Tokenizer;
use crate::lf::WeakLabel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Whole tokens or contiguous token phrases.
    #[default]
    Token,
    /// Raw substring of the lowercased text.
    Substring,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceRule {
    pub patterns: BTreeMap<usize, BTreeSet<String>>,
    pub match_mode: MatchMode,
}

fn matching_tokenizer() -> Tokenizer {
    Tokenizer::with_min_len(1)
}

fn contains_phrase(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && needle.len() <= haystack.len()
        && haystack.windows(needle.len()).any(|w| w == needle)
}

impl SurfaceRule {
    pub fn from_class_patterns<I, P, S>(patterns: I, match_mode: MatchMode) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, P)>,
        P: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
        for (class, pats) in patterns {
            let set = out.entry(class).or_default();
            for p in pats {
                let p = p.as_ref().trim().to_lowercase();
                if p.is_empty() {
                    return Err(Error::Precondition("empty surface pattern".into()));
                }
                if match_mode == MatchMode::Token && matching_tokenizer().tokenize(&p).is_empty()
                {
                    return Err(Error::Precondition(format!(
                        "pattern {p:?} has no tokens"
                    )));
                }
                set.insert(p);
            }
        }
        out.retain(|_, s| !s.is_empty());
        Ok(Self {
            patterns: out,
            match_mode,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.values().all(BTreeSet::is_empty)
    }

    pub fn max_class(&self) -> Option<usize> {
        self.patterns.keys().next_back().copied()
    }

    /// Union of all pattern strings, ignoring class.
    pub fn all_patterns(&self) -> BTreeSet<&str> {
        self.patterns
            .values()
            .flat_map(|s| s.iter().map(String::as_str))
            .collect()
    }

    pub fn eval(&self, doc: &Document) -> WeakLabel {
        eval_surface(self, doc)
    }

    pub fn to_file(&self, id: &str, labels: &LabelSpace) -> RuleFile {
        RuleFile {
            id: id.to_string(),
            match_mode: self.match_mode,
            patterns: self
                .patterns
                .iter()
                .map(|(&k, pats)| (labels.name(k).to_string(), pats.iter().cloned().collect()))
                .collect(),
        }
    }

    pub fn from_file(file: &RuleFile, labels: &LabelSpace) -> Result<Self> {
        let mut entries = Vec::new();
        for (name, pats) in &file.patterns {
            let k = labels
                .index_of(name)
                .ok_or_else(|| Error::UnknownLabel(name.clone()))?;
            entries.push((k, pats.clone()));
        }
        Self::from_class_patterns(entries, file.match_mode)
    }
}

pub fn eval_surface(rule: &SurfaceRule, doc: &Document) -> WeakLabel {
    let text = doc.text.trim().to_lowercase();
    let tokens = match rule.match_mode {
        MatchMode::Token => matching_tokenizer().tokenize(&text),
        MatchMode::Substring => Vec::new(),
    };
    let mut matched = None;
    for (&class, pats) in &rule.patterns {
        let hit = pats.iter().any(|p| match rule.match_mode {
            MatchMode::Substring => text.contains(p.as_str()),
            MatchMode::Token => contains_phrase(&tokens, &matching_tokenizer().tokenize(p)),
        });
        if hit {
            if matched.is_some() {
                return WeakLabel::Abstain;
            }
            matched = Some(class);
        }
    }
    matched.map_or(WeakLabel::Abstain, WeakLabel::Class)
}

/// Jaccard similarity of the class-agnostic pattern unions.
pub fn surface_similarity(a: &SurfaceRule, b: &SurfaceRule) -> f64 {
    let pa = a.all_patterns();
    let pb = b.all_patterns();
    let union = pa.union(&pb).count();
    if union == 0 {
        return 1.0;
    }
    pa.intersection(&pb).count() as f64 / union as f64
}

/// On-disk rule format, also the schema a remote model must reply with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleFile {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub match_mode: MatchMode,
    pub patterns: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub task_description: String,
    pub class_names: Vec<String>,
    /// Labeled `(text, class name)` examples shown to the generator.
    #[serde(default)]
    pub examples: Vec<(String, String)>,
    pub count: usize,
    /// Free-text feedback from the previous exploitation round.
    #[serde(default)]
    pub hint: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Generated {
    pub rules: Vec<SurfaceRule>,
    /// Entries dropped during validation.
    pub warnings: usize,
}

pub trait LfProvider: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<Generated>;
}

pub fn generate_surface_lfs(
    provider: &dyn LfProvider,
    request: &GenerationRequest,
) -> Result<Generated> {
    if request.count == 0 {
        return Err(Error::Precondition("generation count must be >= 1".into()));
    }
    let mut out = provider.generate(request)?;
    out.rules.truncate(request.count);
    Ok(out)
}

/// Deterministic stand-in for an LLM: ranks seed tokens by smoothed
/// log-odds per class and deals the top tokens into rules.
#[derive(Debug, Clone)]
pub struct OfflineProvider {
    pub rng_seed: u64,
    pub top_t: usize,
    pub tokenizer: Tokenizer,
}

impl OfflineProvider {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            rng_seed,
            top_t: 5,
            tokenizer: Tokenizer::default(),
        }
    }

    pub fn with_top_t(mut self, top_t: usize) -> Self {
        self.top_t = top_t;
        self
    }
}

/// Per-class tokens ranked by `ln((df_c + 1)/(n_c + 2)) - ln((df_rest + 1)/(n_rest + 2))`,
/// keeping only positive scores. Each token is assigned to its best class.
pub fn rank_discriminative_tokens(
    examples: &[(Vec<String>, usize)],
    num_classes: usize,
) -> Vec<Vec<(String, f64)>> {
    let mut df: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut n_docs = vec![0usize; num_classes];
    for (tokens, class) in examples {
        n_docs[*class] += 1;
        let uniq: BTreeSet<&str> = tokens.iter().map(String::as_str).collect();
        for t in uniq {
            df.entry(t).or_insert_with(|| vec![0; num_classes])[*class] += 1;
        }
    }
    let total: usize = n_docs.iter().sum();
    let mut ranked: Vec<Vec<(String, f64)>> = vec![Vec::new(); num_classes];
    for (token, counts) in df {
        let all: usize = counts.iter().sum();
        let best = (0..num_classes)
            .map(|c| {
                let rest_n = total - n_docs[c];
                let rest_df = all - counts[c];
                let score = ((counts[c] as f64 + 1.0) / (n_docs[c] as f64 + 2.0)).ln()
                    - ((rest_df as f64 + 1.0) / (rest_n as f64 + 2.0)).ln();
                (c, score)
            })
            .filter(|&(c, s)| counts[c] > 0 && s > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((c, s)) = best {
            ranked[c].push((token.to_string(), s));
        }
    }
    for list in &mut ranked {
        list.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    }
    ranked
}

impl LfProvider for OfflineProvider {
    fn generate(&self, request: &GenerationRequest) -> Result<Generated> {
        let c = request.class_names.len();
        let mut warnings = 0;
        let examples: Vec<(Vec<String>, usize)> = request
            .examples
            .iter()
            .filter_map(|(text, name)| {
                let k = request.class_names.iter().position(|n| n == name);
                if k.is_none() {
                    warnings += 1;
                }
                k.map(|k| (self.tokenizer.tokenize(text), k))
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        let mut top: Vec<Vec<String>> = rank_discriminative_tokens(&examples, c)
            .into_iter()
            .map(|list| list.into_iter().take(self.top_t).map(|(t, _)| t).collect())
            .collect();
        for list in &mut top {
            list.shuffle(&mut rng);
        }
        let n_rules = request
            .count
            .min(top.iter().map(Vec::len).max().unwrap_or(0));
        let mut rules = Vec::with_capacity(n_rules);
        for r in 0..n_rules {
            let patterns = top.iter().enumerate().map(|(class, list)| {
                (
                    class,
                    list.iter()
                        .enumerate()
                        .filter(|(p, _)| p % n_rules == r)
                        .map(|(_, t)| t.clone())
                        .collect::<Vec<_>>(),
                )
            });
            let rule = SurfaceRule::from_class_patterns(patterns, MatchMode::Token)?;
            if !rule.is_empty() {
                rules.push(rule);
            }
        }
        Ok(Generated { rules, warnings })
    }
}

pub const LLM_ENDPOINT_ENV: &str = "LABELCRAFT_LLM_ENDPOINT";
pub const LLM_MODEL_ENV: &str = "LABELCRAFT_LLM_MODEL";
pub const LLM_API_KEY_ENV: &str = "LABELCRAFT_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteLlmConfig {
    /// OpenAI-compatible chat-completions URL.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
    pub backoff_ms: u64,
}

impl RemoteLlmConfig {
    /// Reads endpoint, model and key from the environment.
    pub fn from_env(timeout_secs: u64) -> Result<Self> {
        let endpoint = std::env::var(LLM_ENDPOINT_ENV)
            .map_err(|_| Error::Config(format!("{LLM_ENDPOINT_ENV} is not set")))?;
        let model = std::env::var(LLM_MODEL_ENV).unwrap_or_else(|_| "gpt-4.1".into());
        Ok(Self {
            endpoint,
            model,
            api_key: std::env::var(LLM_API_KEY_ENV).ok(),
            timeout_secs,
            retries: 3,
            backoff_ms: 500,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RemoteLlmProvider {
    pub config: RemoteLlmConfig,
}

/// Prompt with the task description and the zero-based label list.
pub fn build_prompt(request: &GenerationRequest) -> String {
    let mut p = String::new();
    p.push_str("## Task Description\n");
    p.push_str(request.task_description.trim());
    p.push_str("\n\n## Available Labels\n");
    for (i, name) in request.class_names.iter().enumerate() {
        p.push_str(&format!("{i}: {name}\n"));
    }
    if !request.examples.is_empty() {
        p.push_str("\n## Labeled Examples\n");
        for (text, name) in &request.examples {
            p.push_str(&format!("- [{name}] {}\n", text.replace('\n', " ")));
        }
    }
    if let Some(hint) = &request.hint {
        p.push_str("\n## Feedback From Previous Round\n");
        p.push_str(hint);
        p.push('\n');
    }
    p.push_str(&format!(
        "\n## Output\nPropose {} labeling rules. Each rule maps label names to short \
         lowercase keywords or phrases whose presence indicates that label. Reply with a \
         JSON array only, where every element has the form \
         {{\"id\": string, \"match_mode\": \"token\" | \"substring\", \
         \"patterns\": {{\"<label name>\": [string, ...]}}}}.\n",
        request.count
    ));
    p
}

/// Extracts the first well-formed JSON array embedded in `reply`.
pub fn extract_json_array(reply: &str) -> Option<Vec<serde_json::Value>> {
    for (i, _) in reply.match_indices('[') {
        let mut stream =
            serde_json::Deserializer::from_str(&reply[i..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Array(items))) = stream.next() {
            return Some(items);
        }
    }
    None
}

/// Parses a model reply into validated rules, counting dropped entries.
pub fn parse_provider_reply(reply: &str, class_names: &[String]) -> Result<Generated> {
    let excerpt = || reply.chars().take(200).collect::<String>();
    let items = extract_json_array(reply).ok_or_else(|| Error::MalformedProviderReply(excerpt()))?;
    let labels = LabelSpace::new(class_names.iter().cloned())?;
    let mut out = Generated::default();
    for item in items {
        let parsed = serde_json::from_value::<RuleFile>(item)
            .map_err(Error::from)
            .and_then(|f| SurfaceRule::from_file(&f, &labels));
        match parsed {
            Ok(rule) if !rule.is_empty() => out.rules.push(rule),
            _ => out.warnings += 1,
        }
    }
    if out.rules.is_empty() {
        return Err(Error::MalformedProviderReply(excerpt()));
    }
    if out.warnings > 0 {
        log::warn!("dropped {} malformed rule(s) from provider reply", out.warnings);
    }
    Ok(out)
}

impl RemoteLlmProvider {
    pub fn new(config: RemoteLlmConfig) -> Self {
        Self { config }
    }

    fn call_once(&self, prompt: &str) -> Result<String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(self.config.timeout_secs)))
            .build()
            .into();
        let mut req = agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": "You write labeling rules for weak supervision."},
                {"role": "user", "content": prompt},
            ],
        });
        let mut resp = req
            .send_json(&body)
            .map_err(|e| Error::ProviderUnreachable(e.to_string()))?;
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::MalformedProviderReply(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::MalformedProviderReply("missing choices[0].message.content".into()))
    }
}

impl LfProvider for RemoteLlmProvider {
    fn generate(&self, request: &GenerationRequest) -> Result<Generated> {
        let prompt = build_prompt(request);
        let mut last_err = None;
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(
                    self.config.backoff_ms << (attempt - 1).min(10),
                ));
            }
            match self.call_once(&prompt) {
                Ok(reply) => return parse_provider_reply(&reply, &request.class_names),
                Err(e) => {
                    log::warn!("provider attempt {} failed: {e}", attempt + 1);
                    last_err = Some(e);
                }
            }
        }
        Err(Error::ProviderUnreachable(
            last_err.map(|e| e.to_string()).unwrap_or_default(),
        ))
    }
}
