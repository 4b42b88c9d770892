//! Deterministic offline backend.
//!
//! A fixture assigns each persona (matched by id pattern, `*` wildcard) a
//! list of canned lines and optional planted word rates per lexicon
//! category. With no planted rates the response is one canned line,
//! verbatim. Otherwise the response is `response_tokens` words where each
//! word is, independently, a word from category `c` with probability
//! `rate[c]` and a filler word otherwise. All rules matching a persona
//! contribute: lines are concatenated and rates are summed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{parse_persona_tag, BackendError, ChatBackend, ChatMessage, ChatRequest, Role};
use crate::error::{read_to_string, Error, Result};
use crate::persona::TraitCell;

pub const DEMO_FIXTURE: &str = include_str!("../../assets/fixture.toml");

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaRule {
    #[serde(rename = "match")]
    pub pattern: String,
    #[serde(default)]
    pub lines: Vec<String>,
    #[serde(default)]
    pub rates: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockFixture {
    #[serde(default = "default_response_tokens")]
    pub response_tokens: usize,
    #[serde(default)]
    pub filler: Vec<String>,
    #[serde(default)]
    pub words: BTreeMap<String, Vec<String>>,
    #[serde(default, rename = "persona")]
    pub personas: Vec<PersonaRule>,
}

fn default_response_tokens() -> usize {
    50
}

/// Lines and summed rates for one persona.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPersona<'a> {
    pub lines: Vec<&'a str>,
    pub rates: BTreeMap<&'a str, f64>,
}

impl ResolvedPersona<'_> {
    pub fn total_rate(&self) -> f64 {
        self.rates.values().sum()
    }
}

impl MockFixture {
    pub fn parse(source: &str) -> Result<Self> {
        let fixture: MockFixture =
            toml::from_str(source).map_err(|e| Error::Config(format!("mock fixture: {e}")))?;
        fixture.validate()?;
        Ok(fixture)
    }

    pub fn load(path: &Path) -> Result<Self> {
        MockFixture::parse(&read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn builtin() -> Self {
        MockFixture::parse(DEMO_FIXTURE).expect("shipped fixture is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.response_tokens == 0 {
            return Err(Error::Config("response_tokens must be >= 1".into()));
        }
        for rule in &self.personas {
            for (cat, rate) in &rule.rates {
                if !(0.0..=1.0).contains(rate) {
                    return Err(Error::Config(format!(
                        "rule {}: rate for {cat} must be in [0, 1]",
                        rule.pattern
                    )));
                }
                if *rate > 0.0 && self.words.get(cat).is_none_or(Vec::is_empty) {
                    return Err(Error::Config(format!(
                        "no planted words for category {cat}"
                    )));
                }
            }
        }
        for cell in TraitCell::all() {
            let id = cell.id();
            let Ok(resolved) = self.resolve(&id) else {
                continue;
            };
            let total = resolved.total_rate();
            if total > 1.0 + 1e-12 {
                return Err(Error::Config(format!(
                    "{id}: planted rates sum to {total} > 1"
                )));
            }
            if total > 0.0 && self.filler.is_empty() && total < 1.0 {
                return Err(Error::Config(
                    "planted rates need a filler vocabulary".into(),
                ));
            }
            if total == 0.0 && resolved.lines.is_empty() {
                return Err(Error::Config(format!(
                    "{id}: no canned lines and no planted rates"
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, persona_id: &str) -> Result<ResolvedPersona<'_>> {
        let mut lines = Vec::new();
        let mut rates: BTreeMap<&str, f64> = BTreeMap::new();
        let mut matched = false;
        for rule in self
            .personas
            .iter()
            .filter(|r| glob_match(&r.pattern, persona_id))
        {
            matched = true;
            lines.extend(rule.lines.iter().map(String::as_str));
            for (cat, rate) in &rule.rates {
                *rates.entry(cat.as_str()).or_default() += rate;
            }
        }
        if !matched {
            return Err(Error::Config(format!(
                "persona {persona_id} has no fixture rule"
            )));
        }
        rates.retain(|_, r| *r > 0.0);
        Ok(ResolvedPersona { lines, rates })
    }

    /// Generates one response for a persona from an already seeded RNG.
    pub fn generate(&self, persona_id: &str, rng: &mut impl Rng) -> Result<String> {
        let persona = self.resolve(persona_id)?;
        if persona.rates.is_empty() {
            let i = rng.random_range(0..persona.lines.len());
            return Ok(persona.lines[i].to_string());
        }
        let mut words: Vec<&str> = Vec::with_capacity(self.response_tokens);
        for _ in 0..self.response_tokens {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut picked = None;
            for (cat, rate) in &persona.rates {
                acc += rate;
                if u < acc {
                    picked = Some(&self.words[*cat]);
                    break;
                }
            }
            let pool = picked.unwrap_or(&self.filler);
            words.push(&pool[rng.random_range(0..pool.len())]);
        }
        let mut text = words.join(" ");
        if let Some(first) = text.get(..1) {
            let upper = first.to_uppercase();
            text.replace_range(..1, &upper);
        }
        text.push('.');
        Ok(text)
    }
}

/// `*` matches any run of characters; everything else is literal.
fn glob_match(pattern: &str, text: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == text;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !text.starts_with(first) || text.len() < first.len() + last.len() || !text.ends_with(last) {
        return false;
    }
    let mut rest = &text[first.len()..text.len() - last.len()];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(i) => rest = &rest[i + mid.len()..],
            None => return false,
        }
    }
    true
}

/// Deterministic response for the conversation so far.
///
/// The persona id comes from the tag on the first system message; the turn
/// (index of the latest donor message) selects an independent RNG stream
/// of `seed`, so a response never depends on earlier responses.
pub fn mock_respond(history: &[ChatMessage], fixture: &MockFixture, seed: u64) -> Result<String> {
    let persona_id = history
        .iter()
        .find(|m| m.role == Role::System)
        .and_then(|m| parse_persona_tag(&m.content))
        .ok_or_else(|| Error::Config("conversation has no persona tag".into()))?;
    let turn = history
        .iter()
        .rev()
        .find(|m| m.role == Role::Donor)
        .map(|m| m.turn_index)
        .unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(turn as u64);
    fixture.generate(persona_id, &mut rng)
}

pub struct MockBackend {
    model_id: String,
    fixture: MockFixture,
    seed: u64,
}

impl MockBackend {
    pub fn new(model_id: impl Into<String>, fixture: MockFixture) -> Self {
        MockBackend {
            model_id: model_id.into(),
            fixture,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn fixture(&self) -> &MockFixture {
        &self.fixture
    }
}

impl ChatBackend for MockBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: ChatRequest<'_>) -> Result<String, BackendError> {
        mock_respond(request.messages, &self.fixture, request.seed ^ self.seed)
            .map_err(|e| BackendError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{Lexicon, TextCounts};
    use crate::session::persona_tag;

    fn history(persona: &str, turn: usize) -> Vec<ChatMessage> {
        vec![
            ChatMessage::new(Role::System, format!("{}\nprompt", persona_tag(persona)), 0),
            ChatMessage::new(Role::Donor, "hello", turn),
        ]
    }

    const ECHO: &str = r#"
[[persona]]
match = "opt-*"
lines = ["I hope you will join us today."]

[[persona]]
match = "pes-*"
lines = ["Things look grim without help."]
"#;

    #[test]
    fn glob() {
        assert!(glob_match("opt-*", "opt-auth-ana"));
        assert!(!glob_match("opt-*", "pes-auth-ana"));
        assert!(glob_match("*-sub-*", "pes-sub-aff"));
        assert!(glob_match("*", "anything"));
        assert!(glob_match("opt-auth-ana", "opt-auth-ana"));
        assert!(!glob_match("opt-auth", "opt-auth-ana"));
        assert!(glob_match("*-ana", "opt-sub-ana"));
        assert!(!glob_match("a*a", "a"));
    }

    #[test]
    fn zero_rates_echo_canned_line() {
        let f = MockFixture::parse(ECHO).unwrap();
        for turn in 1..5 {
            let r = mock_respond(&history("opt-sub-aff", turn), &f, 9).unwrap();
            assert_eq!(r, "I hope you will join us today.");
            assert!(r.contains("hope"));
        }
    }

    #[test]
    fn unknown_persona_is_config_error() {
        let f = MockFixture::parse("[[persona]]\nmatch = \"opt-*\"\nlines = [\"x\"]\n").unwrap();
        assert!(matches!(
            mock_respond(&history("pes-sub-aff", 1), &f, 1),
            Err(Error::Config(_))
        ));
        let untagged = vec![ChatMessage::new(Role::System, "prompt", 0)];
        assert!(mock_respond(&untagged, &f, 1).is_err());
    }

    #[test]
    fn deterministic_per_seed_and_turn() {
        let f = MockFixture::builtin();
        let a = mock_respond(&history("opt-auth-ana", 3), &f, 42).unwrap();
        let b = mock_respond(&history("opt-auth-ana", 3), &f, 42).unwrap();
        let c = mock_respond(&history("opt-auth-ana", 4), &f, 42).unwrap();
        let d = mock_respond(&history("opt-auth-ana", 3), &f, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn validation_errors() {
        let over = r#"
filler = ["the"]
[words]
tone_pos = ["good"]
[[persona]]
match = "*"
rates = { tone_pos = 0.7 }
[[persona]]
match = "opt-*"
rates = { tone_pos = 0.6 }
"#;
        assert!(MockFixture::parse(over).is_err());
        let no_words =
            "filler = [\"the\"]\n[[persona]]\nmatch = \"*\"\nrates = { tone_pos = 0.1 }\n";
        assert!(MockFixture::parse(no_words).is_err());
        let no_filler = "[words]\na = [\"x\"]\n[[persona]]\nmatch = \"*\"\nrates = { a = 0.1 }\n";
        assert!(MockFixture::parse(no_filler).is_err());
        assert!(MockFixture::parse("response_tokens = 0\n").is_err());
        assert!(MockFixture::parse("[[persona]]\nmatch = \"*\"\n").is_err());
    }

    #[test]
    fn planted_rate_is_reproduced() {
        let src = r#"
response_tokens = 50
filler = ["the", "a", "of", "and", "to", "in", "on", "that", "with", "at"]
[words]
tone_pos = ["good", "great", "nice", "wonderful"]
[[persona]]
match = "*"
rates = { tone_pos = 0.2 }
"#;
        let f = MockFixture::parse(src).unwrap();
        let lex = Lexicon::from_words(
            &["tone_pos"],
            [
                ("good", "tone_pos"),
                ("great", "tone_pos"),
                ("nice", "tone_pos"),
                ("wonderful", "tone_pos"),
            ],
        )
        .unwrap();
        let mut pooled = TextCounts::empty(&lex);
        for i in 0..1000u64 {
            let r = mock_respond(&history("pes-sub-ana", 1 + (i % 10) as usize), &f, i).unwrap();
            let c = TextCounts::count(&r, &lex);
            assert_eq!(c.word_count, 50);
            pooled.merge(&c);
        }
        let rate = pooled.hits(&lex, "tone_pos").unwrap() as f64 / pooled.word_count as f64;
        assert!((rate - 0.2).abs() <= 0.02, "rate {rate}");
    }
}
