//! Trait space, persona archetypes and core-prompt rendering.
//!
//! A persona is one cell of the 2×2×2 design over Attitude, Authority and
//! Reasoning. Prompts are rendered from a [`PromptTemplate`] (task, goal,
//! rules and a persona pattern with `{NAME}`, `{ATTITUDE}`, `{AUTHORITY}`,
//! `{REASONING}` slots) and a [`SlotVocabulary`] giving the text inserted for
//! each trait level.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Attitude {
    Optimistic,
    Pessimistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Authority {
    Authoritative,
    Submissive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Reasoning {
    Analytical,
    Affective,
}

impl Attitude {
    pub const ALL: [Attitude; 2] = [Attitude::Optimistic, Attitude::Pessimistic];

    pub fn code(self) -> &'static str {
        match self {
            Attitude::Optimistic => "opt",
            Attitude::Pessimistic => "pes",
        }
    }
}

impl Authority {
    pub const ALL: [Authority; 2] = [Authority::Authoritative, Authority::Submissive];

    pub fn code(self) -> &'static str {
        match self {
            Authority::Authoritative => "auth",
            Authority::Submissive => "sub",
        }
    }
}

impl Reasoning {
    pub const ALL: [Reasoning; 2] = [Reasoning::Analytical, Reasoning::Affective];

    pub fn code(self) -> &'static str {
        match self {
            Reasoning::Analytical => "ana",
            Reasoning::Affective => "aff",
        }
    }
}

/// The three persona dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Factor {
    Attitude,
    Authority,
    Reasoning,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::Attitude, Factor::Authority, Factor::Reasoning];

    pub fn name(self) -> &'static str {
        match self {
            Factor::Attitude => "Attitude",
            Factor::Authority => "Authority",
            Factor::Reasoning => "Reasoning",
        }
    }
}

/// One of the six trait levels, used to key the slot vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TraitLevel {
    Optimistic,
    Pessimistic,
    Authoritative,
    Submissive,
    Analytical,
    Affective,
}

impl TraitLevel {
    pub const ALL: [TraitLevel; 6] = [
        TraitLevel::Optimistic,
        TraitLevel::Pessimistic,
        TraitLevel::Authoritative,
        TraitLevel::Submissive,
        TraitLevel::Analytical,
        TraitLevel::Affective,
    ];

    /// Key used in the vocabulary config file.
    pub fn key(self) -> &'static str {
        match self {
            TraitLevel::Optimistic => "optimistic",
            TraitLevel::Pessimistic => "pessimistic",
            TraitLevel::Authoritative => "authoritative",
            TraitLevel::Submissive => "submissive",
            TraitLevel::Analytical => "analytical",
            TraitLevel::Affective => "affective",
        }
    }

    /// The other level of the same dimension.
    pub fn opposite(self) -> TraitLevel {
        match self {
            TraitLevel::Optimistic => TraitLevel::Pessimistic,
            TraitLevel::Pessimistic => TraitLevel::Optimistic,
            TraitLevel::Authoritative => TraitLevel::Submissive,
            TraitLevel::Submissive => TraitLevel::Authoritative,
            TraitLevel::Analytical => TraitLevel::Affective,
            TraitLevel::Affective => TraitLevel::Analytical,
        }
    }
}

impl From<Attitude> for TraitLevel {
    fn from(a: Attitude) -> Self {
        match a {
            Attitude::Optimistic => TraitLevel::Optimistic,
            Attitude::Pessimistic => TraitLevel::Pessimistic,
        }
    }
}

impl From<Authority> for TraitLevel {
    fn from(a: Authority) -> Self {
        match a {
            Authority::Authoritative => TraitLevel::Authoritative,
            Authority::Submissive => TraitLevel::Submissive,
        }
    }
}

impl From<Reasoning> for TraitLevel {
    fn from(r: Reasoning) -> Self {
        match r {
            Reasoning::Analytical => TraitLevel::Analytical,
            Reasoning::Affective => TraitLevel::Affective,
        }
    }
}

/// Trait levels of a persona, without the agent name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraitCell {
    pub attitude: Attitude,
    pub authority: Authority,
    pub reasoning: Reasoning,
}

impl TraitCell {
    /// All eight cells, Attitude major, Authority middle, Reasoning minor.
    pub fn all() -> impl Iterator<Item = TraitCell> {
        Attitude::ALL.into_iter().flat_map(|attitude| {
            Authority::ALL.into_iter().flat_map(move |authority| {
                Reasoning::ALL.into_iter().map(move |reasoning| TraitCell {
                    attitude,
                    authority,
                    reasoning,
                })
            })
        })
    }

    pub fn id(&self) -> String {
        format!(
            "{}-{}-{}",
            self.attitude.code(),
            self.authority.code(),
            self.reasoning.code()
        )
    }

    /// Position in the enumeration order of [`TraitCell::all`].
    pub fn index(&self) -> usize {
        let a = (self.attitude == Attitude::Pessimistic) as usize;
        let b = (self.authority == Authority::Submissive) as usize;
        let c = (self.reasoning == Reasoning::Affective) as usize;
        a * 4 + b * 2 + c
    }

    pub fn from_id(id: &str) -> Result<TraitCell> {
        TraitCell::all()
            .find(|c| c.id() == id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown persona id {id:?}")))
    }
}

impl fmt::Display for TraitCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PersonaSpec {
    pub attitude: Attitude,
    pub authority: Authority,
    pub reasoning: Reasoning,
    pub agent_name: String,
}

impl PersonaSpec {
    pub fn new(cell: TraitCell, agent_name: impl Into<String>) -> Result<Self> {
        let agent_name = agent_name.into();
        validate_agent_name(&agent_name)?;
        Ok(PersonaSpec {
            attitude: cell.attitude,
            authority: cell.authority,
            reasoning: cell.reasoning,
            agent_name,
        })
    }

    pub fn cell(&self) -> TraitCell {
        TraitCell {
            attitude: self.attitude,
            authority: self.authority,
            reasoning: self.reasoning,
        }
    }

    /// Stable key, e.g. `opt-auth-ana`. Independent of the agent name.
    pub fn id(&self) -> String {
        self.cell().id()
    }

    pub fn from_id(id: &str, agent_name: impl Into<String>) -> Result<Self> {
        PersonaSpec::new(TraitCell::from_id(id)?, agent_name)
    }
}

fn validate_agent_name(name: &str) -> Result<()> {
    if name.trim().is_empty() {
        return Err(Error::InvalidArgument(
            "agent name must be non-empty".into(),
        ));
    }
    if contains_slot_marker(name) {
        return Err(Error::InvalidArgument(format!(
            "agent name {name:?} contains a slot marker"
        )));
    }
    Ok(())
}

/// The eight archetypes for one agent name, in [`TraitCell::all`] order.
pub fn enumerate_personas(agent_name: &str) -> Result<Vec<PersonaSpec>> {
    validate_agent_name(agent_name)?;
    TraitCell::all()
        .map(|cell| PersonaSpec::new(cell, agent_name))
        .collect()
}

pub const SLOT_NAME: &str = "NAME";
pub const SLOT_ATTITUDE: &str = "ATTITUDE";
pub const SLOT_AUTHORITY: &str = "AUTHORITY";
pub const SLOT_REASONING: &str = "REASONING";
pub const SLOTS: [&str; 4] = [SLOT_NAME, SLOT_ATTITUDE, SLOT_AUTHORITY, SLOT_REASONING];

fn contains_slot_marker(text: &str) -> bool {
    SLOTS.iter().any(|s| text.contains(&format!("{{{s}}}")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub task: String,
    pub goal: String,
    pub rules: String,
    #[serde(rename = "persona")]
    pub persona_pattern: String,
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        for (name, text) in [
            ("task", &self.task),
            ("goal", &self.goal),
            ("rules", &self.rules),
            ("persona", &self.persona_pattern),
        ] {
            if text.trim().is_empty() {
                return Err(Error::Config(format!("template section {name} is empty")));
            }
        }
        for slot in SLOTS {
            let marker = format!("{{{slot}}}");
            let count = self.persona_pattern.matches(&marker).count();
            if count != 1 {
                return Err(Error::Config(format!(
                    "persona pattern must contain {marker} exactly once (found {count})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlotVocabulary {
    entries: BTreeMap<TraitLevel, String>,
}

impl SlotVocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, level: TraitLevel, text: impl Into<String>) -> Self {
        self.entries.insert(level, text.into());
        self
    }

    pub fn get(&self, level: TraitLevel) -> Option<&str> {
        self.entries.get(&level).map(String::as_str)
    }

    fn rendering(&self, level: TraitLevel) -> Result<&str> {
        match self.get(level) {
            Some(text) if !text.trim().is_empty() => Ok(text),
            _ => Err(Error::Config(format!(
                "slot vocabulary has no rendering for {}",
                level.key()
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for level in TraitLevel::ALL {
            let text = self.rendering(level)?;
            if contains_slot_marker(text) {
                return Err(Error::Config(format!(
                    "rendering for {} contains a slot marker",
                    level.key()
                )));
            }
            if self.get(level.opposite()) == Some(text) {
                return Err(Error::Config(format!(
                    "{} and {} share the same rendering",
                    level.key(),
                    level.opposite().key()
                )));
            }
        }
        Ok(())
    }
}

/// Template and vocabulary as stored in the prompt config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptConfig {
    pub template: PromptTemplate,
    pub vocabulary: SlotVocabulary,
}

#[derive(Deserialize)]
struct PromptConfigFile {
    template: PromptTemplate,
    vocabulary: BTreeMap<String, String>,
}

pub const DEFAULT_PROMPT_CONFIG: &str = include_str!("../assets/prompt.toml");

impl PromptConfig {
    pub fn parse(source: &str) -> Result<Self> {
        let file: PromptConfigFile =
            toml::from_str(source).map_err(|e| Error::Config(format!("prompt config: {e}")))?;
        let mut vocabulary = SlotVocabulary::new();
        for (key, text) in file.vocabulary {
            let level = TraitLevel::ALL
                .into_iter()
                .find(|l| l.key() == key)
                .ok_or_else(|| Error::Config(format!("unknown vocabulary key {key:?}")))?;
            vocabulary = vocabulary.with(level, text);
        }
        let config = PromptConfig {
            template: file.template,
            vocabulary,
        };
        config.template.validate()?;
        config.vocabulary.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_PROMPT_CONFIG).expect("shipped prompt config is valid")
    }

    pub fn render(&self, spec: &PersonaSpec) -> Result<RenderedPrompt> {
        let persona = render_persona(spec, &self.template, &self.vocabulary)?;
        let t = &self.template;
        Ok(RenderedPrompt {
            text: [
                t.task.trim(),
                t.goal.trim(),
                t.rules.trim(),
                persona.as_str(),
            ]
            .join("\n"),
            persona_section: persona,
        })
    }
}

/// Full prompt plus the persona section on its own, which is what gets
/// re-injected mid-conversation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub persona_section: String,
}

/// Renders the core prompt: task, goal, rules and the filled persona pattern,
/// one per line.
pub fn build_prompt(
    spec: &PersonaSpec,
    template: &PromptTemplate,
    vocab: &SlotVocabulary,
) -> Result<String> {
    let persona = render_persona(spec, template, vocab)?;
    Ok([
        template.task.trim(),
        template.goal.trim(),
        template.rules.trim(),
        persona.as_str(),
    ]
    .join("\n"))
}

fn render_persona(
    spec: &PersonaSpec,
    template: &PromptTemplate,
    vocab: &SlotVocabulary,
) -> Result<String> {
    template.validate()?;
    validate_agent_name(&spec.agent_name)?;
    let attitude = vocab.rendering(spec.attitude.into())?;
    let authority = vocab.rendering(spec.authority.into())?;
    let reasoning = vocab.rendering(spec.reasoning.into())?;
    Ok(substitute(
        template.persona_pattern.trim(),
        |slot| match slot {
            SLOT_NAME => Some(spec.agent_name.as_str()),
            SLOT_ATTITUDE => Some(attitude),
            SLOT_AUTHORITY => Some(authority),
            SLOT_REASONING => Some(reasoning),
            _ => None,
        },
    ))
}

/// Single left-to-right pass; inserted text is never rescanned and unknown
/// `{...}` sequences are copied through.
fn substitute<'a>(pattern: &str, lookup: impl Fn(&str) -> Option<&'a str>) -> String {
    let mut out = String::with_capacity(pattern.len() + 64);
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after
            .find('}')
            .and_then(|close| lookup(&after[..close]).map(|v| (close, v)))
        {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
