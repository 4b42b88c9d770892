//! Dictionary-based text analysis.
//!
//! A [`Lexicon`] maps lowercase words (literal entries) and word prefixes
//! (stem entries, written with a trailing `*`) to one or more categories.
//! Analysis reports, per category, the percentage of tokens that match it,
//! plus composite scores defined as clamped affine combinations of category
//! percentages.
//!
//! # File format
//!
//! ```text
//! # comment
//! %
//! 1	certitude
//! 2	affect
//! %
//! must	1
//! help*	2
//! sure	1,2
//! composite tone = 50 +1*affect -2*certitude, clamp 0 100
//! ```
//!
//! The header between the first two `%` lines declares `<id> <name>` pairs.
//! Entry lines are `<word-or-stem> <id>[,<id>...]` (tab or space separated).
//! `composite` lines may appear anywhere after the header.

mod analyze;
mod observe;
mod tokenize;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

pub use analyze::{
    analyze, compute_composite, overlap_report, CategoryProfile, MeasureSet, OverlapToken,
    TextCounts,
};
pub use observe::{profile_transcripts, Observation, ObservationRow, ObservationTable, Unit};
pub use tokenize::tokenize;

use crate::error::{read_to_string, Error, Result};

pub const DEMO_LEXICON: &str = include_str!("../../assets/demo.lex");

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeDef {
    pub name: String,
    pub base: f64,
    /// Category name and weight, in declaration order.
    pub weights: Vec<(String, f64)>,
    pub lo: f64,
    pub hi: f64,
}

impl CompositeDef {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) {
            return Err(Error::Config(format!(
                "composite {}: clamp range [{}, {}] is empty",
                self.name, self.lo, self.hi
            )));
        }
        if self.weights.is_empty() {
            return Err(Error::Config(format!(
                "composite {} has no weights",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    /// id → name, in id order.
    categories: BTreeMap<u32, String>,
    literals: BTreeMap<String, BTreeSet<u32>>,
    stems: BTreeMap<String, BTreeSet<u32>>,
    composites: Vec<CompositeDef>,
    /// id → dense slot used by [`TextCounts`].
    slots: HashMap<u32, usize>,
}

impl Lexicon {
    pub fn parse(source: &str) -> Result<Lexicon> {
        Parser::default().run(source)
    }

    pub fn load(path: &Path) -> Result<Lexicon> {
        Lexicon::parse(&read_to_string(path)?)
    }

    pub fn demo() -> Lexicon {
        Lexicon::parse(DEMO_LEXICON).expect("shipped demo lexicon is valid")
    }

    /// Builds a lexicon from category names and `(word, category)` pairs.
    /// Category ids are assigned 1.. in the given order.
    pub fn from_words<'a>(
        categories: &[&str],
        words: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Lexicon> {
        let mut src = String::from("%\n");
        for (i, c) in categories.iter().enumerate() {
            writeln!(src, "{}\t{}", i + 1, c).unwrap();
        }
        src.push_str("%\n");
        for (word, cat) in words {
            let id = categories
                .iter()
                .position(|c| c == &cat)
                .ok_or_else(|| Error::Config(format!("unknown category {cat:?}")))?;
            writeln!(src, "{}\t{}", word, id + 1).unwrap();
        }
        Lexicon::parse(&src)
    }

    pub fn with_composite(mut self, def: CompositeDef) -> Result<Lexicon> {
        self.check_composite(&def)?;
        self.composites.push(def);
        Ok(self)
    }

    fn check_composite(&self, def: &CompositeDef) -> Result<()> {
        def.validate()?;
        if self.category_id(&def.name).is_some() || self.composite(&def.name).is_some() {
            return Err(Error::Config(format!(
                "composite name {} is already taken",
                def.name
            )));
        }
        for (cat, _) in &def.weights {
            if self.category_id(cat).is_none() {
                return Err(Error::Config(format!(
                    "composite {} references unknown category {cat}",
                    def.name
                )));
            }
        }
        Ok(())
    }

    pub fn category_names(&self) -> impl Iterator<Item = &str> {
        self.categories.values().map(String::as_str)
    }

    pub fn category_id(&self, name: &str) -> Option<u32> {
        self.categories
            .iter()
            .find(|(_, n)| n.as_str() == name)
            .map(|(id, _)| *id)
    }

    pub fn composites(&self) -> &[CompositeDef] {
        &self.composites
    }

    pub fn composite(&self, name: &str) -> Option<&CompositeDef> {
        self.composites.iter().find(|c| c.name == name)
    }

    /// True if `name` is a category or composite.
    pub fn resolves(&self, name: &str) -> bool {
        self.category_id(name).is_some() || self.composite(name).is_some()
    }

    pub fn literal_count(&self) -> usize {
        self.literals.len()
    }

    pub fn stem_count(&self) -> usize {
        self.stems.len()
    }

    pub fn literal(&self, word: &str) -> Option<&BTreeSet<u32>> {
        self.literals.get(word)
    }

    pub fn stem(&self, prefix: &str) -> Option<&BTreeSet<u32>> {
        self.stems.get(prefix)
    }

    pub(crate) fn slot_count(&self) -> usize {
        self.categories.len()
    }

    pub(crate) fn slot_of(&self, id: u32) -> usize {
        self.slots[&id]
    }

    /// Categories matched by a single lowercase token. Each category appears
    /// at most once even if a literal and several stems all match it.
    pub fn match_token(&self, token: &str) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        if let Some(ids) = self.literals.get(token) {
            out.extend(ids);
        }
        if !self.stems.is_empty() {
            for (i, c) in token.char_indices() {
                let end = i + c.len_utf8();
                if let Some(ids) = self.stems.get(&token[..end]) {
                    out.extend(ids);
                }
            }
        }
        out
    }

    /// Canonical text form; parses back to an equal lexicon.
    pub fn serialize(&self) -> String {
        let mut out = String::from("%\n");
        for (id, name) in &self.categories {
            writeln!(out, "{id}\t{name}").unwrap();
        }
        out.push_str("%\n");
        let ids =
            |set: &BTreeSet<u32>| set.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        for (word, set) in &self.literals {
            writeln!(out, "{word}\t{}", ids(set)).unwrap();
        }
        for (stem, set) in &self.stems {
            writeln!(out, "{stem}*\t{}", ids(set)).unwrap();
        }
        for def in &self.composites {
            write!(out, "composite {} = {}", def.name, def.base).unwrap();
            for (cat, w) in &def.weights {
                if *w < 0.0 {
                    write!(out, " -{}*{}", -w, cat).unwrap();
                } else {
                    write!(out, " +{}*{}", w, cat).unwrap();
                }
            }
            writeln!(out, ", clamp {} {}", def.lo, def.hi).unwrap();
        }
        out
    }
}

#[derive(Default)]
struct Parser {
    categories: BTreeMap<u32, String>,
    literals: BTreeMap<String, BTreeSet<u32>>,
    stems: BTreeMap<String, BTreeSet<u32>>,
    composites: Vec<(usize, String)>,
}

#[derive(PartialEq)]
enum Section {
    Preamble,
    Header,
    Entries,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

impl Parser {
    fn run(mut self, source: &str) -> Result<Lexicon> {
        let mut section = Section::Preamble;
        for (idx, raw) in source.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "%" {
                section = match section {
                    Section::Preamble => Section::Header,
                    Section::Header => {
                        if self.categories.is_empty() {
                            return Err(parse_err(line_no, "empty category section"));
                        }
                        Section::Entries
                    }
                    Section::Entries => {
                        return Err(parse_err(line_no, "unexpected third '%' delimiter"))
                    }
                };
                continue;
            }
            match section {
                Section::Preamble => {
                    return Err(parse_err(
                        line_no,
                        "expected '%' to open the category header",
                    ))
                }
                Section::Header => self.header_line(line_no, line)?,
                Section::Entries => {
                    if let Some(rest) = line.strip_prefix("composite ") {
                        self.composites.push((line_no, rest.to_string()));
                    } else {
                        self.entry_line(line_no, line)?;
                    }
                }
            }
        }
        if section != Section::Entries {
            return Err(parse_err(
                source.lines().count().max(1),
                "missing '%' delimiter closing the category header",
            ));
        }
        for word in self.literals.keys() {
            if self.stems.contains_key(word) {
                return Err(Error::LexiconParse {
                    line: 0,
                    message: format!("{word:?} is both a literal and a stem entry"),
                });
            }
        }
        let slots = self
            .categories
            .keys()
            .enumerate()
            .map(|(slot, id)| (*id, slot))
            .collect();
        let mut lexicon = Lexicon {
            categories: self.categories,
            literals: self.literals,
            stems: self.stems,
            composites: Vec::new(),
            slots,
        };
        for (line_no, text) in self.composites {
            let def = parse_composite(line_no, &text)?;
            lexicon.check_composite(&def).map_err(|e| match e {
                Error::Config(m) => parse_err(line_no, m),
                other => other,
            })?;
            lexicon.composites.push(def);
        }
        Ok(lexicon)
    }

    fn header_line(&mut self, line_no: usize, line: &str) -> Result<()> {
        let mut parts = line.split_whitespace();
        let (Some(id), Some(name), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(line_no, "header lines must be '<id> <name>'"));
        };
        let id: u32 = id
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad category id {id:?}")))?;
        if !name.chars().all(|c| c.is_alphanumeric() || c == '_') {
            return Err(parse_err(line_no, format!("bad category name {name:?}")));
        }
        if self.categories.values().any(|n| n == name) {
            return Err(parse_err(
                line_no,
                format!("duplicate category name {name}"),
            ));
        }
        if self.categories.insert(id, name.to_string()).is_some() {
            return Err(parse_err(line_no, format!("duplicate category id {id}")));
        }
        Ok(())
    }

    fn entry_line(&mut self, line_no: usize, line: &str) -> Result<()> {
        let (word, rest) = line
            .split_once(|c: char| c.is_whitespace())
            .ok_or_else(|| parse_err(line_no, "entry has no category ids"))?;
        let word = word.to_lowercase().replace('\u{2019}', "'");
        let (text, is_stem) = match word.strip_suffix('*') {
            Some(prefix) => (prefix.to_string(), true),
            None => (word.clone(), false),
        };
        if text.is_empty() {
            return Err(parse_err(line_no, "stem entry needs a prefix before '*'"));
        }
        if !text.chars().all(is_word_char) {
            return Err(parse_err(
                line_no,
                format!("invalid characters in entry {word:?}"),
            ));
        }
        let mut ids = BTreeSet::new();
        for tok in rest.split(|c: char| c == ',' || c.is_whitespace()) {
            if tok.is_empty() {
                continue;
            }
            let id: u32 = tok
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad category id {tok:?}")))?;
            if !self.categories.contains_key(&id) {
                return Err(parse_err(line_no, format!("undeclared category id {id}")));
            }
            ids.insert(id);
        }
        if ids.is_empty() {
            return Err(parse_err(line_no, "entry has no category ids"));
        }
        let table = if is_stem {
            &mut self.stems
        } else {
            &mut self.literals
        };
        table.entry(text).or_default().extend(ids);
        Ok(())
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::LexiconParse {
        line,
        message: message.into(),
    }
}

/// Parses `<name> = <base> [+|-]<w>*<cat> ..., clamp <lo> <hi>`.
fn parse_composite(line_no: usize, text: &str) -> Result<CompositeDef> {
    let err = |m: &str| parse_err(line_no, format!("composite: {m}"));
    let (name, rhs) = text.split_once('=').ok_or_else(|| err("missing '='"))?;
    let name = name.trim();
    if name.is_empty() || !name.chars().all(|c| c.is_alphanumeric() || c == '_') {
        return Err(err("bad name"));
    }
    let (expr, clamp) = rhs
        .rsplit_once(',')
        .ok_or_else(|| err("missing ', clamp lo hi'"))?;
    let clamp: Vec<&str> = clamp.split_whitespace().collect();
    let [kw, lo, hi] = clamp[..] else {
        return Err(err("clamp must be 'clamp <lo> <hi>'"));
    };
    if kw != "clamp" {
        return Err(err("clamp must be 'clamp <lo> <hi>'"));
    }
    let lo: f64 = lo.parse().map_err(|_| err("bad clamp bound"))?;
    let hi: f64 = hi.parse().map_err(|_| err("bad clamp bound"))?;

    let compact: String = expr.chars().filter(|c| !c.is_whitespace()).collect();
    if compact.is_empty() {
        return Err(err("missing base value"));
    }
    let split_at = compact[1..]
        .find(['+', '-'])
        .map(|i| i + 1)
        .unwrap_or(compact.len());
    let base: f64 = compact[..split_at]
        .parse()
        .map_err(|_| err("bad base value"))?;
    let mut weights = Vec::new();
    let mut rest = &compact[split_at..];
    while !rest.is_empty() {
        let sign = if rest.starts_with('-') { -1.0 } else { 1.0 };
        let body = &rest[1..];
        let end = body.find(['+', '-']).unwrap_or(body.len());
        let term = &body[..end];
        let (w, cat) = match term.split_once('*') {
            Some((w, cat)) => (w.parse::<f64>().map_err(|_| err("bad weight"))?, cat),
            None => (1.0, term),
        };
        if cat.is_empty() {
            return Err(err("term without category"));
        }
        weights.push((cat.to_string(), sign * w));
        rest = &body[end..];
    }
    let def = CompositeDef {
        name: name.to_string(),
        base,
        weights,
        lo,
        hi,
    };
    def.validate()
        .map_err(|e| parse_err(line_no, e.to_string()))?;
    Ok(def)
}
