use std::collections::BTreeMap;

use super::{tokenize, CompositeDef, Lexicon};
use crate::error::{Error, Result};
use crate::persona::Factor;

/// Raw token and per-category hit counts for one text, or a pool of texts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextCounts {
    pub word_count: u64,
    /// Indexed by the lexicon's dense category slot.
    hits: Vec<u64>,
}

impl TextCounts {
    pub fn empty(lexicon: &Lexicon) -> Self {
        TextCounts {
            word_count: 0,
            hits: vec![0; lexicon.slot_count()],
        }
    }

    pub fn count(text: &str, lexicon: &Lexicon) -> Self {
        let mut counts = TextCounts::empty(lexicon);
        for token in tokenize(text) {
            counts.word_count += 1;
            for id in lexicon.match_token(&token) {
                counts.hits[lexicon.slot_of(id)] += 1;
            }
        }
        counts
    }

    /// Adds another text's counts; pooled percentages are then token-weighted.
    pub fn merge(&mut self, other: &TextCounts) {
        assert_eq!(
            self.hits.len(),
            other.hits.len(),
            "counts from different lexicons"
        );
        self.word_count += other.word_count;
        for (a, b) in self.hits.iter_mut().zip(&other.hits) {
            *a += b;
        }
    }

    pub fn hits(&self, lexicon: &Lexicon, category: &str) -> Option<u64> {
        lexicon
            .category_id(category)
            .map(|id| self.hits[lexicon.slot_of(id)])
    }

    pub fn to_profile(&self, lexicon: &Lexicon) -> CategoryProfile {
        let mut hits = BTreeMap::new();
        let mut percentages = BTreeMap::new();
        for (id, name) in &lexicon.categories {
            let h = self.hits[lexicon.slot_of(*id)];
            let pct = if self.word_count == 0 {
                0.0
            } else {
                100.0 * h as f64 / self.word_count as f64
            };
            hits.insert(name.clone(), h);
            percentages.insert(name.clone(), pct);
        }
        let mut profile = CategoryProfile {
            word_count: self.word_count,
            hits,
            percentages,
            composites: BTreeMap::new(),
        };
        for def in lexicon.composites() {
            let value = compute_composite(&profile, def)
                .expect("composite categories are checked at lexicon construction");
            profile.composites.insert(def.name.clone(), value);
        }
        profile
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryProfile {
    pub word_count: u64,
    pub hits: BTreeMap<String, u64>,
    /// 100 × hits / word_count, or 0 for an empty text.
    pub percentages: BTreeMap<String, f64>,
    pub composites: BTreeMap<String, f64>,
}

impl CategoryProfile {
    pub fn is_empty(&self) -> bool {
        self.word_count == 0
    }

    /// Category percentage or composite value by name.
    pub fn value(&self, name: &str) -> Option<f64> {
        self.percentages
            .get(name)
            .or_else(|| self.composites.get(name))
            .copied()
    }
}

/// Analyzes one text. Every name in `measures` must resolve in the lexicon.
pub fn analyze(text: &str, lexicon: &Lexicon, measures: &MeasureSet) -> Result<CategoryProfile> {
    measures.validate(lexicon)?;
    Ok(TextCounts::count(text, lexicon).to_profile(lexicon))
}

/// `clamp(base + Σ weight·percentage, lo, hi)`.
pub fn compute_composite(profile: &CategoryProfile, def: &CompositeDef) -> Result<f64> {
    let mut value = def.base;
    for (cat, w) in &def.weights {
        let pct = profile
            .percentages
            .get(cat)
            .ok_or_else(|| Error::Config(format!("composite {} needs category {cat}", def.name)))?;
        value += w * pct;
    }
    Ok(value.clamp(def.lo, def.hi))
}

/// Ordered, de-duplicated list of category or composite names to measure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasureSet {
    names: Vec<String>,
}

const AUTHORITY_MEASURES: [&str; 6] = [
    "clout",
    "authentic",
    "ppron",
    "certitude",
    "allnone",
    "assent",
];
const ATTITUDE_MEASURES: [&str; 8] = [
    "tone",
    "affect",
    "tone_pos",
    "tone_neg",
    "emo_anx",
    "emo_pos",
    "tentat",
    "focusfuture",
];
const REASONING_MEASURES: [&str; 7] = [
    "cognition",
    "analytic",
    "authentic",
    "quantity",
    "number",
    "emotion",
    "affect",
];

impl MeasureSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut out: Vec<String> = Vec::new();
        for n in names {
            let n = n.into();
            let n = n.trim();
            if n.is_empty() {
                continue;
            }
            if !out.iter().any(|x| x == n) {
                out.push(n.to_string());
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("measure set is empty".into()));
        }
        Ok(MeasureSet { names: out })
    }

    /// Measures associated with each trait dimension. Some measures belong
    /// to more than one dimension.
    pub fn default_groups() -> Vec<(Factor, Vec<&'static str>)> {
        vec![
            (Factor::Authority, AUTHORITY_MEASURES.to_vec()),
            (Factor::Attitude, ATTITUDE_MEASURES.to_vec()),
            (Factor::Reasoning, REASONING_MEASURES.to_vec()),
        ]
    }

    /// `default` (all 19 measures), or a comma-separated list of names.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.trim() {
            "default" | "all" => Ok(MeasureSet::default()),
            list => MeasureSet::new(list.split(',')),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn validate(&self, lexicon: &Lexicon) -> Result<()> {
        for n in &self.names {
            if !lexicon.resolves(n) {
                return Err(Error::Config(format!(
                    "measure {n} is not defined by the lexicon"
                )));
            }
        }
        Ok(())
    }
}

impl Default for MeasureSet {
    fn default() -> Self {
        MeasureSet::new(
            MeasureSet::default_groups()
                .into_iter()
                .flat_map(|(_, names)| names),
        )
        .expect("default measures are non-empty")
    }
}

/// A token matched by at least two of the measured base categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapToken {
    pub position: usize,
    pub token: String,
    pub categories: Vec<String>,
}

/// Lists tokens that count toward two or more measured categories at once.
/// Composite measures are ignored since they have no word lists.
pub fn overlap_report(
    text: &str,
    lexicon: &Lexicon,
    measures: &MeasureSet,
) -> Result<Vec<OverlapToken>> {
    measures.validate(lexicon)?;
    let measured: Vec<(u32, &str)> = measures
        .names()
        .filter_map(|n| lexicon.category_id(n).map(|id| (id, n)))
        .collect();
    let mut out = Vec::new();
    for (position, token) in tokenize(text).into_iter().enumerate() {
        let matched = lexicon.match_token(&token);
        let categories: Vec<String> = measured
            .iter()
            .filter(|(id, _)| matched.contains(id))
            .map(|(_, n)| n.to_string())
            .collect();
        if categories.len() >= 2 {
            out.push(OverlapToken {
                position,
                token,
                categories,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn certitude_lex() -> Lexicon {
        Lexicon::from_words(
            &["certitude"],
            [("must", "certitude"), ("always", "certitude")],
        )
        .unwrap()
    }

    fn measures(names: &[&str]) -> MeasureSet {
        MeasureSet::new(names.iter().copied()).unwrap()
    }

    #[test]
    fn certitude_one_in_three() {
        let p = analyze("we must act", &certitude_lex(), &measures(&["certitude"])).unwrap();
        assert_eq!(p.word_count, 3);
        assert!((p.value("certitude").unwrap() - 33.33).abs() < 0.01);
        assert_eq!(p.percentages["certitude"], 100.0 / 3.0);
    }

    #[test]
    fn empty_text_profile() {
        let p = analyze("", &certitude_lex(), &measures(&["certitude"])).unwrap();
        assert!(p.is_empty());
        assert_eq!(p.word_count, 0);
        assert!(p.percentages.values().all(|v| *v == 0.0));
    }

    #[test]
    fn stem_hits() {
        let lex = Lexicon::from_words(&["affect"], [("help*", "affect")]).unwrap();
        let p = analyze("helping helpers helped me", &lex, &measures(&["affect"])).unwrap();
        assert_eq!(p.percentages["affect"], 75.0);
    }

    #[test]
    fn literal_and_stem_in_same_category_count_once() {
        let lex = Lexicon::from_words(&["a"], [("helpful", "a"), ("help*", "a")]).unwrap();
        let p = analyze("helpful", &lex, &measures(&["a"])).unwrap();
        assert_eq!(p.hits["a"], 1);
    }

    #[test]
    fn unknown_measure_is_config_error() {
        assert!(matches!(
            analyze("x", &certitude_lex(), &measures(&["tone"])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn composite_arithmetic() {
        let lex = Lexicon::from_words(&["tone_pos", "tone_neg"], [("good", "tone_pos")]).unwrap();
        let def = CompositeDef {
            name: "tone".into(),
            base: 50.0,
            weights: vec![("tone_pos".into(), 1.0), ("tone_neg".into(), -1.0)],
            lo: 0.0,
            hi: 100.0,
        };
        let mut p = TextCounts::empty(&lex).to_profile(&lex);
        p.percentages.insert("tone_pos".into(), 4.0);
        p.percentages.insert("tone_neg".into(), 1.0);
        assert_eq!(compute_composite(&p, &def).unwrap(), 53.0);
        p.percentages.insert("tone_pos".into(), 80.0);
        p.percentages.insert("tone_neg".into(), 0.0);
        assert_eq!(compute_composite(&p, &def).unwrap(), 100.0);

        let zero = CompositeDef {
            weights: vec![("tone_pos".into(), 1.0), ("tone_neg".into(), -1.0)],
            ..def.clone()
        };
        let empty = TextCounts::empty(&lex).to_profile(&lex);
        assert_eq!(compute_composite(&empty, &zero).unwrap(), 50.0);

        p.percentages.remove("tone_neg");
        assert!(matches!(compute_composite(&p, &def), Err(Error::Config(_))));
    }

    #[test]
    fn default_measures_have_nineteen_members() {
        let m = MeasureSet::default();
        assert_eq!(m.len(), 19);
        let grouped: usize = MeasureSet::default_groups()
            .iter()
            .map(|(_, v)| v.len())
            .sum();
        assert_eq!(grouped, 21);
    }

    #[test]
    fn pooled_counts_are_token_weighted() {
        let lex = Lexicon::from_words(&["x"], [("hit", "x")]).unwrap();
        let mut a = TextCounts::count(&format!("hit{}", " pad".repeat(9)), &lex);
        let b = TextCounts::count(&"pad ".repeat(30), &lex);
        assert_eq!(a.to_profile(&lex).percentages["x"], 10.0);
        a.merge(&b);
        assert_eq!(a.word_count, 40);
        assert_eq!(a.to_profile(&lex).percentages["x"], 2.5);
    }

    #[test]
    fn overlap_lists_multi_category_tokens() {
        let lex =
            Lexicon::parse("%\n1 affect\n2 tone_pos\n3 number\n%\nhappy 1,2\nsad 1\n").unwrap();
        let report =
            overlap_report("happy sad HAPPY", &lex, &measures(&["affect", "tone_pos"])).unwrap();
        assert_eq!(report.len(), 2);
        assert_eq!(report[0].position, 0);
        assert_eq!(report[1].position, 2);
        assert_eq!(report[0].categories, ["affect", "tone_pos"]);
        let only_one = overlap_report("happy", &lex, &measures(&["affect", "number"])).unwrap();
        assert!(only_one.is_empty());
    }
}
