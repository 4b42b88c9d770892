//! Browser demo: render a persona prompt, measure a text, and recover a
//! planted effect from a simulated campaign.

use std::collections::BTreeMap;

use persona_bench::lexicon::{
    analyze, overlap_report, profile_transcripts, Lexicon, MeasureSet, ObservationTable, Unit,
};
use persona_bench::persona::{enumerate_personas, PersonaSpec, PromptConfig};
use persona_bench::report::{render_table, Format, ReportLayout};
use persona_bench::session::{
    run_campaign, CampaignPlan, ConversationScript, MockBackend, MockFixture, PersonaRule,
    SessionOptions,
};
use persona_bench::stats::{fit_all, term_name, Coding};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct MeasureValue {
    name: String,
    value: f64,
}

#[derive(Serialize)]
struct Overlap {
    position: usize,
    token: String,
    categories: Vec<String>,
}

#[derive(Serialize)]
struct TextReport {
    word_count: u64,
    measures: Vec<MeasureValue>,
    overlaps: Vec<Overlap>,
}

#[derive(Serialize)]
struct Coefficient {
    term: String,
    estimate: f64,
    p_value: f64,
}

#[derive(Serialize)]
struct Simulation {
    observations: usize,
    tone_pos: Vec<Coefficient>,
    number: Vec<Coefficient>,
    table: String,
}

pub fn render_prompt_text(persona_id: &str, name: &str) -> Result<String, String> {
    let spec = PersonaSpec::from_id(persona_id, name).map_err(|e| e.to_string())?;
    PromptConfig::builtin()
        .render(&spec)
        .map(|r| r.text)
        .map_err(|e| e.to_string())
}

pub fn analyze_json(text: &str) -> Result<String, String> {
    let lexicon = Lexicon::demo();
    let measures = MeasureSet::default();
    let profile = analyze(text, &lexicon, &measures).map_err(|e| e.to_string())?;
    let report = TextReport {
        word_count: profile.word_count,
        measures: measures
            .names()
            .map(|n| MeasureValue {
                name: n.to_string(),
                value: profile.value(n).unwrap_or(0.0),
            })
            .collect(),
        overlaps: overlap_report(text, &lexicon, &measures)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|o| Overlap {
                position: o.position,
                token: o.token,
                categories: o.categories,
            })
            .collect(),
    };
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

/// A fixture planting positive-tone words at `optimistic` / `pessimistic`
/// rates, number words at a fixed rate for everyone, and filler elsewhere.
pub fn planted_fixture(optimistic: f64, pessimistic: f64) -> MockFixture {
    let demo = MockFixture::builtin();
    let rule = |pattern: &str, category: &str, rate: f64| PersonaRule {
        pattern: pattern.into(),
        lines: vec!["Thank you.".into()],
        rates: BTreeMap::from([(category.to_string(), rate)]),
    };
    let words = ["tone_pos", "number"].map(|c| (c.to_string(), demo.words[c].clone()));
    MockFixture {
        response_tokens: 50,
        filler: demo.filler.clone(),
        words: BTreeMap::from(words),
        personas: vec![
            rule("*", "number", 0.02),
            rule("opt-*", "tone_pos", optimistic),
            rule("pes-*", "tone_pos", pessimistic),
        ],
    }
}

pub fn simulate_json(
    seed: u64,
    optimistic: f64,
    pessimistic: f64,
    sessions: usize,
) -> Result<String, String> {
    let err = |e: persona_bench::Error| e.to_string();
    let fixture = planted_fixture(optimistic, pessimistic);
    fixture.validate().map_err(err)?;
    let backend = MockBackend::new("simulated", fixture);
    let personas = enumerate_personas("Alex").map_err(err)?;
    let prompts = PromptConfig::builtin();
    let script = ConversationScript::builtin();
    let plan = CampaignPlan {
        personas: &personas,
        prompts: &prompts,
        script: &script,
        sessions_per_persona: sessions.clamp(1, 50),
        seed,
        parallel: 1,
        options: SessionOptions::default(),
    };
    let transcripts = run_campaign(&plan, &backend, None)
        .map_err(err)?
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let measures = MeasureSet::new(["tone_pos", "number"]).map_err(err)?;
    let obs = profile_transcripts(&transcripts, &Lexicon::demo(), &measures, Unit::Response)
        .map_err(err)?;
    let table = ObservationTable::from_observations(&obs, &measures).map_err(err)?;
    let fits = fit_all(&table, &measures, Coding::Effect).map_err(err)?;
    let coefficients = |measure: &str| -> Vec<Coefficient> {
        fits.get("simulated", measure)
            .map(|f| {
                (1..8)
                    .map(|j| Coefficient {
                        term: term_name(j),
                        estimate: f.fit.coefficients[j],
                        p_value: f.fit.p_values[j],
                    })
                    .collect()
            })
            .unwrap_or_default()
    };
    let rendered = render_table(
        &fits,
        &ReportLayout::flat(["tone_pos", "number"]),
        Format::Text,
    )
    .map_err(err)?;
    let sim = Simulation {
        observations: table.rows.len(),
        tone_pos: coefficients("tone_pos"),
        number: coefficients("number"),
        table: rendered,
    };
    serde_json::to_string(&sim).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn render_prompt(persona_id: &str, name: &str) -> Result<String, JsValue> {
    render_prompt_text(persona_id, name).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn analyze_text(text: &str) -> Result<String, JsValue> {
    analyze_json(text).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate(
    seed: u32,
    optimistic: f64,
    pessimistic: f64,
    sessions: u32,
) -> Result<String, JsValue> {
    simulate_json(seed as u64, optimistic, pessimistic, sessions as usize)
        .map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_renders() {
        let text = render_prompt_text("opt-sub-ana", "Rae").unwrap();
        assert!(text.contains("Only speak as Rae"));
        assert!(render_prompt_text("nope", "Rae").is_err());
    }

    #[test]
    fn text_analysis() {
        let v: serde_json::Value =
            serde_json::from_str(&analyze_json("We must act now").unwrap()).unwrap();
        assert_eq!(v["word_count"], 4);
        let certitude = v["measures"]
            .as_array()
            .unwrap()
            .iter()
            .find(|m| m["name"] == "certitude")
            .unwrap();
        assert_eq!(certitude["value"], 25.0);
    }

    #[test]
    fn simulation_recovers_planted_tone() {
        let v: serde_json::Value =
            serde_json::from_str(&simulate_json(7, 0.25, 0.05, 2).unwrap()).unwrap();
        assert_eq!(v["observations"], 160);
        let b1 = &v["tone_pos"][0];
        assert!(b1["estimate"].as_f64().unwrap() > 5.0);
        assert!(b1["p_value"].as_f64().unwrap() < 0.01);
        assert!(v["table"].as_str().unwrap().contains("Tone_Pos"));
        assert_eq!(v["number"].as_array().unwrap().len(), 7);
    }

    #[test]
    fn invalid_rates_rejected() {
        assert!(simulate_json(1, 1.5, 0.05, 1).is_err());
        assert!(simulate_json(1, 0.99, 0.05, 1).is_err());
    }
}
