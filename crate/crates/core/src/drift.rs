//! Style drift monitoring and persona re-injection.
//!
//! A [`Baseline`] holds, per measure, the mean and sample SD of
//! response-level values for one persona. During a session the monitor
//! keeps the last `window` responses; once the window is full it scores
//! each measure as `z = (window mean - baseline mean) / max(sd, 0.5)` and
//! flags drift when at least `min_categories` measures exceed the threshold
//! in absolute value.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{analyze, Lexicon, MeasureSet};
use crate::session::Transcript;

/// SD floor in percentage points.
pub const SD_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureStat {
    pub measure: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub persona_id: String,
    pub n: usize,
    pub stats: Vec<MeasureStat>,
}

impl Baseline {
    pub fn stat(&self, measure: &str) -> Option<&MeasureStat> {
        self.stats.iter().find(|s| s.measure == measure)
    }

    /// CSV with columns `persona_id,measure,mean,sd,n`.
    pub fn write_csv(baselines: &[Baseline], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["persona_id", "measure", "mean", "sd", "n"])?;
        for b in baselines {
            for s in &b.stats {
                w.write_record([
                    b.persona_id.clone(),
                    s.measure.clone(),
                    s.mean.to_string(),
                    s.sd.to_string(),
                    b.n.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<Baseline>> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out: Vec<Baseline> = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = || Error::Config(format!("{}: bad baseline row {}", path.display(), i + 2));
            if rec.len() != 5 {
                return Err(bad());
            }
            let num = |j: usize| rec[j].parse::<f64>().map_err(|_| bad());
            let n: usize = rec[4].parse().map_err(|_| bad())?;
            let stat = MeasureStat {
                measure: rec[1].to_string(),
                mean: num(2)?,
                sd: num(3)?,
            };
            match out.iter_mut().find(|b| b.persona_id == rec[0]) {
                Some(b) => b.stats.push(stat),
                None => out.push(Baseline {
                    persona_id: rec[0].to_string(),
                    n,
                    stats: vec![stat],
                }),
            }
        }
        Ok(out)
    }
}

/// Per-measure mean and (n-1)-denominator SD over individual responses.
pub fn calibrate_responses<'a>(
    persona_id: &str,
    responses: impl IntoIterator<Item = &'a str>,
    lexicon: &Lexicon,
    measures: &MeasureSet,
) -> Result<Baseline> {
    measures.validate(lexicon)?;
    let names: Vec<&str> = measures.names().collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for text in responses {
        let profile = analyze(text, lexicon, measures)?;
        for (col, name) in columns.iter_mut().zip(&names) {
            col.push(profile.value(name).expect("validated measure"));
        }
    }
    let n = columns.first().map_or(0, Vec::len);
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "calibration for {persona_id} needs at least 2 responses, got {n}"
        )));
    }
    let stats = names
        .iter()
        .zip(&columns)
        .map(|(name, xs)| {
            let mean = xs.iter().sum::<f64>() / n as f64;
            let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
            MeasureStat {
                measure: name.to_string(),
                mean,
                sd: (ss / (n - 1) as f64).sqrt(),
            }
        })
        .collect();
    Ok(Baseline {
        persona_id: persona_id.to_string(),
        n,
        stats,
    })
}

/// Baseline for one persona from every complete transcript of that persona.
pub fn calibrate(
    transcripts: &[Transcript],
    persona_id: &str,
    lexicon: &Lexicon,
    measures: &MeasureSet,
) -> Result<Baseline> {
    calibrate_responses(
        persona_id,
        transcripts
            .iter()
            .filter(|t| t.persona_id == persona_id)
            .flat_map(Transcript::responses),
        lexicon,
        measures,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ReinjectMode {
    Periodic { every: usize },
    OnDrift,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftPolicy {
    pub window: usize,
    pub threshold: f64,
    pub min_categories: usize,
    pub reinject: ReinjectMode,
    pub cooldown: usize,
}

impl Default for DriftPolicy {
    fn default() -> Self {
        DriftPolicy {
            window: 3,
            threshold: 2.0,
            min_categories: 2,
            reinject: ReinjectMode::OnDrift,
            cooldown: 2,
        }
    }
}

impl DriftPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("drift window must be >= 1".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Config("drift threshold must be > 0".into()));
        }
        if self.min_categories == 0 {
            return Err(Error::Config("drift min_categories must be >= 1".into()));
        }
        if let ReinjectMode::Periodic { every: 0 } = self.reinject {
            return Err(Error::Config(
                "periodic re-injection interval must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEntry {
    pub measure: String,
    pub window_mean: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub turn: usize,
    pub window_len: usize,
    pub entries: Vec<DriftEntry>,
    pub breached: Vec<String>,
    pub triggered: bool,
}

/// Scores a window of responses against a baseline.
pub fn check_window<S: AsRef<str>>(
    turn: usize,
    window: &[S],
    baseline: &Baseline,
    lexicon: &Lexicon,
    policy: &DriftPolicy,
) -> Result<DriftReport> {
    if window.is_empty() {
        return Err(Error::InvalidArgument("drift window is empty".into()));
    }
    let measures = MeasureSet::new(baseline.stats.iter().map(|s| s.measure.as_str()))?;
    let profiles = window
        .iter()
        .map(|t| analyze(t.as_ref(), lexicon, &measures))
        .collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::with_capacity(baseline.stats.len());
    let mut breached = Vec::new();
    for stat in &baseline.stats {
        let window_mean = profiles
            .iter()
            .map(|p| p.value(&stat.measure).expect("validated measure"))
            .sum::<f64>()
            / profiles.len() as f64;
        let z = (window_mean - stat.mean) / stat.sd.max(SD_FLOOR);
        if z.abs() > policy.threshold {
            breached.push(stat.measure.clone());
        }
        entries.push(DriftEntry {
            measure: stat.measure.clone(),
            window_mean,
            z,
        });
    }
    Ok(DriftReport {
        turn,
        window_len: window.len(),
        triggered: breached.len() >= policy.min_categories,
        entries,
        breached,
    })
}

/// Decides whether to append the persona section after `turn` exchanges.
///
/// `Periodic(m)` injects at turns m, 2m, ...; `OnDrift` injects when the
/// report triggered and more than `cooldown` turns have passed since the
/// previous injection; `Off` never injects.
pub fn maybe_reinject(
    policy: &DriftPolicy,
    turn: usize,
    report: Option<&DriftReport>,
    persona_section: &str,
    last_injection: Option<usize>,
) -> Option<String> {
    let inject = match policy.reinject {
        ReinjectMode::Periodic { every } => every > 0 && turn > 0 && turn.is_multiple_of(every),
        ReinjectMode::OnDrift => {
            report.is_some_and(|r| r.triggered)
                && last_injection.is_none_or(|last| turn > last + policy.cooldown)
        }
        ReinjectMode::Off => false,
    };
    inject.then(|| persona_section.to_string())
}

/// Per-session monitor state.
pub struct DriftMonitor<'a> {
    policy: DriftPolicy,
    baseline: Option<&'a Baseline>,
    lexicon: &'a Lexicon,
    recent: VecDeque<String>,
    last_injection: Option<usize>,
}

impl<'a> DriftMonitor<'a> {
    pub fn new(policy: DriftPolicy, baseline: Option<&'a Baseline>, lexicon: &'a Lexicon) -> Self {
        DriftMonitor {
            policy,
            baseline,
            lexicon,
            recent: VecDeque::with_capacity(policy.window + 1),
            last_injection: None,
        }
    }

    /// Records the agent response for `turn`. Returns the drift report (only
    /// once the window is full and a baseline is present) and the text to
    /// inject, if any.
    pub fn observe(
        &mut self,
        turn: usize,
        response: &str,
        persona_section: &str,
    ) -> Result<(Option<DriftReport>, Option<String>)> {
        self.recent.push_back(response.to_string());
        while self.recent.len() > self.policy.window {
            self.recent.pop_front();
        }
        let report = match self.baseline {
            Some(b) if self.recent.len() == self.policy.window => {
                let window: Vec<&str> = self.recent.iter().map(String::as_str).collect();
                Some(check_window(turn, &window, b, self.lexicon, &self.policy)?)
            }
            _ => None,
        };
        let injection = maybe_reinject(
            &self.policy,
            turn,
            report.as_ref(),
            persona_section,
            self.last_injection,
        );
        if injection.is_some() {
            self.last_injection = Some(turn);
        }
        Ok((report, injection))
    }
}

/// One line per drift report or injection across a set of transcripts.
pub fn write_drift_log(transcripts: &[Transcript], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model", "persona", "session", "turn", "event", "breached", "detail",
    ])?;
    for t in transcripts {
        for r in &t.drift {
            let max_z = r.entries.iter().map(|e| e.z.abs()).fold(0.0, f64::max);
            w.write_record([
                t.model_id.as_str(),
                &t.persona_id,
                &t.session_index.to_string(),
                &r.turn.to_string(),
                if r.triggered { "drift" } else { "check" },
                &r.breached.join(";"),
                &format!("max|z|={max_z:.3}"),
            ])?;
        }
        for inj in &t.injections {
            w.write_record([
                t.model_id.as_str(),
                &t.persona_id,
                &t.session_index.to_string(),
                &inj.turn.to_string(),
                "inject",
                "",
                "",
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
