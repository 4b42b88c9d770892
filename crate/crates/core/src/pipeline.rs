//! End-to-end run: campaign, analyze, fit, report, drift log.
//!
//! Stages talk only through files in `out_dir`, so any stage can be re-run
//! from the artifacts of the one before it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::drift::{write_drift_log, Baseline, DriftPolicy, ReinjectMode};
use crate::error::{Error, Result};
use crate::lexicon::{profile_transcripts, Lexicon, MeasureSet, ObservationTable, Unit};
use crate::persona::{enumerate_personas, PromptConfig, TraitCell};
use crate::report::{distinguishing_count, render_table, Format, ReportLayout};
use crate::session::{
    read_transcripts, run_campaign, BackendConfig, CampaignPlan, ChatBackend, ConversationScript,
    DriftSetup, SessionOptions, Transcript, TranscriptWriter,
};
use crate::stats::{fit_all, Coding, FitSet};

pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const FITS_FILE: &str = "fits.csv";
pub const REPORT_MD_FILE: &str = "report.md";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const DRIFT_FILE: &str = "drift.csv";

/// Annotated example configuration, printed by `pipeline --print-schema`.
pub const CONFIG_SCHEMA: &str = include_str!("../assets/pipeline.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_min_categories")]
    pub min_categories: usize,
    #[serde(default = "default_reinject")]
    pub reinject: ReinjectMode,
    #[serde(default = "default_cooldown")]
    pub cooldown: usize,
    /// Baseline CSV as written by `calibrate`.
    #[serde(default)]
    pub baseline: Option<PathBuf>,
}

fn default_window() -> usize {
    DriftPolicy::default().window
}
fn default_threshold() -> f64 {
    DriftPolicy::default().threshold
}
fn default_min_categories() -> usize {
    DriftPolicy::default().min_categories
}
fn default_reinject() -> ReinjectMode {
    DriftPolicy::default().reinject
}
fn default_cooldown() -> usize {
    DriftPolicy::default().cooldown
}

impl DriftConfig {
    pub fn policy(&self) -> DriftPolicy {
        DriftPolicy {
            window: self.window,
            threshold: self.threshold,
            min_categories: self.min_categories,
            reinject: self.reinject,
            cooldown: self.cooldown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sessions")]
    pub sessions_per_persona: usize,
    #[serde(default = "default_agent_name")]
    pub agent_name: String,
    /// Prompt template and slot vocabulary (TOML); built-in when absent.
    #[serde(default)]
    pub prompt: Option<PathBuf>,
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    /// Measure names; the default set of nineteen when absent.
    #[serde(default)]
    pub measures: Option<Vec<String>>,
    #[serde(default)]
    pub unit: Unit,
    #[serde(default)]
    pub coding: Coding,
    #[serde(default = "default_layout")]
    pub layout: String,
    #[serde(default = "default_parallel")]
    pub parallel: usize,
    #[serde(default)]
    pub reset_per_turn: bool,
    #[serde(rename = "backend")]
    pub backends: Vec<BackendConfig>,
    #[serde(default)]
    pub drift: Option<DriftConfig>,
}

fn default_sessions() -> usize {
    10
}
fn default_agent_name() -> String {
    "Alex".into()
}
fn default_layout() -> String {
    "default".into()
}
fn default_parallel() -> usize {
    4
}

impl PipelineConfig {
    pub fn parse(source: &str) -> Result<Self> {
        toml::from_str(source).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&crate::error::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn measure_set(&self) -> Result<MeasureSet> {
        match &self.measures {
            Some(names) => MeasureSet::new(names.iter().map(String::as_str)),
            None => Ok(MeasureSet::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Campaign,
    Analyze,
    Fit,
    Report,
    Drift,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Campaign,
        Stage::Analyze,
        Stage::Fit,
        Stage::Report,
        Stage::Drift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Campaign => "campaign",
            Stage::Analyze => "analyze",
            Stage::Fit => "fit",
            Stage::Report => "report",
            Stage::Drift => "drift",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage {s:?}")))
    }
}

/// Where a pipeline failure happened. `stage` is `None` for configuration
/// problems found before any stage ran.
#[derive(Debug, thiserror::Error)]
#[error("{}: {cause}", .stage.map_or("config", Stage::name))]
pub struct PipelineError {
    pub stage: Option<Stage>,
    pub cause: Error,
}

impl PipelineError {
    fn config(cause: Error) -> Self {
        PipelineError { stage: None, cause }
    }

    /// 1 configuration, 2 backend, 3 analysis or fitting.
    pub fn exit_code(&self) -> i32 {
        match (self.stage, &self.cause) {
            (None, _) => 1,
            (Some(Stage::Campaign), Error::Config(_) | Error::InvalidArgument(_)) => 1,
            (Some(Stage::Campaign), _) => 2,
            (Some(_), _) => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineSummary {
    pub stages_run: Vec<Stage>,
    pub transcripts: usize,
    pub failed_sessions: Vec<String>,
    pub observations: usize,
    pub fits: usize,
    pub skipped_fits: usize,
    pub distinguishing: Vec<(String, usize)>,
}

/// Everything loaded and checked before the first stage runs.
struct Prepared {
    out_dir: PathBuf,
    prompts: PromptConfig,
    script: ConversationScript,
    lexicon: Lexicon,
    measures: MeasureSet,
    drift: Option<DriftSetup>,
    backends: Vec<Arc<dyn ChatBackend>>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn prepare(config: &PipelineConfig, base_dir: &Path, from: Stage) -> Result<Prepared> {
    if config.backends.is_empty() {
        return Err(Error::Config("at least one [[backend]] is required".into()));
    }
    let mut seen = Vec::new();
    for b in &config.backends {
        b.validate()?;
        if seen.contains(&b.model) {
            return Err(Error::Config(format!(
                "duplicate backend model id {}",
                b.model
            )));
        }
        seen.push(b.model.clone());
    }
    if config.sessions_per_persona == 0 {
        return Err(Error::Config("sessions_per_persona must be >= 1".into()));
    }
    let prompts = match &config.prompt {
        Some(p) => PromptConfig::load(&resolve(base_dir, p))?,
        None => PromptConfig::builtin(),
    };
    let script = match &config.script {
        Some(p) => ConversationScript::load(&resolve(base_dir, p))?,
        None => ConversationScript::builtin(),
    };
    let lexicon = match &config.lexicon {
        Some(p) => Lexicon::load(&resolve(base_dir, p))?,
        None => Lexicon::demo(),
    };
    let measures = config.measure_set()?;
    measures.validate(&lexicon)?;
    // Render every persona once so template problems surface now.
    for spec in enumerate_personas(&config.agent_name)? {
        prompts.render(&spec)?;
    }
    let drift = match &config.drift {
        None => None,
        Some(d) => {
            let policy = d.policy();
            policy.validate()?;
            let mut baselines = BTreeMap::new();
            if let Some(p) = &d.baseline {
                for b in Baseline::read_csv(&resolve(base_dir, p))? {
                    for s in &b.stats {
                        if !lexicon.resolves(&s.measure) {
                            return Err(Error::Config(format!(
                                "baseline measure {} is not defined by the lexicon",
                                s.measure
                            )));
                        }
                    }
                    baselines.insert(b.persona_id.clone(), b);
                }
            }
            if policy.reinject == ReinjectMode::OnDrift {
                if let Some(c) = TraitCell::all().find(|c| !baselines.contains_key(&c.id())) {
                    return Err(Error::Config(format!(
                        "on_drift re-injection needs a baseline for every persona; {} has none",
                        c.id()
                    )));
                }
            }
            Some(DriftSetup {
                policy,
                baselines,
                lexicon: lexicon.clone(),
            })
        }
    };
    let out_dir = resolve(base_dir, &config.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let backends = if from == Stage::Campaign {
        config
            .backends
            .iter()
            .map(|b| b.build(base_dir))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(Prepared {
        out_dir,
        prompts,
        script,
        lexicon,
        measures,
        drift,
        backends,
    })
}

/// Loads complete transcripts, ordered by model (config order), persona
/// and session so downstream files do not depend on scheduling.
fn load_transcripts(
    path: &Path,
    config: &PipelineConfig,
    summary: &mut PipelineSummary,
) -> Result<Vec<Transcript>> {
    let records = read_transcripts(path)?;
    let mut out = Vec::new();
    for r in records {
        if let Some(e) = &r.error {
            let t = &r.transcript;
            summary.failed_sessions.push(format!(
                "{}/{}#{}: {e}",
                t.model_id, t.persona_id, t.session_index
            ));
        } else {
            out.push(r.transcript);
        }
    }
    let rank = |model: &str| {
        config
            .backends
            .iter()
            .position(|b| b.model == model)
            .unwrap_or(usize::MAX)
    };
    let cell = |id: &str| {
        TraitCell::from_id(id)
            .map(|c| c.index())
            .unwrap_or(usize::MAX)
    };
    out.sort_by(|a, b| {
        (
            rank(&a.model_id),
            &a.model_id,
            cell(&a.persona_id),
            &a.persona_id,
            a.session_index,
        )
            .cmp(&(
                rank(&b.model_id),
                &b.model_id,
                cell(&b.persona_id),
                &b.persona_id,
                b.session_index,
            ))
    });
    Ok(out)
}

/// Runs the pipeline starting at `from`. Relative paths in the config resolve
/// against `base_dir`.
pub fn run_pipeline(
    config: &PipelineConfig,
    base_dir: &Path,
    from: Stage,
) -> std::result::Result<PipelineSummary, PipelineError> {
    let prep = prepare(config, base_dir, from).map_err(PipelineError::config)?;
    let mut summary = PipelineSummary::default();
    let at = |stage: Stage| {
        move |cause: Error| PipelineError {
            stage: Some(stage),
            cause,
        }
    };
    let path = |name: &str| prep.out_dir.join(name);

    if from <= Stage::Campaign {
        run_campaign_stage(config, &prep, &path(TRANSCRIPTS_FILE)).map_err(at(Stage::Campaign))?;
        summary.stages_run.push(Stage::Campaign);
    }

    let transcripts = load_transcripts(&path(TRANSCRIPTS_FILE), config, &mut summary)
        .map_err(at(Stage::Analyze))?;
    summary.transcripts = transcripts.len();

    if from <= Stage::Analyze {
        profile_transcripts(&transcripts, &prep.lexicon, &prep.measures, config.unit)
            .and_then(|o| ObservationTable::from_observations(&o, &prep.measures))
            .and_then(|t| t.write_csv(&path(OBSERVATIONS_FILE)))
            .map_err(at(Stage::Analyze))?;
        summary.stages_run.push(Stage::Analyze);
    }

    let table = ObservationTable::read_csv(&path(OBSERVATIONS_FILE)).map_err(at(Stage::Fit))?;
    summary.observations = table.rows.len();

    if from <= Stage::Fit {
        fit_all(&table, &prep.measures, config.coding)
            .and_then(|f| f.write_csv(&path(FITS_FILE)))
            .map_err(at(Stage::Fit))?;
        summary.stages_run.push(Stage::Fit);
    }

    let fits = FitSet::read_csv(&path(FITS_FILE)).map_err(at(Stage::Report))?;
    summary.fits = fits.fits.len();
    summary.skipped_fits = fits.skipped.len();
    summary.distinguishing = distinguishing_count(&fits);

    if from <= Stage::Report {
        write_reports(&fits, &config.layout, &prep.out_dir).map_err(at(Stage::Report))?;
        summary.stages_run.push(Stage::Report);
    }

    write_drift_log(&transcripts, &path(DRIFT_FILE)).map_err(at(Stage::Drift))?;
    summary.stages_run.push(Stage::Drift);
    Ok(summary)
}

/// Runs only the campaign stage, writing transcripts to `out`.
pub fn run_campaign_only(
    config: &PipelineConfig,
    base_dir: &Path,
    out: &Path,
) -> std::result::Result<(), PipelineError> {
    let prep = prepare(config, base_dir, Stage::Campaign).map_err(PipelineError::config)?;
    run_campaign_stage(config, &prep, out).map_err(|cause| PipelineError {
        stage: Some(Stage::Campaign),
        cause,
    })
}

fn run_campaign_stage(config: &PipelineConfig, prep: &Prepared, out: &Path) -> Result<()> {
    let personas = enumerate_personas(&config.agent_name)?;
    let writer = TranscriptWriter::create(out)?;
    let plan = CampaignPlan {
        personas: &personas,
        prompts: &prep.prompts,
        script: &prep.script,
        sessions_per_persona: config.sessions_per_persona,
        seed: config.seed,
        parallel: config.parallel.max(1),
        options: SessionOptions {
            reset_per_turn: config.reset_per_turn,
            drift: prep.drift.clone(),
        },
    };
    for backend in &prep.backends {
        let outcomes = run_campaign(&plan, backend.as_ref(), Some(&writer))?;
        // A backend that failed every session is fatal; scattered failures
        // are recorded in the transcript file and the run goes on.
        if let Some(Err(first)) = outcomes.first() {
            if outcomes.iter().all(|o| o.is_err()) {
                return Err(Error::EmptyResult(format!(
                    "every session on {} failed; first: {first}",
                    backend.model_id()
                )));
            }
        }
    }
    Ok(())
}

/// Writes `report.md` and `report.csv` for the named layout.
pub fn write_reports(fits: &FitSet, layout: &str, out_dir: &Path) -> Result<()> {
    let layout = ReportLayout::named(layout, fits)?;
    for (name, format) in [
        (REPORT_MD_FILE, Format::Markdown),
        (REPORT_CSV_FILE, Format::Csv),
    ] {
        let text = render_table(fits, &layout, format)?;
        let p = out_dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(out: &Path, sessions: usize) -> PipelineConfig {
        let mut c = PipelineConfig::parse(CONFIG_SCHEMA).unwrap();
        c.out_dir = out.to_path_buf();
        c.sessions_per_persona = sessions;
        c.drift = None;
        c
    }

    #[test]
    fn schema_example_parses() {
        let c = PipelineConfig::parse(CONFIG_SCHEMA).unwrap();
        assert_eq!(c.backends.len(), 2);
        assert_eq!(c.sessions_per_persona, 10);
        assert!(c.drift.is_some());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::parse("out_dir = \"x\"\nbackend = []\nsessions = 3\n").is_err());
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("monitor".parse::<Stage>().is_err());
    }

    #[test]
    fn missing_lexicon_fails_before_backends_are_built() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), 1);
        c.lexicon = Some("nope.lex".into());
        c.backends = vec![BackendConfig::http(
            "gpt",
            "http://127.0.0.1:9/v1/chat/completions",
        )];
        let err = run_pipeline(&c, dir.path(), Stage::Campaign).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.stage.is_none());
        assert!(!dir.path().join(TRANSCRIPTS_FILE).exists());
    }

    #[test]
    fn on_drift_needs_baselines() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), 1);
        c.drift = Some(DriftConfig {
            window: 3,
            threshold: 2.0,
            min_categories: 2,
            reinject: ReinjectMode::OnDrift,
            cooldown: 2,
            baseline: None,
        });
        assert_eq!(
            run_pipeline(&c, dir.path(), Stage::Campaign)
                .unwrap_err()
                .exit_code(),
            1
        );
    }

    #[test]
    fn small_run_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), 2);
        let s = run_pipeline(&c, dir.path(), Stage::Campaign).unwrap();
        assert_eq!(s.transcripts, 2 * 8 * 2);
        assert_eq!(s.observations, 2 * 8 * 2 * 10);
        assert_eq!(s.fits + s.skipped_fits, 2 * 19);
        let report = std::fs::read_to_string(dir.path().join(REPORT_MD_FILE)).unwrap();
        let fits = std::fs::read(dir.path().join(FITS_FILE)).unwrap();

        std::fs::remove_file(dir.path().join(REPORT_MD_FILE)).unwrap();
        std::fs::remove_file(dir.path().join(FITS_FILE)).unwrap();
        let s = run_pipeline(&c, dir.path(), Stage::Fit).unwrap();
        assert_eq!(s.stages_run, [Stage::Fit, Stage::Report, Stage::Drift]);
        assert_eq!(std::fs::read(dir.path().join(FITS_FILE)).unwrap(), fits);
        assert_eq!(
            std::fs::read_to_string(dir.path().join(REPORT_MD_FILE)).unwrap(),
            report
        );
    }

    #[test]
    fn resume_without_upstream_artifacts_is_a_stage_error() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), 1);
        let err = run_pipeline(&c, dir.path(), Stage::Analyze).unwrap_err();
        assert_eq!(err.stage, Some(Stage::Analyze));
        assert_eq!(err.exit_code(), 3);
    }
}
