use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use persona_bench::drift::{calibrate, Baseline};
use persona_bench::error::Error;
use persona_bench::lexicon::{
    overlap_report, profile_transcripts, Lexicon, MeasureSet, ObservationTable, Unit,
};
use persona_bench::persona::{enumerate_personas, PersonaSpec, PromptConfig, TraitCell};
use persona_bench::pipeline::{
    run_campaign_only, run_pipeline, PipelineConfig, PipelineError, Stage, CONFIG_SCHEMA,
};
use persona_bench::report::{render_table, Format, ReportLayout};
use persona_bench::session::{read_transcripts, Transcript};
use persona_bench::stats::{fit_all, Coding, FitSet};

#[derive(Parser)]
#[command(
    name = "persona-bench",
    version,
    about = "Persona prompt consistency benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the eight personas or render one system prompt.
    Personas {
        #[command(subcommand)]
        action: PersonasAction,
    },
    /// Run the conversation campaign only and write transcripts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Transcript file (default: <out_dir>/transcripts.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure lexicon categories in transcripts.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        lex: LexiconArgs,
        #[arg(long, default_value = "response")]
        unit: Unit,
        /// Print tokens counted by two or more measured categories instead.
        #[arg(long)]
        overlap_report: bool,
    },
    /// Fit the factorial regression per model and measure.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated measures, or "default" for every table column.
        #[arg(long)]
        measures: Option<String>,
        #[arg(long, default_value = "effect")]
        coding: Coding,
    },
    /// Render fitted coefficients as a table.
    Report {
        #[arg(long)]
        fits: PathBuf,
        #[arg(long, default_value = "default")]
        layout: String,
        #[arg(long, default_value = "md")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute per-persona drift baselines from transcripts.
    Calibrate {
        #[arg(long = "in")]
        input: PathBuf,
        /// Persona id, or "all".
        #[arg(long, default_value = "all")]
        persona: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        lex: LexiconArgs,
    },
    /// Run every stage from one config file.
    Pipeline {
        #[arg(long, required_unless_present = "print_schema")]
        config: Option<PathBuf>,
        /// First stage to run; earlier stages' artifacts must exist.
        #[arg(long, default_value = "campaign")]
        from: Stage,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory, overriding `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print an annotated example config and exit.
        #[arg(long)]
        print_schema: bool,
    },
}

#[derive(Subcommand)]
enum PersonasAction {
    List {
        #[arg(long, default_value = "Alex")]
        name: String,
    },
    Render {
        #[arg(long)]
        id: String,
        #[arg(long, default_value = "Alex")]
        name: String,
        /// Prompt template and vocabulary TOML.
        #[arg(long)]
        prompt: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallel: Option<usize>,
    /// Send each donor line with only the system prompt.
    #[arg(long)]
    reset_per_turn: bool,
}

#[derive(Args)]
struct LexiconArgs {
    /// Lexicon file (default: built-in demo lexicon).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    measures: String,
}

impl LexiconArgs {
    fn load(&self) -> anyhow::Result<(Lexicon, MeasureSet)> {
        let lexicon = match &self.lexicon {
            Some(p) => Lexicon::load(p)?,
            None => Lexicon::demo(),
        };
        let measures = MeasureSet::parse(&self.measures)?;
        measures.validate(&lexicon)?;
        Ok((lexicon, measures))
    }
}

/// Exit status for library errors outside the pipeline: 1 input or
/// configuration, 2 backend, 3 analysis or fitting.
fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(p) = err.downcast_ref::<PipelineError>() {
        return p.exit_code() as u8;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Backend(_)) => 2,
        Some(
            Error::SingularDesign { .. }
            | Error::DegenerateResponse
            | Error::InsufficientData(_)
            | Error::EmptyResult(_)
            | Error::Report(_),
        ) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn complete_transcripts(path: &Path) -> anyhow::Result<Vec<Transcript>> {
    let records = read_transcripts(path)?;
    let failed = records.iter().filter(|r| !r.is_complete()).count();
    if failed > 0 {
        eprintln!("skipping {failed} failed session(s)");
    }
    Ok(records
        .into_iter()
        .filter(|r| r.is_complete())
        .map(|r| r.transcript)
        .collect())
}

fn load_config(path: &Path, overrides: &Overrides) -> anyhow::Result<(PipelineConfig, PathBuf)> {
    let mut config = PipelineConfig::load(path)?;
    if let Some(s) = overrides.seed {
        config.seed = s;
    }
    if let Some(p) = overrides.parallel {
        config.parallel = p;
    }
    if overrides.reset_per_turn {
        config.reset_per_turn = true;
    }
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((config, base))
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Personas { action } => match action {
            PersonasAction::List { name } => {
                for p in enumerate_personas(&name)? {
                    println!(
                        "{}\t{:?}\t{:?}\t{:?}",
                        p.id(),
                        p.attitude,
                        p.authority,
                        p.reasoning
                    );
                }
                Ok(())
            }
            PersonasAction::Render { id, name, prompt } => {
                TraitCell::from_id(&id)?;
                let config = match prompt {
                    Some(p) => PromptConfig::load(&p)?,
                    None => PromptConfig::builtin(),
                };
                let spec = PersonaSpec::from_id(&id, name)?;
                println!("{}", config.render(&spec)?.text);
                Ok(())
            }
        },
        Command::Run {
            config,
            overrides,
            out,
        } => {
            let (config, base) = load_config(&config, &overrides)?;
            let out = out.unwrap_or_else(|| base.join(&config.out_dir).join("transcripts.jsonl"));
            if let Some(dir) = out.parent() {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
            }
            run_campaign_only(&config, &base, &out)?;
            let records = read_transcripts(&out)?;
            let failed = records.iter().filter(|r| !r.is_complete()).count();
            eprintln!(
                "{} transcripts written to {} ({failed} failed)",
                records.len(),
                out.display()
            );
            Ok(())
        }
        Command::Analyze {
            input,
            out,
            lex,
            unit,
            overlap_report: overlaps,
        } => {
            let (lexicon, measures) = lex.load()?;
            let transcripts = complete_transcripts(&input)?;
            if overlaps {
                let mut text = String::new();
                for t in &transcripts {
                    for (turn, response) in t.responses().enumerate() {
                        for o in overlap_report(response, &lexicon, &measures)? {
                            text.push_str(&format!(
                                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                                t.model_id,
                                t.persona_id,
                                t.session_index,
                                turn + 1,
                                o.position,
                                o.token,
                                o.categories.join(",")
                            ));
                        }
                    }
                }
                return write_or_print(out.as_deref(), &text);
            }
            let out = out.context("--out is required unless --overlap-report is given")?;
            let obs = profile_transcripts(&transcripts, &lexicon, &measures, unit)?;
            let table = ObservationTable::from_observations(&obs, &measures)?;
            table.write_csv(&out)?;
            eprintln!(
                "{} observations written to {}",
                table.rows.len(),
                out.display()
            );
            Ok(())
        }
        Command::Fit {
            input,
            out,
            measures,
            coding,
        } => {
            let table = ObservationTable::read_csv(&input)?;
            let measures = match measures.as_deref() {
                None => MeasureSet::new(table.measures.iter().map(String::as_str))?,
                Some(spec) => MeasureSet::parse(spec)?,
            };
            let fits = fit_all(&table, &measures, coding)?;
            fits.write_csv(&out)?;
            for s in &fits.skipped {
                eprintln!("skipped {}/{}: {}", s.model_id, s.measure, s.reason);
            }
            eprintln!("{} fits written to {}", fits.fits.len(), out.display());
            Ok(())
        }
        Command::Report {
            fits,
            layout,
            format,
            out,
        } => {
            let fits = FitSet::read_csv(&fits)?;
            let layout = ReportLayout::named(&layout, &fits)?;
            write_or_print(out.as_deref(), &render_table(&fits, &layout, format)?)
        }
        Command::Calibrate {
            input,
            persona,
            out,
            lex,
        } => {
            let (lexicon, measures) = lex.load()?;
            let transcripts = complete_transcripts(&input)?;
            let ids: Vec<String> = if persona == "all" {
                TraitCell::all()
                    .map(|c| c.id())
                    .filter(|id| transcripts.iter().any(|t| &t.persona_id == id))
                    .collect()
            } else {
                TraitCell::from_id(&persona)?;
                vec![persona]
            };
            let baselines = ids
                .iter()
                .map(|id| calibrate(&transcripts, id, &lexicon, &measures))
                .collect::<Result<Vec<_>, _>>()?;
            if baselines.is_empty() {
                anyhow::bail!(Error::InsufficientData(
                    "no transcripts to calibrate from".into()
                ));
            }
            Baseline::write_csv(&baselines, &out)?;
            eprintln!(
                "{} baseline(s) written to {}",
                baselines.len(),
                out.display()
            );
            Ok(())
        }
        Command::Pipeline {
            config,
            from,
            overrides,
            out,
            print_schema,
        } => {
            if print_schema {
                print!("{CONFIG_SCHEMA}");
                return Ok(());
            }
            let path = config.expect("clap enforces --config");
            let (mut config, base) = load_config(&path, &overrides)?;
            if let Some(o) = out {
                config.out_dir = std::path::absolute(o)?;
            }
            let summary = run_pipeline(&config, &base, from)?;
            for f in &summary.failed_sessions {
                eprintln!("failed session {f}");
            }
            let stages: Vec<&str> = summary.stages_run.iter().map(|s| s.name()).collect();
            eprintln!("stages: {}", stages.join(" "));
            eprintln!(
                "{} transcripts, {} observations, {} fits ({} skipped)",
                summary.transcripts, summary.observations, summary.fits, summary.skipped_fits
            );
            for (model, n) in &summary.distinguishing {
                eprintln!("{model}: {n} distinguishing measures");
            }
            Ok(())
        }
    }
}
