use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use synthweave::pipeline::{self, Context, GenInputs, PipelineConfig, RunError, RunResult};
use synthweave::scaling::{Form, PointUnits};

#[derive(Parser)]
#[command(name = "synthweave", version, about = "Synthetic question-answer data pipeline and scaling-law fitter")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (defaults to paths.workdir, then ./synthweave_out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override as dotted.path=value; the value is parsed as JSON
    /// when possible. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the cold-start classifier and write reference_0.json.
    FilterColdstart,
    /// Run the configured number of judge-rated refinement iterations.
    FilterRefine {
        /// Starting reference set (default: <out>/reference_0.json).
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Extract topics and key concepts from each document.
    ExtractConcepts {
        #[arg(long)]
        documents: Option<PathBuf>,
    },
    /// Build the concept co-occurrence graph.
    BuildGraph {
        #[arg(long)]
        concepts: Option<PathBuf>,
    },
    /// Sample concept combinations by random walks on the graph.
    SampleConcepts {
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Generate questions at level 1, 2 or 3.
    GenQuestions {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        level: u8,
        #[arg(long)]
        documents: Option<PathBuf>,
        #[arg(long)]
        concepts: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Answer every question.
    GenAnswers {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Remove exact and near-duplicate questions.
    Dedup {
        /// Question files (default: every questions_l*.jsonl in <out>).
        #[arg(long)]
        input: Vec<PathBuf>,
    },
    /// Remove questions that overlap a benchmark item.
    Decontaminate {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Fit a scaling law to (tokens, error_rate) points.
    Fit {
        #[arg(long, value_enum)]
        form: Form,
        /// JSONL or CSV points file.
        #[arg(long)]
        points: PathBuf,
        /// The error column is given in percent.
        #[arg(long)]
        percent: bool,
        /// The error column holds accuracies; error = 1 - accuracy.
        #[arg(long)]
        accuracy: bool,
    },
    /// Predict the error rate at a token count.
    Predict {
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        tokens: f64,
        /// Model size, required for power-law fits.
        #[arg(long)]
        params: Option<f64>,
    },
    /// Tokens needed to reach a target error rate.
    TokensForTarget {
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        target: f64,
        #[arg(long)]
        params: Option<f64>,
    },
    /// Run every stage in order.
    Pipeline,
}

fn parse_overrides(g: &Global) -> RunResult<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    for s in &g.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| RunError::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        out.insert(k.trim().to_string(), v);
    }
    if let Some(seed) = g.seed {
        out.insert("seed".into(), seed.into());
    }
    Ok(out)
}

fn context(g: &Global) -> RunResult<Context> {
    let base = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let overrides = parse_overrides(g)?;
    let cfg = base.with_overrides(&overrides)?;
    Context::new(cfg, g.out.clone(), overrides)
}

fn run(cli: Cli) -> RunResult<()> {
    let ctx = context(&cli.global)?;
    let print = |v: &Value| println!("{}", serde_json::to_string(v).expect("json"));
    let manifest = match cli.command {
        Command::FilterColdstart => pipeline::filter_coldstart(&ctx)?,
        Command::FilterRefine { reference } => pipeline::filter_refine(&ctx, reference.as_deref())?,
        Command::ExtractConcepts { documents } => pipeline::extract_concepts(&ctx, documents.as_deref())?,
        Command::BuildGraph { concepts } => pipeline::build_graph_stage(&ctx, concepts.as_deref())?,
        Command::SampleConcepts { graph } => pipeline::sample_concepts(&ctx, graph.as_deref())?,
        Command::GenQuestions { level, documents, concepts, samples } => {
            pipeline::gen_questions(&ctx, level, &GenInputs { documents, concepts, samples })?
        }
        Command::GenAnswers { input } => pipeline::gen_answers_stage(&ctx, input.as_deref())?,
        Command::Dedup { input } => pipeline::dedup_stage(&ctx, &input)?,
        Command::Decontaminate { input } => pipeline::decontaminate_stage(&ctx, input.as_deref())?,
        Command::Fit { form, points, percent, accuracy } => {
            pipeline::fit_stage(&ctx, form, &points, PointUnits { percent, accuracy })?
        }
        Command::Predict { fit, tokens, params } => {
            let (v, m) = pipeline::predict_stage(&ctx, fit.as_deref(), tokens, params)?;
            print(&v);
            m
        }
        Command::TokensForTarget { fit, target, params } => {
            let (v, m) = pipeline::tokens_for_target_stage(&ctx, fit.as_deref(), target, params)?;
            print(&v);
            m
        }
        Command::Pipeline => pipeline::run_pipeline(&ctx)?,
    };
    log::info!("{} finished: {:?}", manifest.stage, manifest.counts);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 and usage text on parse errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("synthweave: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
