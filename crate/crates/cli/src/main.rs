mod config;
mod summary;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use ragtune::analysis::{self, ConfigMeans, DEFAULT_BINS};
use ragtune::dataio::{sample_dev, Dataset, GridTable, SamplePlan, SampleReport, Split};
use ragtune::evaluator::{Evaluator, GridReplay};
use ragtune::harness::{self, Checkpoint, FillPlan, HarnessError, RunOutcome, RunSpec};
use ragtune::metrics::Metric;
use ragtune::optimizers::Algorithm;
use ragtune::pipeline::{HttpService, LiveEvaluator, LiveSettings, LiveStats, TemplateStore};
use ragtune::searchspace::SearchSpace;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_SUSPENDED: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError { code: EXIT_VALIDATION, message: message.into() }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        CliError { code: EXIT_FAILURE, message: message.into() }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::InvalidSpec(_) | HarnessError::Format { .. } | HarnessError::Data(_) | HarnessError::Space(_) => {
                CliError::validation(e.to_string())
            }
            HarnessError::Eval(ref inner) if !inner.is_suspendable() => CliError::validation(e.to_string()),
            _ => CliError::failure(e.to_string()),
        }
    }
}

const ALGORITHMS: [&str; 5] = ["random", "tpe", "greedy_m", "greedy_r", "greedy_rcc"];

#[derive(Parser)]
#[command(name = "ragtune", version, about = "Hyper-parameter optimization for RAG pipelines")]
struct Cli {
    /// Cap on worker threads and in-flight service requests (0: no cap).
    #[arg(long, global = true, default_value_t = 0)]
    parallelism: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an optimizer over several seeds and export the per-iteration record.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = ALGORITHMS)]
        algo: Option<String>,
        #[arg(long)]
        budget: Option<usize>,
        /// Number of seeds; uses seeds 0..n.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue a suspended run from its checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate every configuration against live services into a grid table; resumes a partial table.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "dev,test")]
        splits: Vec<Split>,
        #[arg(long, value_delimiter = ',', default_value = "lexical_ac,faithfulness,context_mrr")]
        metrics: Vec<Metric>,
    },
    /// Draw a development subset with gold-document closure and noise documents.
    Sample {
        /// Source dataset manifest.
        #[arg(long, required_unless_present = "verify")]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        noise: u32,
        #[arg(long, required_unless_present = "verify")]
        seed: Option<u64>,
        #[arg(long, required_unless_present = "verify")]
        out: Option<PathBuf>,
        /// Recompute a sampled dataset from its provenance and compare.
        #[arg(long, conflicts_with_all = ["manifest", "out"])]
        verify: Option<PathBuf>,
    },
    /// Extremes, histogram, marginal means and convergence series from files.
    Analyze {
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Search space file; default is the built-in space.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long, default_value = "lexical_ac")]
        metric: Metric,
        #[arg(long, default_value = "dev")]
        split: Split,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        /// Run export (run.jsonl) for the convergence series.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, CliError> {
    let parallelism = cli.parallelism;
    match cli.command {
        Command::Optimize { config, algo, budget, seeds, out, resume } => {
            optimize(&config, algo, budget, seeds, out, resume, parallelism)
        }
        Command::Grid { config, out, splits, metrics } => grid(&config, &out, &splits, &metrics, parallelism),
        Command::Sample { verify: Some(dir), .. } => verify_sample(&dir),
        Command::Sample { manifest, fraction, noise, seed, out, verify: None } => {
            let plan = SamplePlan { qa_fraction: fraction, noise_ratio: noise, seed: seed.expect("required by clap") };
            sample(&manifest.expect("required by clap"), plan, &out.expect("required by clap"))
        }
        Command::Analyze { grid, space, metric, split, bins, run, out } => {
            analyze(grid.as_deref(), space.as_deref(), metric, split, bins, run.as_deref(), &out)
        }
    }
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::load(path).map_err(|e| CliError::validation(e.to_string()))
}

fn cap(value: usize, parallelism: usize) -> usize {
    if parallelism == 0 {
        value
    } else {
        value.min(parallelism)
    }
}

fn live_evaluator(cfg: &RunConfig, space: SearchSpace, parallelism: usize) -> Result<LiveEvaluator, CliError> {
    let dataset = load_dataset(cfg.dataset.as_deref().ok_or_else(|| CliError::validation("live runs need `dataset`"))?)?;
    let need = |e: &Option<_>, name: &str| e.clone().ok_or_else(|| CliError::validation(format!("live runs need [endpoints.{name}]")));
    let embed_ep: ragtune::pipeline::ServiceEndpoint = need(&cfg.endpoints.embedder, "embedder")?;
    let gen_ep: ragtune::pipeline::ServiceEndpoint = need(&cfg.endpoints.generator, "generator")?;
    let settings = LiveSettings {
        embed_batch_size: embed_ep.batch_size,
        embed_in_flight: cap(embed_ep.max_in_flight, parallelism),
        generate_in_flight: cap(gen_ep.max_in_flight, parallelism),
    };
    let service_err = |e: ragtune::pipeline::PipelineError| CliError::validation(e.to_string());
    let mut templates = TemplateStore::builtin();
    if let Some(dir) = &cfg.templates {
        templates = templates.with_dir(dir).map_err(service_err)?;
    }
    let embedder = Arc::new(HttpService::new(embed_ep).map_err(service_err)?);
    let generator = Arc::new(HttpService::new(gen_ep).map_err(service_err)?);
    let mut live = LiveEvaluator::new(space, dataset, templates, embedder, generator).map_err(service_err)?.with_settings(settings);
    if let Some(j) = &cfg.endpoints.judge {
        live = live.with_judge(Arc::new(HttpService::new(j.clone()).map_err(service_err)?));
    }
    Ok(live)
}

fn replay_evaluator(cfg: &RunConfig, space: SearchSpace, grid: &Path) -> Result<GridReplay<f64>, CliError> {
    let table = GridTable::<f64>::load(grid, &space).map_err(|e| CliError::validation(e.to_string()))?;
    let mut replay = GridReplay::new(space, table).map_err(|e| CliError::validation(e.to_string()))?;
    if let Some(m) = &cfg.dataset {
        let ds = load_dataset(m)?;
        replay = replay.with_qids(Split::Dev, ds.qids(Split::Dev)).with_qids(Split::Test, ds.qids(Split::Test));
    }
    Ok(replay)
}

fn report_live(live: &LiveEvaluator) {
    let s = live.stats();
    let failed = LiveStats::get(&s.failed_questions);
    if failed > 0 {
        eprintln!("warning: {failed} question evaluation(s) failed and were excluded from scores");
    }
    let estimated = LiveStats::get(&s.estimated_generations);
    if estimated > 0 {
        eprintln!("warning: {estimated} generation(s) had token counts estimated locally");
    }
    let truncated = LiveStats::get(&s.truncated_retrievals);
    if truncated > 0 {
        eprintln!("warning: {truncated} retrieval(s) returned fewer chunks than top_k");
    }
}

#[allow(clippy::too_many_arguments)]
fn optimize(
    config_path: &Path,
    algo: Option<String>,
    budget: Option<usize>,
    seeds: Option<u64>,
    out: Option<PathBuf>,
    resume: Option<PathBuf>,
    parallelism: usize,
) -> Result<u8, CliError> {
    let (cfg, _) = RunConfig::load(config_path)?;
    let space = cfg.space()?;
    let algorithm_name = algo
        .or_else(|| cfg.run.algorithm.clone())
        .ok_or_else(|| CliError::validation(format!("no algorithm given; expected one of: {}", ALGORITHMS.join(", "))))?;
    let algorithm: Algorithm = algorithm_name.parse().map_err(|e: ragtune::optimizers::OptimizerError| CliError::validation(e.to_string()))?;
    let budget = budget.or(cfg.run.budget).ok_or_else(|| CliError::validation("no budget given"))?;
    let seeds = match seeds {
        Some(n) => (0..n).collect(),
        None => cfg.run.seeds.as_ref().map(|s| s.expand()).unwrap_or_else(|| vec![0]),
    };
    let out = out.or_else(|| cfg.run.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mut spec = RunSpec::new(algorithm, cfg.objective.build()?, budget, seeds);
    spec.tpe = cfg.run.tpe;
    spec.suffix_mode = cfg.run.suffix_mode;
    spec.parallelism = parallelism;

    let checkpoint = match &resume {
        Some(p) => Some(Checkpoint::<f64>::load(p)?),
        None => None,
    };
    let outcome = match &cfg.grid {
        Some(grid) => {
            let replay = replay_evaluator(&cfg, space, grid)?;
            drive(&spec, checkpoint, &replay)?
        }
        None => {
            let live = live_evaluator(&cfg, space, parallelism)?;
            let outcome = drive(&spec, checkpoint, &live)?;
            report_live(&live);
            outcome
        }
    };
    std::fs::create_dir_all(&out).map_err(|e| CliError::failure(format!("{}: {e}", out.display())))?;
    match outcome {
        RunOutcome::Complete(record) => {
            harness::export_run(&record, &out.join("run.jsonl"))?;
            let text = summary::render(&record);
            std::fs::write(out.join("summary.txt"), &text).map_err(|e| CliError::failure(e.to_string()))?;
            print!("{text}");
            Ok(0)
        }
        RunOutcome::Suspended(cp) => {
            let path = out.join("checkpoint.json");
            cp.store(&path)?;
            eprintln!(
                "suspended after {} iteration(s): {}\nresume with --resume {}",
                cp.completed_iterations(),
                cp.reason,
                path.display()
            );
            Ok(EXIT_SUSPENDED)
        }
    }
}

fn drive<E: Evaluator<f64>>(
    spec: &RunSpec<f64>,
    checkpoint: Option<Checkpoint<f64>>,
    evaluator: &E,
) -> Result<RunOutcome<f64>, CliError> {
    Ok(match checkpoint {
        Some(cp) => harness::resume(cp, evaluator)?,
        None => harness::run(spec, evaluator)?,
    })
}

fn grid(config_path: &Path, out: &Path, splits: &[Split], metrics: &[Metric], parallelism: usize) -> Result<u8, CliError> {
    let (cfg, _) = RunConfig::load(config_path)?;
    let space = cfg.space()?;
    let live = live_evaluator(&cfg, space.clone(), parallelism)?;
    if metrics.contains(&Metric::JudgeAc) && cfg.endpoints.judge.is_none() {
        return Err(CliError::validation("judge_ac needs [endpoints.judge]"));
    }
    let mut table = if out.exists() {
        GridTable::<f64>::load(out, &space).map_err(|e| CliError::validation(e.to_string()))?
    } else {
        GridTable::new(&space)
    };
    let plans: Vec<FillPlan> = splits
        .iter()
        .map(|&split| {
            let questions = live.dataset().questions(split);
            FillPlan {
                split,
                qids: questions.iter().map(|q| q.qid.clone()).collect(),
                gold_qids: questions.iter().filter(|q| !q.gold_doc_ids.is_empty()).map(|q| q.qid.clone()).collect::<BTreeSet<_>>(),
            }
        })
        .collect();
    let store = |t: &GridTable<f64>| t.store(out).map_err(HarnessError::from);
    let report = harness::fill_grid(&live, &mut table, &plans, metrics, store)?;
    table.store(out).map_err(|e| CliError::failure(e.to_string()))?;
    report_live(&live);
    let evaluated = report.evaluated.iter().map(|&(_, o)| o).collect::<BTreeSet<_>>().len();
    let present = space.total_size() - evaluated;
    if let Some(reason) = &report.suspended {
        eprintln!("suspended after evaluating {evaluated} config(s): {reason}\nrerun the same command to resume");
        return Ok(EXIT_SUSPENDED);
    }
    if evaluated == 0 {
        println!("complete: all {present} config(s) already present");
    } else {
        println!("evaluated {evaluated} config(s); {present} already present");
    }
    if !report.still_incomplete.is_empty() {
        eprintln!("warning: {} config(s) still lack rows after failed generations", report.still_incomplete.len());
        return Ok(EXIT_FAILURE);
    }
    Ok(0)
}

pub const PROVENANCE_FORMAT_VERSION: u32 = 1;

/// Written next to a sampled dataset; enough to recompute it.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Provenance {
    format_version: u32,
    source_manifest: PathBuf,
    source_hash: String,
    plan: SamplePlan,
    report: SampleReport,
    output_hash: String,
}

fn sample(manifest: &Path, plan: SamplePlan, out: &Path) -> Result<u8, CliError> {
    let source = load_dataset(manifest)?;
    let (sampled, report) = sample_dev(&source, &plan).map_err(|e| CliError::validation(e.to_string()))?;
    sampled.store(out).map_err(|e| CliError::failure(e.to_string()))?;
    let source_manifest = std::fs::canonicalize(manifest).unwrap_or_else(|_| manifest.to_path_buf());
    let provenance = Provenance {
        format_version: PROVENANCE_FORMAT_VERSION,
        source_manifest,
        source_hash: source.content_hash(),
        plan,
        report: report.clone(),
        output_hash: sampled.content_hash(),
    };
    let text = serde_json::to_string_pretty(&provenance).expect("provenance serializes") + "\n";
    std::fs::write(out.join("provenance.json"), text).map_err(|e| CliError::failure(e.to_string()))?;
    println!(
        "sampled {} questions, {} gold + {} noise documents ({} short)",
        report.sampled_questions, report.gold_documents, report.noise_drawn, report.shortfall
    );
    Ok(0)
}

fn verify_sample(dir: &Path) -> Result<u8, CliError> {
    let path = dir.join("provenance.json");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let p: Provenance = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))?;
    let source = load_dataset(&p.source_manifest)?;
    let mut problems = Vec::new();
    if source.content_hash() != p.source_hash {
        problems.push("source dataset changed since sampling".to_string());
    }
    let (recomputed, report) = sample_dev(&source, &p.plan).map_err(|e| CliError::validation(e.to_string()))?;
    if report != p.report {
        problems.push("sampling report differs from recomputation".to_string());
    }
    if recomputed.content_hash() != p.output_hash {
        problems.push("recomputed sample differs from recorded output hash".to_string());
    }
    let stored = load_dataset(&dir.join("manifest.json"))?;
    if stored.content_hash() != p.output_hash {
        problems.push("stored sample differs from recorded output hash".to_string());
    }
    if problems.is_empty() {
        println!("verified: sample matches its provenance");
        Ok(0)
    } else {
        Err(CliError::failure(format!("verification failed: {}", problems.join("; "))))
    }
}

fn analyze(
    grid: Option<&Path>,
    space_path: Option<&Path>,
    metric: Metric,
    split: Split,
    bins: usize,
    run: Option<&Path>,
    out: &Path,
) -> Result<u8, CliError> {
    if grid.is_none() && run.is_none() {
        return Err(CliError::validation("analyze needs --grid, --run, or both"));
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::failure(format!("{}: {e}", out.display())))?;
    let aerr = |e: analysis::AnalysisError| CliError::validation(e.to_string());
    let record = match run {
        Some(p) => Some(harness::load_run::<f64>(p)?),
        None => None,
    };
    let space = match (space_path, &record) {
        (Some(p), _) => SearchSpace::load(p).map_err(|e| CliError::validation(e.to_string()))?,
        (None, Some(r)) => r.space.clone(),
        (None, None) => SearchSpace::builtin(),
    };
    let mut grid_max = None;
    if let Some(g) = grid {
        let table = GridTable::<f64>::load(g, &space).map_err(|e| CliError::validation(e.to_string()))?;
        let replay = GridReplay::new(space.clone(), table).map_err(|e| CliError::validation(e.to_string()))?;
        let means = ConfigMeans::from_replay(&replay, metric, split).map_err(aerr)?;
        let (worst, best) = analysis::grid_extremes(&means).map_err(aerr)?;
        analysis::write_extremes(&out.join("extremes.csv"), &space, &worst, &best).map_err(aerr)?;
        println!("worst {:.4} {}", worst.score, analysis::describe_config(&space, worst.ordinal));
        println!("best  {:.4} {}", best.score, analysis::describe_config(&space, best.ordinal));
        let hist = analysis::normalized_bins(&means.means, bins).map_err(aerr)?;
        if hist.degenerate {
            eprintln!("warning: every configuration scores the same; histogram is a single bin");
        }
        analysis::write_bins(&out.join("bins.csv"), &hist).map_err(aerr)?;
        let rows = analysis::marginal_means(&space, &means).map_err(aerr)?;
        analysis::write_marginals(&out.join("marginal_means.csv"), &rows).map_err(aerr)?;
        if let Some(r) = &record {
            grid_max = Some(replay.grid_max(Split::Test, &r.spec.objective).map_err(|e| CliError::validation(e.to_string()))?.1);
        }
    }
    if let Some(r) = &record {
        let points = analysis::convergence_series(r, grid_max);
        analysis::write_convergence(&out.join("convergence.csv"), &points).map_err(aerr)?;
        println!("convergence: {} iteration(s) over {} seed(s)", points.len(), r.seeds.len());
    }
    Ok(0)
}
