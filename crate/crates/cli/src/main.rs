mod campaign;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use ptqtune::analysis::{convergence_csv, convergence_report, diversity_report};
use ptqtune::calib::{build_cache, load_cache, save_cache, CalibrationCache, SizeClass};
use ptqtune::dataset::{generate_shapes, load_dataset, save_dataset, Dataset, DatasetBundle};
use ptqtune::exec::evaluate_top1;
use ptqtune::intexec::{
    evaluate_integer_only, evaluate_quantized, quantize_input, run_integer_only_traced, run_quantized_traced, OpTrace,
};
use ptqtune::model::{extract_features, generate_fixture, load_model, save_model, Graph, Recipe, MODEL_MAGIC};
use ptqtune::pipeline::{fit_ridge_head, PipelineEvaluator, PreparedModel, CALIB_SEED, DATA_SEED, EVAL_SIZE, POOL_SIZE, RIDGE, SUITE};
use ptqtune::quant::{load_quantized, model_size, quantize_model, save_quantized, QuantConfig, QuantizedGraph, QUANT_MAGIC};
use ptqtune::tuner::{
    load_db, record_db, tune_genetic, tune_grid, tune_random, tune_xgb, GaParams, SearchResult, TargetProfile,
    XgbOptions,
};

use campaign::Campaign;

/// Post-training int8 quantization and configuration tuning.
#[derive(Parser)]
#[command(name = "ptqtune", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and the fixture models (heads fitted on the pool).
    GenFixtures(GenFixturesArgs),
    /// Collect activation histograms into calibration caches.
    Calibrate(CalibrateArgs),
    /// Quantize a model with one configuration and report its size.
    Quantize(QuantizeArgs),
    /// Measure top-1 accuracy of an fp32 or quantized model.
    Eval(EvalArgs),
    /// Search the configuration space for the most accurate quantization.
    Tune(TuneArgs),
    /// Summarize tuning databases and search results.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCommand,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Per-dimension entropy of near-lossless configurations.
    Entropy(EntropyArgs),
    /// Trials-to-best statistics per model and strategy.
    Convergence(ConvergenceArgs),
}

#[derive(Args, Serialize)]
struct GenFixturesArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DATA_SEED)]
    seed: u64,
    /// Calibration pool size; at least 256 so every cache size class fits.
    #[arg(long, default_value_t = POOL_SIZE)]
    pool: usize,
    #[arg(long, default_value_t = EVAL_SIZE)]
    eval: usize,
}

#[derive(Args, Serialize)]
struct CalibrateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Size classes to build (S1, S2, S3); all three when omitted.
    #[arg(long = "size-class")]
    size_class: Vec<SizeClass>,
    #[arg(long, default_value_t = CALIB_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct QuantizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    /// e.g. `S2,asymmetric,kl,channel,off`, with `,fused` appended for fusion.
    #[arg(long)]
    #[serde(serialize_with = "as_display")]
    config: QuantConfig,
    #[arg(long, default_value = "generic")]
    profile: TargetProfile,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SplitArg {
    Eval,
    Pool,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// fp32 (`.qtm`) or quantized (`.qtm8`) model.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "eval")]
    split: SplitArg,
    /// Run on the integer-only executor; the model must be quantized.
    #[arg(long)]
    integer_only: bool,
    /// Write the arithmetic trace of one inference to `trace.csv`.
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Strategy {
    Xgb,
    XgbT,
    Random,
    Grid,
    Genetic,
}

#[derive(Args, Serialize)]
struct TuneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "xgb")]
    strategy: Strategy,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value = "generic")]
    profile: TargetProfile,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tuning database of other models; required by `xgb-t`.
    #[arg(long)]
    transfer_db: Option<PathBuf>,
    /// Directory holding `cache-S1.qcc` .. `cache-S3.qcc`; calibrates in-process when omitted.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = CALIB_SEED)]
    calib_seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EntropyArgs {
    /// One or more tuning databases (JSON lines).
    #[arg(long, required = true)]
    db: Vec<PathBuf>,
    /// Maximum accuracy drop in percentage points.
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ConvergenceArgs {
    /// Searched recursively for `result.json` files.
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Records a flag the way it is written on the command line.
fn as_display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenFixtures(a) => gen_fixtures(&a),
        Command::Calibrate(a) => calibrate(&a),
        Command::Quantize(a) => quantize(&a),
        Command::Eval(a) => eval(&a),
        Command::Tune(a) => tune(&a),
        Command::Analyze { what: AnalyzeCommand::Entropy(a) } => entropy(&a),
        Command::Analyze { what: AnalyzeCommand::Convergence(a) } => convergence(&a),
    }
}

fn read_dataset(p: &Path) -> Result<DatasetBundle> {
    load_dataset(p).with_context(|| format!("loading dataset {}", p.display()))
}

fn read_model(p: &Path) -> Result<Graph> {
    load_model(p).with_context(|| format!("loading model {}", p.display()))
}

fn gen_fixtures(a: &GenFixturesArgs) -> Result<()> {
    let data = generate_shapes(a.seed, a.pool, a.eval);
    let mut c = Campaign::open(&a.out)?;
    save_dataset(&data, &c.stage("dataset.qds"))?;
    for spec in &SUITE {
        let recipe = Recipe::parse(spec.recipe)?.with_classes(data.classes);
        let mut g = generate_fixture(&recipe, spec.seed)?;
        g.name = spec.name.to_string();
        fit_ridge_head(&mut g, &data.calibration_pool, RIDGE)?;
        let top1 = evaluate_top1(&g, &data.eval)?.top1;
        println!("{:<12} fp32 top1 {top1:.4}", spec.name);
        save_model(&g, &c.stage(&format!("{}.qtm", spec.name)))?;
    }
    c.commit("gen-fixtures", a)
}

fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let g = read_model(&a.model)?;
    let data = read_dataset(&a.dataset)?;
    let classes = if a.size_class.is_empty() { SizeClass::ALL.to_vec() } else { a.size_class.clone() };
    let mut c = Campaign::open(&a.out)?;
    for s in classes {
        let cache = build_cache(&g, &data.calibration_pool, s, a.seed)?;
        save_cache(&cache, &c.stage(&format!("cache-{s}.qcc")))?;
        println!("{s}: {} images, {} tensors", cache.image_ids.len(), cache.histograms.len());
    }
    c.commit("calibrate", a)
}

fn quantize(a: &QuantizeArgs) -> Result<()> {
    let g = read_model(&a.model)?;
    let cache = load_cache(&a.cache).with_context(|| format!("loading cache {}", a.cache.display()))?;
    let qg = quantize_model(&g, &cache, &a.config, a.profile)?;
    let fp32_bytes: usize = g.weights.values().map(|w| 4 * w.data.len()).sum();
    let bytes = model_size(&qg);
    let report = json!({
        "model": g.name,
        "config": a.config.to_string(),
        "profile": a.profile.to_string(),
        "quantized_bytes": bytes,
        "fp32_bytes": fp32_bytes,
        "compression": fp32_bytes as f64 / bytes as f64,
        "quantized_layers": qg.layers.len(),
        "fp32_layers": qg.fp32_nodes.len(),
    });
    let mut c = Campaign::open(&a.out)?;
    save_quantized(&qg, &c.stage("model.qtm8"))?;
    c.write_json("size.json", &report)?;
    println!("{} [{}]: {bytes} bytes (fp32 {fp32_bytes}, {:.2}x smaller)", g.name, a.config, fp32_bytes as f64 / bytes as f64);
    c.commit("quantize", a)
}

enum AnyModel {
    Fp32(Graph),
    Quantized(QuantizedGraph),
}

fn read_any_model(p: &Path) -> Result<AnyModel> {
    let head = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
    if head.starts_with(QUANT_MAGIC) {
        Ok(AnyModel::Quantized(load_quantized(p)?))
    } else if head.starts_with(MODEL_MAGIC) {
        Ok(AnyModel::Fp32(read_model(p)?))
    } else {
        bail!("{} is neither an fp32 nor a quantized model", p.display())
    }
}

fn eval(a: &EvalArgs) -> Result<()> {
    let model = read_any_model(&a.model)?;
    let bundle = read_dataset(&a.dataset)?;
    let d: &Dataset = match a.split {
        SplitArg::Eval => &bundle.eval,
        SplitArg::Pool => &bundle.calibration_pool,
    };
    ensure!(!d.is_empty(), "the selected split is empty");
    let mut trace = OpTrace::new();
    let (name, mode, acc) = match &model {
        AnyModel::Fp32(g) => {
            ensure!(!a.integer_only, "--integer-only needs a quantized model");
            ensure!(!a.trace, "--trace needs a quantized model");
            (g.name.clone(), "fp32", evaluate_top1(g, d)?)
        }
        AnyModel::Quantized(qg) if a.integer_only => {
            let acc = evaluate_integer_only(qg, d)?;
            if a.trace {
                run_integer_only_traced(qg, &quantize_input(qg, &d.images[0])?, &mut trace)?;
            }
            (qg.graph.name.clone(), "integer-only", acc)
        }
        AnyModel::Quantized(qg) => {
            let acc = evaluate_quantized(qg, d)?;
            if a.trace {
                run_quantized_traced(qg, &d.images[0], &mut trace)?;
            }
            (qg.graph.name.clone(), "quantized", acc)
        }
    };
    let mut c = Campaign::open(&a.out)?;
    let mut report = json!({
        "model": name,
        "mode": mode,
        "top1": acc.top1,
        "correct": acc.correct,
        "n_evaluated": acc.n_evaluated,
    });
    if a.trace {
        report["float_ops"] = json!(trace.float_ops());
        c.write("trace.csv", trace.to_csv())?;
    }
    c.write_json("eval.json", &report)?;
    println!("{name} ({mode}): top1 {:.4} ({}/{})", acc.top1, acc.correct, acc.n_evaluated);
    c.commit("eval", a)
}

fn tune(a: &TuneArgs) -> Result<()> {
    let g = read_model(&a.model)?;
    let data = read_dataset(&a.dataset)?;
    let seed_db = match (a.strategy, &a.transfer_db) {
        (Strategy::XgbT, Some(p)) => load_db(p).with_context(|| format!("loading {}", p.display()))?,
        (Strategy::XgbT, None) => bail!("strategy xgb-t needs --transfer-db"),
        (_, Some(_)) => bail!("--transfer-db only applies to strategy xgb-t"),
        (_, None) => Vec::new(),
    };
    ensure!(a.strategy != Strategy::XgbT || !seed_db.is_empty(), "the transfer database is empty");
    let caches: Vec<CalibrationCache> = SizeClass::ALL
        .iter()
        .map(|&s| match &a.cache_dir {
            Some(dir) => {
                let p = dir.join(format!("cache-{s}.qcc"));
                load_cache(&p).with_context(|| format!("loading cache {}", p.display()))
            }
            None => Ok(build_cache(&g, &data.calibration_pool, s, a.calib_seed)?),
        })
        .collect::<Result<_>>()?;
    let fp32_top1 = evaluate_top1(&g, &data.eval)?.top1;
    let model = PreparedModel { name: g.name.clone(), features: extract_features(&g), graph: g, fp32_top1, caches };
    let task = model.task(a.profile);
    ensure!(
        (1..=task.space.len()).contains(&a.budget),
        "--budget must be between 1 and {} for the {} profile",
        task.space.len(),
        a.profile
    );
    let evaluator = PipelineEvaluator { model: &model, eval: &data.eval, profile: a.profile };
    let result: SearchResult = match a.strategy {
        Strategy::Xgb | Strategy::XgbT => {
            let opts = XgbOptions { seed: a.seed, workers: a.workers, ..Default::default() };
            tune_xgb(&task, &evaluator, a.budget, &seed_db, &opts)?
        }
        Strategy::Random => tune_random(&task, &evaluator, a.budget, a.seed, a.workers)?,
        Strategy::Grid => tune_grid(&task, &evaluator, a.budget, a.workers)?,
        Strategy::Genetic => tune_genetic(&task, &evaluator, a.budget, &GaParams::default(), a.seed, a.workers)?,
    };
    let mut c = Campaign::open(&a.out)?;
    record_db(&c.stage("db.jsonl"), &result.log)?;
    c.write_json("result.json", &result)?;
    println!(
        "{} {}: best {} top1 {:.4} (fp32 {:.4}) after {} of {} trials",
        result.model, result.strategy, result.best, result.best_top1, fp32_top1, result.trials_to_best, result.log.len()
    );
    c.commit("tune", a)
}

fn entropy(a: &EntropyArgs) -> Result<()> {
    let mut db = Vec::new();
    for p in &a.db {
        db.extend(load_db(p).with_context(|| format!("loading {}", p.display()))?);
    }
    let report = diversity_report(&db, a.threshold)?;
    let csv = report.to_csv();
    let mut c = Campaign::open(&a.out)?;
    c.write("entropy.csv", &csv)?;
    print!("{csv}");
    c.commit("analyze entropy", a)
}

fn convergence(a: &ConvergenceArgs) -> Result<()> {
    let mut results: Vec<SearchResult> = Vec::new();
    for entry in walkdir::WalkDir::new(&a.results).sort_by_file_name() {
        let entry = entry?;
        if entry.file_type().is_file() && entry.file_name() == "result.json" {
            let text = fs::read_to_string(entry.path())?;
            results.push(serde_json::from_str(&text).with_context(|| format!("parsing {}", entry.path().display()))?);
        }
    }
    ensure!(!results.is_empty(), "no result.json found under {}", a.results.display());
    let csv = convergence_csv(&convergence_report(&results));
    let mut c = Campaign::open(&a.out)?;
    c.write("convergence.csv", &csv)?;
    print!("{csv}");
    c.commit("analyze convergence", a)
}
