use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use log::{info, warn};
use serde_json::Value;
use tmlga::dataio::{load_features, load_manifest, load_samples, TimeAxis};
use tmlga::eval::{
    attach_ground_truth, evaluate_records, load_predictions, predict_samples, run_ablation,
    write_predictions, AblationPlan, InvertedPolicy,
};
use tmlga::gradsuite::{gradient_suite, SUITE_TOLERANCE};
use tmlga::synthdata::{generate, SynthSpec};
use tmlga::training::{load_model, loss_csv, prepare_training_data, TrainConfig, Trainer};

use crate::config::{require_existing, run_keys, split_overrides, Overrides, RunConfig};
use crate::UsageError;

pub struct ParsedArgs {
    pub argv: Vec<String>,
    pub overrides: Overrides,
}

fn synth_keys() -> BTreeSet<String> {
    match serde_json::to_value(SynthSpec::default()).expect("spec serializes") {
        Value::Object(map) => map.keys().cloned().collect(),
        _ => unreachable!("spec is an object"),
    }
}

/// Pulls config-key overrides out of the argument list of commands that
/// accept them.
pub fn extract_overrides(argv: Vec<String>) -> Result<ParsedArgs> {
    let keys = match argv.get(1).map(String::as_str) {
        Some("train" | "ablate") => run_keys(),
        Some("synth") => synth_keys(),
        _ => {
            return Ok(ParsedArgs {
                argv,
                overrides: Vec::new(),
            })
        }
    };
    let mut it = argv.into_iter();
    let head: Vec<String> = it.by_ref().take(2).collect();
    let (rest, overrides) = split_overrides(it.collect(), &keys)?;
    Ok(ParsedArgs {
        argv: head.into_iter().chain(rest).collect(),
        overrides,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON config with flat keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to the `output_dir` key.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

pub fn train(args: TrainArgs, overrides: &Overrides) -> Result<()> {
    let config = RunConfig::resolve(args.config.as_deref(), overrides)?;
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| UsageError("an output directory is required (--out or output_dir)".into()))?;
    let train_path = require_existing(&config.manifest_train, "manifest_train")?;
    let embeddings = require_existing(&config.embeddings, "embeddings")?;
    let test_path = match &config.manifest_test {
        Some(_) => Some(require_existing(&config.manifest_test, "manifest_test")?),
        None => None,
    };
    if let Some(r) = &args.resume {
        require_existing(&Some(r.clone()), "resume")?;
    }
    create_dir(&out)?;

    let manifest = load_manifest(&train_path)?;
    let data = prepare_training_data(&manifest, &embeddings, &config.train)?;
    let mut trainer = match &args.resume {
        Some(path) => {
            let mut t = Trainer::load_checkpoint(path)?;
            t.check_vocabulary(&data.vocab)?;
            let stored = TrainConfig {
                epochs: config.train.epochs,
                ..t.config().clone()
            };
            if stored != config.train {
                warn!("resuming with the checkpoint's settings; only `epochs` is taken from the current config");
            }
            t.set_epochs(config.train.epochs)?;
            info!("resuming {} after epoch {}", path.display(), t.epochs_done());
            t
        }
        None => Trainer::new(
            config.train.clone(),
            data.vocab.clone(),
            data.embeddings.clone(),
            data.samples[0].features.d_v(),
        )?,
    };
    write(&out.join("config.json"), config.to_json())?;
    info!(
        "training on {} samples, {} parameters",
        data.samples.len(),
        tmlga::Parameters::param_count(trainer.params())
    );

    let checkpoint = out.join("checkpoint.tmlc");
    let csv = out.join("loss.csv");
    trainer.run(&data.samples, |t| {
        t.save_checkpoint(&checkpoint)?;
        fs::write(&csv, loss_csv(t.log())).map_err(|e| tmlga::Error::io(&csv, e))?;
        Ok(())
    })?;
    if trainer.epochs_done() > 0 && !checkpoint.exists() {
        trainer.save_checkpoint(&checkpoint)?;
        write(&csv, loss_csv(trainer.log()))?;
    }
    println!("checkpoint: {}", checkpoint.display());
    println!("loss log: {}", csv.display());

    if let Some(test_path) = test_path {
        let test = load_manifest(&test_path)?;
        test.validate()?;
        let samples = load_samples(&test, trainer.vocab(), trainer.config().max_query_len)?;
        let records = predict_samples(&trainer.model(), &samples)?;
        write_predictions(out.join("test_predictions.jsonl"), &records)?;
        let report = evaluate_records(&records, &config.alphas, config.inverted)?;
        write(&out.join("test_report.json"), report.to_json() + "\n")?;
        println!("{}", report.to_json());
        print!("{}", report.to_table());
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Accepted for uniformity; prediction draws no random numbers.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn predict(args: PredictArgs) -> Result<()> {
    require_existing(&Some(args.checkpoint.clone()), "checkpoint")?;
    require_existing(&Some(args.manifest.clone()), "manifest")?;
    let (model, vocab, config) = load_model(&args.checkpoint)?;
    let manifest = load_manifest(&args.manifest)?;
    manifest.validate()?;
    let samples = load_samples(&manifest, &vocab, config.max_query_len)?;
    let records = predict_samples(&model, &samples)?;
    write_predictions(&args.out, &records)?;
    println!("{} predictions written to {}", records.len(), args.out.display());
    Ok(())
}

fn parse_alphas(raw: &str) -> Result<Vec<f64>> {
    let alphas = raw
        .split(',')
        .map(|a| a.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| UsageError(format!("--alphas: {e}")))?;
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
        return Err(UsageError(format!("alphas must lie in (0, 1], got {raw}")).into());
    }
    Ok(alphas)
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Take ground truth from this manifest instead of the predictions file.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "0.3,0.5,0.7")]
    alphas: String,
    /// Score inverted predicted intervals as zero instead of swapping them.
    #[arg(long)]
    strict_inverted_zero: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for uniformity; scoring draws no random numbers.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let alphas = parse_alphas(&args.alphas)?;
    require_existing(&Some(args.predictions.clone()), "predictions")?;
    let mut records = load_predictions(&args.predictions)?;
    if let Some(m) = &args.manifest {
        require_existing(&Some(m.clone()), "manifest")?;
        attach_ground_truth(&mut records, &load_manifest(m)?)?;
    }
    let policy = if args.strict_inverted_zero {
        InvertedPolicy::StrictInvertedZero
    } else {
        InvertedPolicy::Swap
    };
    let report = evaluate_records(&records, &alphas, policy)?;
    if let Some(out) = &args.out {
        write(out, report.to_json() + "\n")?;
    }
    println!("{}", report.to_json());
    print!("{}", report.to_table());
    Ok(())
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated training seeds.
    #[arg(long, default_value = "1,2,3,4,5")]
    seeds: String,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Train different seeds on separate threads.
    #[arg(long)]
    parallel: bool,
}

pub fn ablate(args: AblateArgs, overrides: &Overrides) -> Result<()> {
    let config = RunConfig::resolve(args.config.as_deref(), overrides)?;
    let seeds = args
        .seeds
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| UsageError(format!("--seeds: {e}")))?;
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| UsageError("an output directory is required (--out or output_dir)".into()))?;
    let train_path = require_existing(&config.manifest_train, "manifest_train")?;
    let test_path = require_existing(&config.manifest_test, "manifest_test")?;
    let embeddings = require_existing(&config.embeddings, "embeddings")?;
    create_dir(&out)?;

    let train = load_manifest(&train_path)?;
    let test = load_manifest(&test_path)?;
    let plan = AblationPlan {
        train: &train,
        test: &test,
        embeddings: &embeddings,
        base: config.train.clone(),
        seeds,
        alphas: config.alphas.clone(),
        policy: config.inverted,
        parallel: args.parallel,
    };
    let table = run_ablation(&plan)?;
    write(
        &out.join("ablation.json"),
        serde_json::to_string_pretty(&table).expect("table serializes") + "\n",
    )?;
    write(&out.join("ablation.txt"), table.to_table())?;
    print!("{}", table.to_table());
    Ok(())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON file with generator settings.
    #[arg(long)]
    spec: Option<PathBuf>,
}

pub fn synth(args: SynthArgs, overrides: &Overrides) -> Result<()> {
    let mut map = match serde_json::to_value(SynthSpec::default()).expect("spec serializes") {
        Value::Object(m) => m,
        _ => unreachable!("spec is an object"),
    };
    if let Some(path) = &args.spec {
        require_existing(&Some(path.clone()), "spec")?;
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        match serde_json::from_str::<Value>(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))? {
            Value::Object(m) => map.extend(m),
            _ => bail!(UsageError(format!("{}: expected a JSON object", path.display()))),
        }
    }
    for (k, v) in overrides {
        map.insert(k.clone(), crate::config::parse_value(v));
    }
    let spec: SynthSpec =
        serde_json::from_value(Value::Object(map)).map_err(|e| UsageError(format!("synth spec: {e}")))?;
    spec.validate()?;

    let dataset = generate(&spec)?;
    create_dir(&args.out)?;
    let paths = dataset.write(&args.out)?;
    write(
        &args.out.join("spec.json"),
        serde_json::to_string_pretty(&spec).expect("spec serializes") + "\n",
    )?;
    let run = RunConfig {
        train: TrainConfig {
            seed: spec.seed,
            ..TrainConfig::desk_scale()
        },
        manifest_train: Some("train.json".into()),
        manifest_test: Some("test.json".into()),
        embeddings: Some("embeddings.txt".into()),
        output_dir: Some("run".into()),
        ..RunConfig::default()
    };
    write(&args.out.join("config.json"), run.to_json())?;
    println!(
        "{} training and {} test videos written to {}",
        dataset.train.len(),
        dataset.test.len(),
        args.out.display()
    );
    println!("train manifest: {}", paths.train.display());
    println!("run config: {}", args.out.join("config.json").display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random instances per check.
    #[arg(long, default_value_t = 100)]
    instances: usize,
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let entries = gradient_suite(args.seed, args.instances)?;
    let width = entries.iter().map(|e| e.name.len()).max().unwrap_or(0);
    let mut failed = 0;
    for e in &entries {
        let verdict = if e.passes() { "ok" } else { "FAIL" };
        failed += usize::from(!e.passes());
        println!("{:<width$}  {:.3e}  {verdict}", e.name, e.max_rel_error);
    }
    if failed > 0 {
        bail!("{failed} of {} checks exceed relative error {SUITE_TOLERANCE:e}", entries.len());
    }
    println!("all {} checks within {SUITE_TOLERANCE:e}", entries.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct DumpAttentionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest listing the video.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    video: String,
    #[arg(long)]
    query: String,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for uniformity; inference draws no random numbers.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn dump_attention(args: DumpAttentionArgs) -> Result<()> {
    require_existing(&Some(args.checkpoint.clone()), "checkpoint")?;
    require_existing(&Some(args.manifest.clone()), "manifest")?;
    let (model, vocab, config) = load_model(&args.checkpoint)?;
    let manifest = load_manifest(&args.manifest)?;
    let entry = manifest
        .get(&args.video)
        .ok_or_else(|| UsageError(format!("video `{}` is not in {}", args.video, args.manifest.display())))?;
    let features = load_features(manifest.feature_path(entry))?;
    let axis = TimeAxis::new(features.n(), entry.fps, entry.l)?;
    let ids = vocab.encode_query(&args.query, config.max_query_len)?;
    let inference = model.infer_raw(features.to_tensor(), &ids)?;

    let mut csv = String::from("index,a_i\n");
    for (i, a) in inference.attention.iter().enumerate() {
        csv.push_str(&format!("{},{a}\n", i + 1));
    }
    let span = format!(
        "predicted span: tau_s={} tau_e={} t_s={} t_e={}",
        inference.tau_s,
        inference.tau_e,
        axis.index_to_time(inference.tau_s)?,
        axis.index_to_time(inference.tau_e)?
    );
    match &args.out {
        Some(path) => {
            write(path, csv)?;
            println!("{span}");
        }
        None => {
            print!("{csv}");
            eprintln!("{span}");
        }
    }
    Ok(())
}
