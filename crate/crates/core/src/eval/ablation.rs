use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use super::metrics::{EvalReport, InvertedPolicy};
use super::predictions::{evaluate_records, predict_samples};
use crate::dataio::{load_samples, DatasetManifest, Sample};
use crate::error::{Error, Result};
use crate::model::LossMode;
use crate::training::{prepare_training_data, train, TrainConfig, TrainingData};

/// The four loss configurations, in table order.
pub const ABLATION_CONFIGS: [(LossMode, bool); 4] = [
    (LossMode::Nll, false),
    (LossMode::Kl, false),
    (LossMode::Nll, true),
    (LossMode::Kl, true),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub config: String,
    pub seed: u64,
    pub report: EvalReport,
    pub final_loss: f64,
    pub train_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub config: String,
    pub seeds: usize,
    /// Accuracies and mIoU averaged over seeds.
    pub mean: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub alphas: Vec<f64>,
    pub runs: Vec<AblationRun>,
    pub summary: Vec<AblationSummary>,
}

impl AblationTable {
    pub fn summary_for(&self, config: &str) -> Option<&AblationSummary> {
        self.summary.iter().find(|s| s.config == config)
    }

    pub fn runs_for<'a>(&'a self, config: &'a str) -> impl Iterator<Item = &'a AblationRun> {
        self.runs.iter().filter(move |r| r.config == config)
    }

    /// Mean accuracies in percent, one row per configuration.
    pub fn to_table(&self) -> String {
        let mut header = vec!["Method".to_string()];
        header.extend(self.alphas.iter().map(|a| format!("a={a}")));
        header.push("mIoU".into());
        let mut rows = vec![header];
        for s in &self.summary {
            let mut row = vec![s.config.clone()];
            row.extend(
                self.alphas
                    .iter()
                    .map(|&a| format!("{:.2}", 100.0 * s.mean.accuracy_at(a).unwrap_or(f64::NAN))),
            );
            row.push(format!("{:.2}", 100.0 * s.mean.miou));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
                .collect();
            writeln!(out, "{}", cells.join("  ")).unwrap();
        }
        out
    }
}

/// Where ablation data comes from and how runs are scheduled.
#[derive(Clone, Debug)]
pub struct AblationPlan<'a> {
    pub train: &'a DatasetManifest,
    pub test: &'a DatasetManifest,
    pub embeddings: &'a Path,
    pub base: TrainConfig,
    pub seeds: Vec<u64>,
    pub alphas: Vec<f64>,
    pub policy: InvertedPolicy,
    /// Runs seeds on separate threads; results are identical either way.
    pub parallel: bool,
}

fn run_seed(plan: &AblationPlan<'_>, seed: u64) -> Result<Vec<AblationRun>> {
    let base = TrainConfig { seed, ..plan.base.clone() };
    let data: TrainingData = prepare_training_data(plan.train, plan.embeddings, &base)?;
    plan.test.validate()?;
    let test: Vec<Sample> = load_samples(plan.test, &data.vocab, base.max_query_len)?;
    if test.is_empty() {
        return Err(Error::EmptyInput("test manifest has no annotations".into()));
    }
    ABLATION_CONFIGS
        .iter()
        .map(|&(loss_mode, use_attention_loss)| {
            let config = TrainConfig {
                loss_mode,
                use_attention_loss,
                ..base.clone()
            };
            let label = config.loss_label();
            let started = Instant::now();
            let outcome = train(&data, &config)?;
            let train_seconds = started.elapsed().as_secs_f64();
            let records = predict_samples(&outcome.model, &test)?;
            let report = evaluate_records(&records, &plan.alphas, plan.policy)?;
            info!(
                "ablation {label} seed {seed}: {} in {train_seconds:.1}s",
                report.to_json()
            );
            Ok(AblationRun {
                config: label,
                seed,
                report,
                final_loss: outcome.log.last().map_or(f64::NAN, |e| e.mean_total),
                train_seconds,
            })
        })
        .collect()
}

/// Trains and scores every configuration for every seed.
pub fn run_ablation(plan: &AblationPlan<'_>) -> Result<AblationTable> {
    if plan.seeds.is_empty() {
        return Err(Error::EmptyInput("ablation needs at least one seed".into()));
    }
    let per_seed: Vec<Vec<AblationRun>> = if plan.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = plan
                .seeds
                .iter()
                .map(|&seed| scope.spawn(move || run_seed(plan, seed)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("ablation worker panicked"))
                .collect::<Result<_>>()
        })?
    } else {
        plan.seeds.iter().map(|&s| run_seed(plan, s)).collect::<Result<_>>()?
    };

    let mut runs = Vec::new();
    for (i, _) in ABLATION_CONFIGS.iter().enumerate() {
        runs.extend(per_seed.iter().map(|seed_runs| seed_runs[i].clone()));
    }
    let summary = ABLATION_CONFIGS
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let group: Vec<&AblationRun> = per_seed.iter().map(|r| &r[i]).collect();
            let k = group.len() as f64;
            let mut mean = group[0].report.clone();
            for (key, v) in mean.accuracy.iter_mut() {
                *v = group.iter().map(|r| r.report.accuracy[key]).sum::<f64>() / k;
            }
            mean.miou = group.iter().map(|r| r.report.miou).sum::<f64>() / k;
            AblationSummary {
                config: group[0].config.clone(),
                seeds: group.len(),
                mean,
            }
        })
        .collect();
    Ok(AblationTable {
        alphas: plan.alphas.clone(),
        runs,
        summary,
    })
}
