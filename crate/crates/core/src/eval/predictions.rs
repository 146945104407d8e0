use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{tiou_with, EvalReport, InvertedPolicy};
use crate::dataio::{DatasetManifest, Sample};
use crate::error::{Error, Result};
use crate::model::Model;

/// One line of a predictions file. Ground truth is carried along when the
/// prediction was made on an annotated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub video_id: String,
    pub query: String,
    pub t_s_pred: f64,
    pub t_e_pred: f64,
    /// Predicted 1-based feature indices.
    pub tau_s: usize,
    pub tau_e: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_s_gt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_e_gt: Option<f64>,
}

impl PredictionRecord {
    pub fn truth(&self) -> Option<(f64, f64)> {
        Some((self.t_s_gt?, self.t_e_gt?))
    }

    pub fn tiou(&self, policy: InvertedPolicy) -> Result<f64> {
        let truth = self.truth().ok_or_else(|| {
            Error::Contract(format!(
                "prediction for `{}` / `{}` has no ground truth",
                self.video_id, self.query
            ))
        })?;
        Ok(tiou_with((self.t_s_pred, self.t_e_pred), truth, policy))
    }
}

pub fn predict_sample(model: &Model, sample: &Sample) -> Result<PredictionRecord> {
    let inference = model.infer(sample)?;
    Ok(PredictionRecord {
        video_id: sample.video_id.clone(),
        query: sample.query.clone(),
        t_s_pred: sample.index_to_time(inference.tau_s)?,
        t_e_pred: sample.index_to_time(inference.tau_e)?,
        tau_s: inference.tau_s,
        tau_e: inference.tau_e,
        annotation: Some(sample.annotation),
        t_s_gt: Some(sample.t_s),
        t_e_gt: Some(sample.t_e),
    })
}

pub fn predict_samples(model: &Model, samples: &[Sample]) -> Result<Vec<PredictionRecord>> {
    samples.iter().map(|s| predict_sample(model, s)).collect()
}

/// Fills in ground truth from `manifest`, matching on video id and the
/// annotation position (or, failing that, the query text).
pub fn attach_ground_truth(records: &mut [PredictionRecord], manifest: &DatasetManifest) -> Result<()> {
    for r in records {
        let entry = manifest.get(&r.video_id).ok_or_else(|| {
            Error::Validation {
                video_id: r.video_id.clone(),
                field: "video_id".into(),
                msg: "not present in manifest".into(),
            }
        })?;
        let annotation = match r.annotation {
            Some(i) => entry.annotations.get(i).filter(|a| a.query == r.query),
            None => None,
        }
        .or_else(|| entry.annotations.iter().find(|a| a.query == r.query))
        .ok_or_else(|| Error::Validation {
            video_id: r.video_id.clone(),
            field: "query".into(),
            msg: format!("no annotation with query `{}`", r.query),
        })?;
        r.t_s_gt = Some(annotation.t_s);
        r.t_e_gt = Some(annotation.t_e);
    }
    Ok(())
}

pub fn evaluate_records(records: &[PredictionRecord], alphas: &[f64], policy: InvertedPolicy) -> Result<EvalReport> {
    let tious = records.iter().map(|r| r.tiou(policy)).collect::<Result<Vec<_>>>()?;
    EvalReport::from_tious(&tious, alphas)
}

pub fn to_jsonl(records: &[PredictionRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn parse_jsonl(text: &str) -> Result<Vec<PredictionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(records)).map_err(|e| Error::io(path, e))
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Annotation, VideoEntry};

    fn record(pred: (f64, f64), truth: Option<(f64, f64)>) -> PredictionRecord {
        PredictionRecord {
            video_id: "v1".into(),
            query: "person opens door".into(),
            t_s_pred: pred.0,
            t_e_pred: pred.1,
            tau_s: 1,
            tau_e: 2,
            annotation: None,
            t_s_gt: truth.map(|t| t.0),
            t_e_gt: truth.map(|t| t.1),
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let records = vec![record((1.5, 3.25), Some((1.0, 3.0))), record((0.1, 0.2), None)];
        let text = to_jsonl(&records);
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with(
            r#"{"video_id":"v1","query":"person opens door","t_s_pred":0.1,"t_e_pred":0.2,"tau_s":1,"tau_e":2}"#
        ));
        assert_eq!(parse_jsonl(&text).unwrap(), records);
        assert!(matches!(parse_jsonl("{}\nnot json"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn exact_predictions_score_perfectly() {
        let manifest = DatasetManifest::new(vec![VideoEntry {
            video_id: "v1".into(),
            feature_path: "v1.tmlf".into(),
            l: 250,
            fps: 25.0,
            annotations: vec![Annotation {
                query: "person opens door".into(),
                t_s: 1.0,
                t_e: 3.0,
            }],
        }]);
        let mut records = vec![record((1.0, 3.0), None)];
        assert!(evaluate_records(&records, &[0.5], InvertedPolicy::Swap).is_err());
        attach_ground_truth(&mut records, &manifest).unwrap();
        let report = evaluate_records(&records, &[0.3, 0.5, 0.7], InvertedPolicy::Swap).unwrap();
        assert!(report.accuracy.values().all(|&a| a == 1.0));
        assert_eq!(report.miou, 1.0);

        let mut unknown = vec![PredictionRecord { video_id: "v9".into(), ..record((0.0, 1.0), None) }];
        assert!(attach_ground_truth(&mut unknown, &manifest).is_err());
    }
}
