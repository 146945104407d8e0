use serde::{Deserialize, Serialize};

use crate::dataio::{DEFAULT_MAX_QUERY_LEN, DEFAULT_MIN_FREQ};
use crate::error::{Error, Result};
use crate::localization::KlDirection;
use crate::model::{LossMode, Objective};

/// Training hyper-parameters. Defaults follow the published setup: Adam at
/// 1e-4 with weight decay 1e-3, dropout 0.5 between the localization
/// layers, hidden sizes of 256, soft-label σ of one feature step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Samples whose gradients are averaged into one optimizer step.
    pub accumulation: usize,
    pub loss_mode: LossMode,
    pub use_attention_loss: bool,
    pub sigma: f64,
    pub kl_direction: KlDirection,
    pub seed: u64,
    pub augment: bool,
    pub dropout: f64,
    pub sentence_hidden: usize,
    pub attention_dim: usize,
    pub localization_hidden: usize,
    pub min_freq: usize,
    pub max_query_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-3,
            epochs: 10,
            accumulation: 1,
            loss_mode: LossMode::Kl,
            use_attention_loss: true,
            sigma: 1.0,
            kl_direction: KlDirection::PredTarget,
            seed: 0,
            augment: true,
            dropout: 0.5,
            sentence_hidden: 256,
            attention_dim: 256,
            localization_hidden: 256,
            min_freq: DEFAULT_MIN_FREQ,
            max_query_len: DEFAULT_MAX_QUERY_LEN,
        }
    }
}

impl TrainConfig {
    /// Small model and faster learning rate, sized for CPU-only runs on
    /// the synthetic benchmark.
    pub fn desk_scale() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 20,
            sentence_hidden: 16,
            attention_dim: 16,
            localization_hidden: 16,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.accumulation < 1 {
            return bad("accumulation must be at least 1".into());
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.sentence_hidden == 0 || self.attention_dim == 0 || self.localization_hidden == 0 {
            return bad("model sizes must be positive".into());
        }
        if self.max_query_len == 0 {
            return bad("max_query_len must be positive".into());
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        Objective {
            loss_mode: self.loss_mode,
            use_attention_loss: self.use_attention_loss,
            sigma: self.sigma,
            kl_direction: self.kl_direction,
        }
    }

    /// Short label of the loss configuration: `NLL`, `KL`, `NLL+AL`, `KL+AL`.
    pub fn loss_label(&self) -> String {
        let main = match self.loss_mode {
            LossMode::Nll => "NLL",
            LossMode::Kl => "KL",
        };
        if self.use_attention_loss {
            format!("{main}+AL")
        } else {
            main.to_string()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_published() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.weight_decay, 1e-3);
        assert_eq!(c.dropout, 0.5);
        assert_eq!(c.loss_label(), "KL+AL");
    }

    #[test]
    fn rejects_bad_values() {
        for c in [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { dropout: 1.0, ..Default::default() },
            TrainConfig { sigma: -1.0, ..Default::default() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epochs": 3, "bogus": 1}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "loss_mode": "nll"}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.loss_mode, LossMode::Nll);
    }
}
