//! The full localization network: query encoder, guided attention, and
//! span head wired together, plus the per-sample training objective.

use serde::{Deserialize, Serialize};

use crate::attention::{
    attention_loss, dynamic_filter, guided_attention, project, AttentionOutput, AttentionParams,
    AttentionVars,
};
use crate::dataio::{EmbeddingTable, Sample};
use crate::diffcore::{Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gru::BiGruVars;
use crate::localization::{
    kl_loss_on_tape, localize, nll_loss_on_tape, predict_span, KlDirection, LocalizationParams,
    LocalizationVars, SoftLabels, SpanDistributions, SpanOutput,
};
use crate::params::{join, Parameters};
use crate::sentenc::{encode_sentence, SentenceEncoderParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Video feature width `d_v`.
    pub feature_dim: usize,
    /// Word embedding width.
    pub embed_dim: usize,
    /// Per-direction hidden size of the query encoder.
    pub sentence_hidden: usize,
    /// Shared projection width `d`.
    pub attention_dim: usize,
    /// Per-direction hidden size of both localization layers.
    pub localization_hidden: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub sentence: SentenceEncoderParams,
    pub attention: AttentionParams,
    pub localization: LocalizationParams,
}

#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub sentence: BiGruVars,
    pub attention: AttentionVars,
    pub localization: LocalizationVars,
}

impl ModelParams {
    pub fn init(dims: &ModelDims, rng: &mut Rng) -> Self {
        let sentence = SentenceEncoderParams::init(dims.embed_dim, dims.sentence_hidden, rng);
        let attention = AttentionParams::init(
            dims.feature_dim,
            sentence.output_size(),
            dims.attention_dim,
            rng,
        );
        let localization =
            LocalizationParams::init(dims.attention_dim, dims.localization_hidden, rng);
        ModelParams {
            sentence,
            attention,
            localization,
        }
    }

    pub fn zeros(dims: &ModelDims) -> Self {
        ModelParams {
            sentence: SentenceEncoderParams::zeros(dims.embed_dim, dims.sentence_hidden),
            attention: AttentionParams::zeros(
                dims.feature_dim,
                2 * dims.sentence_hidden,
                dims.attention_dim,
            ),
            localization: LocalizationParams::zeros(dims.attention_dim, dims.localization_hidden),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            feature_dim: self.attention.video_proj.cols(),
            embed_dim: self.sentence.cells.forward.input_size(),
            sentence_hidden: self.sentence.cells.forward.hidden_size(),
            attention_dim: self.attention.shared_dim(),
            localization_hidden: self.localization.layer1.forward.hidden_size(),
        }
    }
}

impl Parameters for ModelParams {
    type Vars = ModelVars;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.sentence.visit(&join(prefix, "sentence"), f);
        self.attention.visit(&join(prefix, "attention"), f);
        self.localization.visit(&join(prefix, "localization"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.sentence.visit_mut(&join(prefix, "sentence"), f);
        self.attention.visit_mut(&join(prefix, "attention"), f);
        self.localization.visit_mut(&join(prefix, "localization"), f);
    }

    fn bind(&self, tape: &mut Tape, leaves: &mut Vec<Var>) -> ModelVars {
        ModelVars {
            sentence: self.sentence.bind(tape, leaves),
            attention: self.attention.bind(tape, leaves),
            localization: self.localization.bind(tape, leaves),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Nll,
    #[default]
    Kl,
}

/// How the per-sample loss is assembled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub loss_mode: LossMode,
    pub use_attention_loss: bool,
    pub sigma: f64,
    pub kl_direction: KlDirection,
}

impl Default for Objective {
    fn default() -> Self {
        Objective {
            loss_mode: LossMode::Kl,
            use_attention_loss: true,
            sigma: 1.0,
            kl_direction: KlDirection::PredTarget,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub query: Var,
    pub attention: AttentionOutput,
    pub span: SpanOutput,
}

/// Runs the network for one (features, query) pair.
pub fn forward(
    tape: &mut Tape,
    vars: &ModelVars,
    features: Tensor,
    token_ids: &[u32],
    embeddings: &EmbeddingTable,
    dropout: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<ForwardOutput> {
    let query = encode_sentence(tape, token_ids, embeddings, &vars.sentence)?;
    let g = tape.constant(features);
    let (g_d, h_d) = project(tape, g, query, &vars.attention)?;
    let theta = dynamic_filter(tape, h_d, &vars.attention)?;
    let attention = guided_attention(tape, g_d, theta)?;
    let span = localize(tape, attention.attended, &vars.localization, dropout, rng, training)?;
    Ok(ForwardOutput {
        query,
        attention,
        span,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub main: Var,
    pub attention: Var,
}

/// Span loss (KL or NLL) plus, when enabled, the attention-guidance loss.
/// The attention loss is always computed so it can be logged.
pub fn sample_loss(
    tape: &mut Tape,
    out: &ForwardOutput,
    tau_s: usize,
    tau_e: usize,
    objective: &Objective,
) -> Result<LossVars> {
    let n = tape.value(out.span.start).len();
    let main = match objective.loss_mode {
        LossMode::Kl => {
            let target = SoftLabels::new(tau_s, tau_e, objective.sigma, n)?;
            kl_loss_on_tape(tape, &out.span, &target, objective.kl_direction)?
        }
        LossMode::Nll => nll_loss_on_tape(tape, &out.span, tau_s, tau_e)?,
    };
    let attention = attention_loss(tape, out.attention.weights, tau_s, tau_e)?;
    let total = if objective.use_attention_loss {
        tape.add(main, attention)?
    } else {
        main
    };
    Ok(LossVars {
        total,
        main,
        attention,
    })
}

/// Inference result for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub distributions: SpanDistributions,
    pub attention: Vec<f64>,
    pub tau_s: usize,
    pub tau_e: usize,
}

/// A trained network together with the frozen embeddings it reads.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: ModelParams,
    pub embeddings: EmbeddingTable,
    pub dropout: f64,
}

impl Model {
    pub fn infer(&self, sample: &Sample) -> Result<Inference> {
        self.infer_raw(sample.features.to_tensor(), &sample.token_ids)
    }

    pub fn infer_raw(&self, features: Tensor, token_ids: &[u32]) -> Result<Inference> {
        if features.cols() != self.params.dims().feature_dim {
            return Err(Error::Dimension(format!(
                "model expects {}-wide features, got {}",
                self.params.dims().feature_dim,
                features.cols()
            )));
        }
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, &mut Vec::new());
        // Eval mode never draws from the generator.
        let mut rng = Rng::new(0);
        let out = forward(
            &mut tape,
            &vars,
            features,
            token_ids,
            &self.embeddings,
            self.dropout,
            &mut rng,
            false,
        )?;
        let distributions = out.span.distributions(&tape);
        let (tau_s, tau_e) = predict_span(&distributions);
        Ok(Inference {
            attention: tape.value(out.attention.weights).data().to_vec(),
            distributions,
            tau_s,
            tau_e,
        })
    }
}
