//! Finite-difference checks of every differentiable operation and of the
//! model's composite paths, over seeded random instances.

use crate::attention::{attention_loss, dynamic_filter, guided_attention, project, AttentionParams};
use crate::dataio::EmbeddingTable;
use crate::diffcore::{grad_check, grad_check_leaves, GradCheckReport, Rng, Tape, Tensor, Var};
use crate::error::Result;
use crate::gru::{bigru_forward, gru_cell_step, BiGruParams, GruCellParams};
use crate::localization::{kl_loss_on_tape, localize, nll_loss_on_tape, KlDirection, LocalizationParams, SoftLabels};
use crate::model::{forward, sample_loss, LossMode, ModelDims, ModelParams, Objective};
use crate::params::Parameters;
use crate::sentenc::{encode_sentence, SentenceEncoderParams};

pub const SUITE_TOLERANCE: f64 = 1e-4;
pub const SUITE_STEP: f64 = 1e-5;

/// Worst relative error of one check over all its instances.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub instances: usize,
}

impl SuiteEntry {
    pub fn passes(&self) -> bool {
        self.max_rel_error <= SUITE_TOLERANCE
    }
}

type Check = fn(&mut Rng) -> Result<GradCheckReport>;

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).expect("non-empty shape")
}

fn dim(rng: &mut Rng) -> usize {
    rng.int_inclusive(1, 4)
}

/// Reduces `out` to a scalar through a random linear functional so every
/// output coordinate contributes.
fn project_out(tape: &mut Tape, out: Var, rng: &mut Rng) -> Result<Var> {
    let weights = randn(rng, tape.shape(out));
    let w = tape.constant(weights);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn check_unary(rng: &mut Rng, shift: fn(f64) -> f64, op: fn(&mut Tape, Var) -> Result<Var>) -> Result<GradCheckReport> {
    let shape = [dim(rng), dim(rng)];
    let x = randn(rng, &shape).map(shift);
    let seed = rng.next_u64();
    grad_check(
        |t, v| {
            let y = op(t, v[0])?;
            project_out(t, y, &mut Rng::new(seed))
        },
        &[x],
        SUITE_STEP,
    )
}

fn check_binary(rng: &mut Rng, a: Tensor, b: Tensor, op: fn(&mut Tape, Var, Var) -> Result<Var>) -> Result<GradCheckReport> {
    let seed = rng.next_u64();
    grad_check(
        |t, v| {
            let y = op(t, v[0], v[1])?;
            project_out(t, y, &mut Rng::new(seed))
        },
        &[a, b],
        SUITE_STEP,
    )
}

fn randomized<P: Parameters>(mut params: P, rng: &mut Rng) -> P {
    let values: Vec<Tensor> = params.tensors().iter().map(|t| randn(rng, t.shape()).map(|v| 0.5 * v)).collect();
    params.load_tensors(&values).expect("same shapes");
    params
}

/// Checks `f` against all tensors of `params` plus `extra` leaves.
fn check_params<P, F>(params: &P, extra: &[Tensor], f: F) -> Result<GradCheckReport>
where
    P: Parameters + Clone,
    F: Fn(&mut Tape, &P::Vars, &[Var]) -> Result<Var>,
{
    let mut inputs = params.tensors();
    let k = inputs.len();
    inputs.extend_from_slice(extra);
    grad_check_leaves(
        |tape, values| {
            let mut p = params.clone();
            p.load_tensors(&values[..k])?;
            let mut leaves = Vec::new();
            let vars = p.bind(tape, &mut leaves);
            let extra: Vec<Var> = values[k..].iter().map(|t| tape.param(t.clone())).collect();
            leaves.extend_from_slice(&extra);
            let loss = f(tape, &vars, &extra)?;
            Ok((loss, leaves))
        },
        &inputs,
        SUITE_STEP,
    )
}

fn span(rng: &mut Rng, n: usize) -> (usize, usize) {
    let a = rng.int_inclusive(1, n);
    let b = rng.int_inclusive(1, n);
    (a.min(b), a.max(b))
}

fn embedding_table(rng: &mut Rng, vocab: usize, dim: usize) -> EmbeddingTable {
    EmbeddingTable::from_rows(randn(rng, &[vocab, dim])).expect("matrix")
}

fn checks() -> Vec<(&'static str, Check)> {
    vec![
        ("matmul", |rng| {
            let (m, k, p) = (dim(rng), dim(rng), dim(rng));
            let a = randn(rng, &[m, k]);
            let b = randn(rng, &[k, p]);
            check_binary(rng, a, b, |t, a, b| t.matmul(a, b))
        }),
        ("matmul (vector)", |rng| {
            let (k, p) = (dim(rng), dim(rng));
            let a = randn(rng, &[k]);
            let b = randn(rng, &[k, p]);
            check_binary(rng, a, b, |t, a, b| t.matmul(a, b))
        }),
        ("matmul_nt", |rng| {
            let (m, k, p) = (dim(rng), dim(rng), dim(rng));
            let a = randn(rng, &[m, k]);
            let b = randn(rng, &[p, k]);
            check_binary(rng, a, b, |t, a, b| t.matmul_nt(a, b))
        }),
        ("add", |rng| {
            let s = [dim(rng), dim(rng)];
            let (a, b) = (randn(rng, &s), randn(rng, &s));
            check_binary(rng, a, b, |t, a, b| t.add(a, b))
        }),
        ("sub", |rng| {
            let s = [dim(rng), dim(rng)];
            let (a, b) = (randn(rng, &s), randn(rng, &s));
            check_binary(rng, a, b, |t, a, b| t.sub(a, b))
        }),
        ("mul", |rng| {
            let s = [dim(rng), dim(rng)];
            let (a, b) = (randn(rng, &s), randn(rng, &s));
            check_binary(rng, a, b, |t, a, b| t.mul(a, b))
        }),
        ("add_row_bias", |rng| {
            let (m, k) = (dim(rng), dim(rng));
            let (a, b) = (randn(rng, &[m, k]), randn(rng, &[k]));
            check_binary(rng, a, b, |t, a, b| t.add_row_bias(a, b))
        }),
        ("scale_rows", |rng| {
            let (m, k) = (dim(rng), dim(rng));
            let (a, w) = (randn(rng, &[m, k]), randn(rng, &[m]));
            check_binary(rng, a, w, |t, a, w| t.scale_rows(a, w))
        }),
        ("concat_cols", |rng| {
            let m = dim(rng);
            let (k1, k2) = (dim(rng), dim(rng));
            let (a, b) = (randn(rng, &[m, k1]), randn(rng, &[m, k2]));
            check_binary(rng, a, b, |t, a, b| t.concat_cols(a, b))
        }),
        ("affine", |rng| check_unary(rng, |v| v, |t, a| Ok(t.affine(a, -1.7, 0.3)))),
        ("tanh", |rng| check_unary(rng, |v| v, |t, a| Ok(t.tanh(a)))),
        ("sigmoid", |rng| check_unary(rng, |v| v, |t, a| Ok(t.sigmoid(a)))),
        ("exp", |rng| check_unary(rng, |v| 0.5 * v, |t, a| Ok(t.exp(a)))),
        ("neg", |rng| check_unary(rng, |v| v, |t, a| Ok(t.neg(a)))),
        ("log", |rng| check_unary(rng, |v| v.abs() + 0.5, |t, a| t.log(a))),
        // kept away from the kink, where the derivative is undefined
        ("clamp_min", |rng| check_unary(rng, |v| v + 0.05f64.copysign(v), |t, a| Ok(t.clamp_min(a, 0.0)))),
        ("mean_rows", |rng| check_unary(rng, |v| v, |t, a| t.mean_rows(a))),
        ("sum", |rng| check_unary(rng, |v| v, |t, a| Ok(t.sum(a)))),
        ("reshape", |rng| {
            check_unary(rng, |v| v, |t, a| {
                let n = t.value(a).len();
                t.reshape(a, &[n])
            })
        }),
        ("row", |rng| check_unary(rng, |v| v, |t, a| t.row(a, t.value(a).rows() - 1))),
        ("dropout", |rng| {
            let seed = rng.next_u64();
            let shape = [dim(rng), dim(rng)];
            let x = randn(rng, &shape);
            let w = rng.next_u64();
            grad_check(
                |t, v| {
                    let y = t.dropout(v[0], 0.3, &mut Rng::new(seed), true)?;
                    project_out(t, y, &mut Rng::new(w))
                },
                &[x],
                SUITE_STEP,
            )
        }),
        ("softmax", |rng| {
            let n = rng.int_inclusive(1, 6);
            let x = randn(rng, &[n]);
            let w = rng.next_u64();
            grad_check(
                |t, v| {
                    let y = t.softmax(v[0])?;
                    project_out(t, y, &mut Rng::new(w))
                },
                &[x],
                SUITE_STEP,
            )
        }),
        ("log_softmax", |rng| {
            let n = rng.int_inclusive(1, 6);
            let x = randn(rng, &[n]);
            let w = rng.next_u64();
            grad_check(
                |t, v| {
                    let y = t.log_softmax(v[0])?;
                    project_out(t, y, &mut Rng::new(w))
                },
                &[x],
                SUITE_STEP,
            )
        }),
        ("pick", |rng| {
            let n = rng.int_inclusive(1, 6);
            let i = rng.int_inclusive(0, n - 1);
            let x = randn(rng, &[n]);
            grad_check(|t, v| t.pick(v[0], i), &[x], SUITE_STEP)
        }),
        ("stack_rows", |rng| {
            let k = dim(rng);
            let m = dim(rng);
            let rows: Vec<Tensor> = (0..m).map(|_| randn(rng, &[k])).collect();
            let w = rng.next_u64();
            grad_check(
                |t, v| {
                    let y = t.stack_rows(v)?;
                    project_out(t, y, &mut Rng::new(w))
                },
                &rows,
                SUITE_STEP,
            )
        }),
        ("gru_cell_step", |rng| {
            let (x_dim, u) = (dim(rng), dim(rng));
            let p = randomized(GruCellParams::zeros(x_dim, u), rng);
            let (x, h) = (randn(rng, &[x_dim]), randn(rng, &[u]));
            let w = rng.next_u64();
            check_params(&p, &[x, h], |t, vars, extra| {
                let y = gru_cell_step(t, extra[0], extra[1], vars)?;
                project_out(t, y, &mut Rng::new(w))
            })
        }),
        ("bigru_forward", |rng| {
            let (x_dim, u, m) = (dim(rng), dim(rng), dim(rng));
            let p = randomized(BiGruParams::zeros(x_dim, u), rng);
            let xs = randn(rng, &[m, x_dim]);
            let w = rng.next_u64();
            check_params(&p, &[xs], |t, vars, extra| {
                let y = bigru_forward(t, extra[0], vars)?;
                project_out(t, y, &mut Rng::new(w))
            })
        }),
        ("encode_sentence", |rng| {
            let (e, u) = (dim(rng), dim(rng));
            let p = randomized(SentenceEncoderParams::zeros(e, u), rng);
            let table = embedding_table(rng, 6, e);
            let len = dim(rng);
            let ids: Vec<u32> = (0..len).map(|_| rng.int_inclusive(1, 5) as u32).collect();
            let w = rng.next_u64();
            check_params(&p, &[], |t, vars, _| {
                let y = encode_sentence(t, &ids, &table, vars)?;
                project_out(t, y, &mut Rng::new(w))
            })
        }),
        ("attention path", |rng| {
            let (d_v, d_s, d, n) = (dim(rng), dim(rng), dim(rng), rng.int_inclusive(2, 6));
            let p = randomized(AttentionParams::zeros(d_v, d_s, d), rng);
            let features = randn(rng, &[n, d_v]);
            let query = randn(rng, &[d_s]);
            let (s, e) = span(rng, n);
            check_params(&p, &[query], |t, vars, extra| {
                let g = t.constant(features.clone());
                let (g_d, h_d) = project(t, g, extra[0], vars)?;
                let theta = dynamic_filter(t, h_d, vars)?;
                let out = guided_attention(t, g_d, theta)?;
                attention_loss(t, out.weights, s, e)
            })
        }),
        ("localize + KL", |rng| {
            let (d, u, n) = (dim(rng), dim(rng), rng.int_inclusive(2, 6));
            let p = randomized(LocalizationParams::zeros(d, u), rng);
            let attended = randn(rng, &[n, d]);
            let (s, e) = span(rng, n);
            let target = SoftLabels::new(s, e, 1.0, n)?;
            let seed = rng.next_u64();
            check_params(&p, &[attended], |t, vars, extra| {
                let out = localize(t, extra[0], vars, 0.5, &mut Rng::new(seed), true)?;
                kl_loss_on_tape(t, &out, &target, KlDirection::PredTarget)
            })
        }),
        ("localize + KL (target first)", |rng| {
            let (d, u, n) = (dim(rng), dim(rng), rng.int_inclusive(2, 6));
            let p = randomized(LocalizationParams::zeros(d, u), rng);
            let attended = randn(rng, &[n, d]);
            let (s, e) = span(rng, n);
            let target = SoftLabels::new(s, e, 1.0, n)?;
            check_params(&p, &[attended], |t, vars, extra| {
                let out = localize(t, extra[0], vars, 0.5, &mut Rng::new(0), false)?;
                kl_loss_on_tape(t, &out, &target, KlDirection::TargetPred)
            })
        }),
        ("localize + NLL", |rng| {
            let (d, u, n) = (dim(rng), dim(rng), rng.int_inclusive(2, 6));
            let p = randomized(LocalizationParams::zeros(d, u), rng);
            let attended = randn(rng, &[n, d]);
            let (s, e) = span(rng, n);
            let seed = rng.next_u64();
            check_params(&p, &[attended], |t, vars, extra| {
                let out = localize(t, extra[0], vars, 0.5, &mut Rng::new(seed), true)?;
                nll_loss_on_tape(t, &out, s, e)
            })
        }),
        ("full objective KL+AL", |rng| full_objective(rng, LossMode::Kl)),
        ("full objective NLL+AL", |rng| full_objective(rng, LossMode::Nll)),
    ]
}

fn full_objective(rng: &mut Rng, loss_mode: LossMode) -> Result<GradCheckReport> {
    let dims = ModelDims {
        feature_dim: dim(rng),
        embed_dim: dim(rng),
        sentence_hidden: rng.int_inclusive(1, 3),
        attention_dim: rng.int_inclusive(1, 3),
        localization_hidden: rng.int_inclusive(1, 3),
    };
    let n = rng.int_inclusive(2, 5);
    let p = randomized(ModelParams::zeros(&dims), rng);
    let table = embedding_table(rng, 5, dims.embed_dim);
    let len = dim(rng);
    let ids: Vec<u32> = (0..len).map(|_| rng.int_inclusive(1, 4) as u32).collect();
    let features = randn(rng, &[n, dims.feature_dim]);
    let (s, e) = span(rng, n);
    let seed = rng.next_u64();
    let objective = Objective {
        loss_mode,
        ..Objective::default()
    };
    check_params(&p, &[], |t, vars, _| {
        let out = forward(t, vars, features.clone(), &ids, &table, 0.5, &mut Rng::new(seed), true)?;
        Ok(sample_loss(t, &out, s, e, &objective)?.total)
    })
}

/// Names of all checks in execution order.
pub fn check_names() -> Vec<&'static str> {
    checks().into_iter().map(|(name, _)| name).collect()
}

/// Runs every check on `instances` random instances drawn from `seed`.
pub fn gradient_suite(seed: u64, instances: usize) -> Result<Vec<SuiteEntry>> {
    checks()
        .into_iter()
        .enumerate()
        .map(|(i, (name, check))| {
            let mut rng = Rng::with_stream(seed, i as u64);
            let mut worst: f64 = 0.0;
            for _ in 0..instances {
                worst = worst.max(check(&mut rng)?.max_rel_error);
            }
            Ok(SuiteEntry {
                name,
                max_rel_error: worst,
                instances,
            })
        })
        .collect()
}
