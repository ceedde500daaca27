//! The answering unit and its K-step unrolling.
//!
//! Every unrolled step reads the same [`UnitParams`]; only the memory state
//! (`h`, `c`) flows from one step to the next. All functions work on
//! column-batched activations: one example per column, and feature maps
//! stored side by side as `rows x (N L)` matrices.

use crate::encoders::{embed_image, encode_question, lstm_cell, LstmCellParams};
use crate::error::{Error, Result};
use crate::model::{Init, ModelDims, ParamGroup, ParamId, ParamSet, RauModel};
use crate::tensor::{Graph, SeededRng, Tensor, Var};

/// Shared answering-unit parameters `{sub, att, lstm, soft}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnitParams {
    pub w_q: ParamId,
    pub w_h: ParamId,
    pub b_sub: ParamId,
    /// Score head `1 x A`, applied at every location.
    pub w_alpha1: ParamId,
    pub w_alpha2: ParamId,
    pub w_alpha3: ParamId,
    pub b_alpha: ParamId,
    pub w_beta: ParamId,
    pub b_beta: ParamId,
    pub lstm: LstmCellParams,
    pub w_join: ParamId,
    pub b_join: ParamId,
    pub w_s: ParamId,
    pub b_s: ParamId,
}

impl UnitParams {
    pub(crate) fn register(set: &mut ParamSet, dims: &ModelDims, init: &mut Init<'_>) -> Self {
        let grp = ParamGroup::Answering;
        let (s, a, l, c, q) = (
            dims.hidden,
            dims.attention,
            dims.locations,
            dims.classes,
            dims.question_dim(),
        );
        let w_q = set.add("rau.sub.W_q", grp, init.matrix(s, q));
        let w_h = set.add("rau.sub.W_h", grp, init.matrix(s, s));
        let b_sub = set.add("rau.sub.b_sub", grp, Tensor::zeros(&[s]));
        let w_alpha1 = set.add("rau.att.W_alpha1", grp, init.matrix(1, a));
        let w_alpha2 = set.add("rau.att.W_alpha2", grp, init.matrix(a, s));
        let w_alpha3 = set.add("rau.att.W_alpha3", grp, init.matrix(a, s));
        let b_alpha = set.add("rau.att.b_alpha", grp, Tensor::zeros(&[a]));
        let w_beta = set.add("rau.att.W_beta", grp, init.matrix(l, s));
        let b_beta = set.add("rau.att.b_beta", grp, Tensor::zeros(&[l]));
        let lstm = LstmCellParams::register(set, "rau.lstm", s, s, grp, init);
        let w_join = set.add("rau.soft.W_join", grp, init.matrix(s, l));
        let b_join = set.add("rau.soft.b_join", grp, Tensor::zeros(&[s]));
        let w_s = set.add("rau.soft.W_s", grp, init.matrix(c, s));
        let b_s = set.add("rau.soft.b_s", grp, Tensor::zeros(&[c]));
        UnitParams {
            w_q,
            w_h,
            b_sub,
            w_alpha1,
            w_alpha2,
            w_alpha3,
            b_alpha,
            w_beta,
            b_beta,
            lstm,
            w_join,
            b_join,
            w_s,
            b_s,
        }
    }
}

/// Memory carried between steps; starts at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryState {
    pub h: Var,
    pub c: Var,
}

impl MemoryState {
    pub fn zeros(g: &mut Graph, hidden: usize, batch: usize) -> Self {
        let z = Tensor::zeros(&[hidden, batch]);
        MemoryState {
            h: g.input(z.clone()),
            c: g.input(z),
        }
    }
}

/// Graph handles produced by one answering step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepVars {
    /// Answer distribution, `C x N`.
    pub answer: Var,
    /// Attention map, `L x N`.
    pub loc: Var,
    pub att: Var,
    pub sub: Var,
    pub state: MemoryState,
}

/// One step's outputs for a single example, as plain vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub a: Vec<f64>,
    pub f_loc: Vec<f64>,
    pub f_att: Vec<f64>,
    pub f_sub: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl StepOutput {
    fn from_column(g: &Graph, step: &StepVars, col: usize) -> Self {
        StepOutput {
            a: g.value(step.answer).column(col),
            f_loc: g.value(step.loc).column(col),
            f_att: g.value(step.att).column(col),
            f_sub: g.value(step.sub).column(col),
            h: g.value(step.state.h).column(col),
            c: g.value(step.state.c).column(col),
        }
    }
}

/// `f_sub = tanh(W_q f_q + W_h h_prev + b_sub)`.
pub fn subtask(g: &mut Graph, set: &ParamSet, p: &UnitParams, f_q: Var, h_prev: Var) -> Result<Var> {
    let w_q = set.var(g, p.w_q);
    let w_h = set.var(g, p.w_h);
    let b = set.var(g, p.b_sub);
    let qx = g.matmul(w_q, f_q)?;
    let hx = g.matmul(w_h, h_prev)?;
    let s = g.add(qx, hx)?;
    let s = g.add_bias(s, b)?;
    g.tanh(s)
}

/// `W_alpha2 g_I`, the step-independent half of the attention score.
pub fn project_image(g: &mut Graph, set: &ParamSet, p: &UnitParams, g_i: Var) -> Result<Var> {
    let w = set.var(g, p.w_alpha2);
    g.matmul(w, g_i)
}

/// Soft attention over the embedded feature map. Returns `(f_loc, f_att)`.
pub fn attend(
    g: &mut Graph,
    set: &ParamSet,
    p: &UnitParams,
    g_i: Var,
    f_sub: Var,
    h_prev: Var,
) -> Result<(Var, Var)> {
    let proj = project_image(g, set, p, g_i)?;
    attend_projected(g, set, p, g_i, proj, f_sub, h_prev)
}

/// [`attend`] with `W_alpha2 g_I` already computed.
///
/// `alpha[l] = W_alpha1 tanh(W_alpha2 g_I[:, l] + W_alpha3 f_sub + b_alpha)`,
/// `beta = alpha + W_beta h_prev + b_beta`, `f_loc = softmax(beta)`,
/// `f_att = g_I f_loc`.
pub fn attend_projected(
    g: &mut Graph,
    set: &ParamSet,
    p: &UnitParams,
    g_i: Var,
    proj: Var,
    f_sub: Var,
    h_prev: Var,
) -> Result<(Var, Var)> {
    let locations = set.get(p.w_beta).rows();
    let batch = g.value(f_sub).cols();
    if g.value(g_i).cols() != locations * batch {
        return Err(Error::Shape {
            op: "attend",
            left: g.value(g_i).shape().to_vec(),
            right: vec![g.value(f_sub).rows(), batch * locations],
        });
    }
    let w3 = set.var(g, p.w_alpha3);
    let b_alpha = set.var(g, p.b_alpha);
    let query = g.linear_combine(w3, f_sub, b_alpha, true)?;
    let query = g.repeat_cols(query, locations)?;
    let hidden = g.add(proj, query)?;
    let hidden = g.tanh(hidden)?;
    let w1 = set.var(g, p.w_alpha1);
    let alpha = g.matmul(w1, hidden)?; // 1 x (N L)
    let alpha = g.reshape(alpha, &[batch, locations])?;
    let alpha = g.transpose(alpha)?; // L x N
    let w_beta = set.var(g, p.w_beta);
    let b_beta = set.var(g, p.b_beta);
    let mem = g.linear_combine(w_beta, h_prev, b_beta, true)?;
    let beta = g.add(alpha, mem)?;
    let f_loc = g.softmax_cols(beta)?;
    let f_att = g.grouped_matvec(g_i, f_loc)?;
    Ok((f_loc, f_att))
}

/// Memory update and answer distribution.
///
/// `f_join = f_sub + f_att + W_join f_loc + b_join`,
/// `(h', c') = LSTM(f_join, h, c)`, `a = softmax(W_s (f_join + h') + b_s)`.
pub fn predict_step(
    g: &mut Graph,
    set: &ParamSet,
    p: &UnitParams,
    f_sub: Var,
    f_loc: Var,
    f_att: Var,
    state: MemoryState,
) -> Result<(Var, MemoryState)> {
    let w_join = set.var(g, p.w_join);
    let b_join = set.var(g, p.b_join);
    let loc = g.linear_combine(w_join, f_loc, b_join, true)?;
    let join = g.add(f_sub, f_att)?;
    let join = g.add(join, loc)?;
    let (h, c) = lstm_cell(g, set, &p.lstm, join, state.h, state.c)?;
    let skip = g.add(join, h)?;
    let w_s = set.var(g, p.w_s);
    let b_s = set.var(g, p.b_s);
    let logits = g.linear_combine(w_s, skip, b_s, true)?;
    let a = g.softmax_cols(logits)?;
    Ok((a, MemoryState { h, c }))
}

/// Dropout configuration for one forward pass.
pub enum Dropout<'r> {
    Off,
    On { rate: f64, rng: &'r mut SeededRng },
}

/// Inverted dropout: in training mode each element is zeroed with
/// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
/// Evaluation mode and `rate == 0` return `x` unchanged.
pub fn apply_unit_dropout(
    g: &mut Graph,
    x: Var,
    rate: f64,
    rng: &mut SeededRng,
    training: bool,
) -> Result<Var> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let xv = g.value(x);
    let scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..xv.len())
        .map(|_| if rng.uniform() < rate { 0.0 } else { scale })
        .collect();
    let mask = Tensor::new(vec![xv.rows(), xv.cols()], mask)?;
    g.mul_const(x, &mask)
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(
            "dropout_rate",
            format!("must lie in [0, 1), got {rate}"),
        ));
    }
    Ok(())
}

/// Places per-example `P x L` feature maps side by side as `P x (N L)`.
pub fn stack_feature_maps(maps: &[&Tensor]) -> Result<Tensor> {
    let first = maps
        .first()
        .ok_or_else(|| Error::contract("stack_feature_maps: no inputs"))?;
    let (rows, cols) = (first.rows(), first.cols());
    let n = maps.len();
    let mut data = vec![0.0; rows * cols * n];
    for (i, m) in maps.iter().enumerate() {
        if m.rows() != rows || m.cols() != cols {
            return Err(Error::Shape {
                op: "stack_feature_maps",
                left: first.shape().to_vec(),
                right: m.shape().to_vec(),
            });
        }
        for r in 0..rows {
            let dst = r * cols * n + i * cols;
            data[dst..dst + cols].copy_from_slice(&m.data()[r * cols..(r + 1) * cols]);
        }
    }
    Tensor::matrix(rows, cols * n, data)
}

/// Unrolls `steps` answering units over a batch.
///
/// `features` holds the raw feature maps side by side (`P x (N L)`) and
/// `questions` one token sequence per example. With dropout on, every unit
/// draws fresh masks for `f_q` and `g_I`.
pub fn forward(
    g: &mut Graph,
    model: &RauModel,
    features: &Tensor,
    questions: &[&[usize]],
    steps: usize,
    dropout: &mut Dropout<'_>,
) -> Result<Vec<StepVars>> {
    if steps < 1 {
        return Err(Error::contract("forward: K must be at least 1"));
    }
    let set = &model.params;
    let p = &model.unit;
    let batch = questions.len();
    if features.cols() != batch * model.dims.locations || features.rows() != model.dims.channels {
        return Err(Error::Shape {
            op: "forward",
            left: features.shape().to_vec(),
            right: vec![model.dims.channels, batch * model.dims.locations],
        });
    }
    let f_q = encode_question(g, set, &model.question, questions)?;
    let raw = g.input(features.clone());
    let g_i = embed_image(g, set, &model.image, raw)?;
    let mut state = MemoryState::zeros(g, model.dims.hidden, batch);
    let mut shared_proj = None;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (fq_k, gi_k, proj) = match dropout {
            Dropout::Off => {
                let proj = match shared_proj {
                    Some(v) => v,
                    None => {
                        let v = project_image(g, set, p, g_i)?;
                        shared_proj = Some(v);
                        v
                    }
                };
                (f_q, g_i, proj)
            }
            Dropout::On { rate, rng } => {
                let fq_k = apply_unit_dropout(g, f_q, *rate, rng, true)?;
                let gi_k = apply_unit_dropout(g, g_i, *rate, rng, true)?;
                let proj = project_image(g, set, p, gi_k)?;
                (fq_k, gi_k, proj)
            }
        };
        let sub = subtask(g, set, p, fq_k, state.h)?;
        let (loc, att) = attend_projected(g, set, p, gi_k, proj, sub, state.h)?;
        let (answer, next) = predict_step(g, set, p, sub, loc, att, state)?;
        out.push(StepVars {
            answer,
            loc,
            att,
            sub,
            state: next,
        });
        state = next;
    }
    Ok(out)
}

/// Dropout-free forward pass for one example (`features: P x L`).
pub fn forward_example(
    model: &RauModel,
    features: &Tensor,
    tokens: &[usize],
    steps: usize,
) -> Result<Vec<StepOutput>> {
    let mut g = Graph::new();
    let stepvars = forward(&mut g, model, features, &[tokens], steps, &mut Dropout::Off)?;
    Ok(stepvars
        .iter()
        .map(|s| StepOutput::from_column(&g, s, 0))
        .collect())
}

/// Dropout-free forward pass over a batch, returning per-example step outputs.
pub fn forward_batch(
    model: &RauModel,
    features: &[&Tensor],
    questions: &[&[usize]],
    steps: usize,
) -> Result<Vec<Vec<StepOutput>>> {
    let stacked = stack_feature_maps(features)?;
    let mut g = Graph::new();
    let stepvars = forward(&mut g, model, &stacked, questions, steps, &mut Dropout::Off)?;
    Ok((0..questions.len())
        .map(|n| {
            stepvars
                .iter()
                .map(|s| StepOutput::from_column(&g, s, n))
                .collect()
        })
        .collect())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Test-time answer: argmax of the first unit's distribution.
pub fn infer_answer(model: &RauModel, features: &Tensor, tokens: &[usize]) -> Result<usize> {
    let steps = forward_example(model, features, tokens, 1)?;
    Ok(argmax(&steps[0].a))
}
