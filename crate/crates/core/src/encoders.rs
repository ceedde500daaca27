//! Question and image encoders feeding the answering unit.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Init, ModelDims, ParamGroup, ParamId, ParamSet};
use crate::tensor::{Graph, Tensor, Var};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Bidirectional token table. Ids 0 and 1 are always PAD and UNK.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        vocab.insert(PAD_TOKEN.to_string());
        vocab.insert(UNK_TOKEN.to_string());
        for w in words {
            vocab.insert(w.into());
        }
        vocab
    }

    fn insert(&mut self, word: String) {
        if !self.index.contains_key(&word) {
            self.index.insert(word.clone(), self.tokens.len());
            self.tokens.push(word);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Lowercases, strips punctuation and splits on whitespace; unknown
    /// words map to UNK.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let ids: Vec<usize> = text
            .split_whitespace()
            .map(|w| {
                w.chars()
                    .filter(|c| c.is_alphanumeric())
                    .flat_map(char::to_lowercase)
                    .collect::<String>()
            })
            .filter(|w| !w.is_empty())
            .map(|w| self.id(&w))
            .collect();
        if ids.is_empty() {
            return Err(Error::contract("tokenize: question text has no words"));
        }
        Ok(ids)
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line; line number is the id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < 2 || lines[0] != PAD_TOKEN || lines[1] != UNK_TOKEN {
            return Err(Error::contract(
                "vocabulary must start with the PAD and UNK lines",
            ));
        }
        let vocab = Vocabulary::new(lines[2..].iter().copied());
        if vocab.len() != lines.len() {
            return Err(Error::contract("vocabulary contains duplicate tokens"));
        }
        Ok(vocab)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Standard LSTM cell: input, forget, output and candidate gates, each with
/// an input matrix `H x D`, a recurrent matrix `H x H` and a bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmCellParams {
    pub w_i: ParamId,
    pub u_i: ParamId,
    pub b_i: ParamId,
    pub w_f: ParamId,
    pub u_f: ParamId,
    pub b_f: ParamId,
    pub w_o: ParamId,
    pub u_o: ParamId,
    pub b_o: ParamId,
    pub w_g: ParamId,
    pub u_g: ParamId,
    pub b_g: ParamId,
}

/// Initial forget-gate bias.
pub const FORGET_BIAS: f64 = 1.0;

impl LstmCellParams {
    pub(crate) fn register(
        set: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        group: ParamGroup,
        init: &mut Init<'_>,
    ) -> Self {
        let mut gate = |name: char, bias: f64| {
            let w = set.add(format!("{prefix}.W_{name}"), group, init.matrix(hidden, input));
            let u = set.add(format!("{prefix}.U_{name}"), group, init.matrix(hidden, hidden));
            let b = set.add(
                format!("{prefix}.b_{name}"),
                group,
                Tensor::vector(vec![bias; hidden]),
            );
            (w, u, b)
        };
        let (w_i, u_i, b_i) = gate('i', 0.0);
        let (w_f, u_f, b_f) = gate('f', FORGET_BIAS);
        let (w_o, u_o, b_o) = gate('o', 0.0);
        let (w_g, u_g, b_g) = gate('g', 0.0);
        LstmCellParams {
            w_i,
            u_i,
            b_i,
            w_f,
            u_f,
            b_f,
            w_o,
            u_o,
            b_o,
            w_g,
            u_g,
            b_g,
        }
    }
}

/// One LSTM step on column-batched inputs `x: D x N`, `h, c: H x N`.
///
/// `i, f, o = sigmoid(W x + U h + b)`, `g = tanh(W_g x + U_g h + b_g)`,
/// `c' = f * c + i * g`, `h' = o * tanh(c')`.
pub fn lstm_cell(
    g: &mut Graph,
    set: &ParamSet,
    p: &LstmCellParams,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let pre = |g: &mut Graph, w: ParamId, u: ParamId, b: ParamId| -> Result<Var> {
        let (w, u, b) = (set.var(g, w), set.var(g, u), set.var(g, b));
        let wx = g.matmul(w, x)?;
        let uh = g.matmul(u, h)?;
        let s = g.add(wx, uh)?;
        g.add_bias(s, b)
    };
    let i = pre(g, p.w_i, p.u_i, p.b_i)?;
    let i = g.sigmoid(i)?;
    let f = pre(g, p.w_f, p.u_f, p.b_f)?;
    let f = g.sigmoid(f)?;
    let o = pre(g, p.w_o, p.u_o, p.b_o)?;
    let o = g.sigmoid(o)?;
    let cand = pre(g, p.w_g, p.u_g, p.b_g)?;
    let cand = g.tanh(cand)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let tc = g.tanh(c_next)?;
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Word embeddings plus a two-layer LSTM.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuestionEncoderParams {
    pub embedding: ParamId,
    pub layer1: LstmCellParams,
    pub layer2: LstmCellParams,
}

impl QuestionEncoderParams {
    pub(crate) fn register(set: &mut ParamSet, dims: &ModelDims, init: &mut Init<'_>) -> Self {
        let group = ParamGroup::Encoder;
        let embedding = set.add("enc.embed", group, init.matrix(dims.vocab, dims.word_dim));
        let h = dims.question_hidden;
        let layer1 = LstmCellParams::register(set, "enc.lstm1", dims.word_dim, h, group, init);
        let layer2 = LstmCellParams::register(set, "enc.lstm2", h, h, group, init);
        QuestionEncoderParams {
            embedding,
            layer1,
            layer2,
        }
    }
}

/// Encodes one question per column: `f_q = [h1_T; c1_T; h2_T; c2_T]`, a
/// `4 H_q x N` matrix.
///
/// Questions of equal length are run through the recurrence together;
/// consecutive runs of equal length form one group, and groups are joined
/// column-wise in input order.
pub fn encode_question(
    g: &mut Graph,
    set: &ParamSet,
    p: &QuestionEncoderParams,
    questions: &[&[usize]],
) -> Result<Var> {
    if questions.is_empty() {
        return Err(Error::contract("encode_question: empty batch"));
    }
    if questions.iter().any(|q| q.is_empty()) {
        return Err(Error::contract("encode_question: empty token sequence"));
    }
    let mut groups = Vec::new();
    let mut start = 0;
    while start < questions.len() {
        let len = questions[start].len();
        let end = start
            + questions[start..]
                .iter()
                .take_while(|q| q.len() == len)
                .count();
        groups.push(encode_group(g, set, p, &questions[start..end])?);
        start = end;
    }
    if groups.len() == 1 {
        Ok(groups[0])
    } else {
        g.concat_cols(&groups)
    }
}

fn encode_group(
    g: &mut Graph,
    set: &ParamSet,
    p: &QuestionEncoderParams,
    questions: &[&[usize]],
) -> Result<Var> {
    let n = questions.len();
    let hidden = set.get(p.layer1.u_i).rows();
    let zeros = Tensor::zeros(&[hidden, n]);
    let (mut h1, mut c1) = (g.input(zeros.clone()), g.input(zeros.clone()));
    let (mut h2, mut c2) = (g.input(zeros.clone()), g.input(zeros));
    let table = set.var(g, p.embedding);
    for t in 0..questions[0].len() {
        let ids: Vec<usize> = questions.iter().map(|q| q[t]).collect();
        let x = g.embed(table, &ids)?;
        (h1, c1) = lstm_cell(g, set, &p.layer1, x, h1, c1)?;
        (h2, c2) = lstm_cell(g, set, &p.layer2, h1, h2, c2)?;
    }
    g.concat_rows(&[h1, c1, h2, c2])
}

/// `g_I = tanh(W_I f_I + b_I 1^T)` with `W_I: S x P`, `b_I: S`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageEmbedderParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl ImageEmbedderParams {
    pub(crate) fn register(set: &mut ParamSet, dims: &ModelDims, init: &mut Init<'_>) -> Self {
        let group = ParamGroup::Answering;
        let w = set.add("img.W_I", group, init.matrix(dims.hidden, dims.channels));
        let b = set.add("img.b_I", group, Tensor::zeros(&[dims.hidden]));
        ImageEmbedderParams { w, b }
    }
}

/// Embeds feature maps stored side by side: `f_I` is `P x (N L)`.
pub fn embed_image(
    g: &mut Graph,
    set: &ParamSet,
    p: &ImageEmbedderParams,
    features: Var,
) -> Result<Var> {
    let w = set.var(g, p.w);
    let b = set.var(g, p.b);
    let pre = g.linear_combine(w, features, b, true)?;
    g.tanh(pre)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelDims, RauModel};
    use crate::tensor::{finite_diff_oracle, max_relative_error, SeededRng};

    fn vocab() -> Vocabulary {
        Vocabulary::new(["what", "color", "is", "the", "square"])
    }

    #[test]
    fn tokenize_known_words() {
        let v = vocab();
        let ids = v.tokenize("what color is the square ?").unwrap();
        assert_eq!(ids, vec![2, 3, 4, 5, 6]);
    }

    #[test]
    fn tokenize_maps_unknown_to_unk() {
        let v = vocab();
        let ids = v.tokenize("What colour is the Square").unwrap();
        assert_eq!(ids, vec![v.id("what"), UNK, v.id("is"), v.id("the"), v.id("square")]);
    }

    #[test]
    fn tokenize_rejects_empty() {
        assert!(vocab().tokenize("").is_err());
        assert!(vocab().tokenize("  ? ").is_err());
    }

    #[test]
    fn vocabulary_text_roundtrip() {
        let v = vocab();
        let text = v.to_text();
        assert!(text.starts_with("<pad>\n<unk>\n"));
        assert_eq!(Vocabulary::from_text(&text).unwrap(), v);
        assert!(Vocabulary::from_text("what\ncolor\n").is_err());
    }

    fn cell_set(input: usize, hidden: usize, rng: Option<&mut SeededRng>) -> (ParamSet, LstmCellParams) {
        let mut set = ParamSet::new();
        let mut init = match rng {
            Some(r) => Init::Glorot(r),
            None => Init::Zeros,
        };
        let p = LstmCellParams::register(&mut set, "cell", input, hidden, ParamGroup::Answering, &mut init);
        (set, p)
    }

    fn run_cell(set: &ParamSet, p: &LstmCellParams, x: &Tensor, h: &Tensor, c: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let (x, h, c) = (g.input(x.clone()), g.input(h.clone()), g.input(c.clone()));
        let (h2, c2) = lstm_cell(&mut g, set, p, x, h, c).unwrap();
        (g.value(h2).data().to_vec(), g.value(c2).data().to_vec())
    }

    #[test]
    fn lstm_cell_zero_everything() {
        let (set, p) = cell_set(3, 2, None);
        let (h, c) = run_cell(&set, &p, &Tensor::zeros(&[3]), &Tensor::zeros(&[2]), &Tensor::zeros(&[2]));
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn lstm_cell_saturated_gates_pass_memory() {
        let (mut set, p) = cell_set(1, 1, None);
        set.get_mut(p.b_f).data_mut()[0] = 50.0;
        set.get_mut(p.b_o).data_mut()[0] = 50.0;
        let (h, c) = run_cell(&set, &p, &Tensor::zeros(&[1]), &Tensor::zeros(&[1]), &Tensor::vector(vec![1.0]));
        // f = o = sigmoid(50), i = 0.5, g = 0
        let s50 = 1.0 / (1.0 + (-50f64).exp());
        assert!((c[0] - s50).abs() < 1e-15);
        assert!((h[0] - s50 * s50.tanh()).abs() < 1e-15);
        assert!((h[0] - 0.761594).abs() < 1e-6);
    }

    #[test]
    fn lstm_cell_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(11);
        let (set, p) = cell_set(3, 2, Some(&mut rng));
        let x = Tensor::vector(vec![0.4, -0.7, 0.2]);
        let h = Tensor::vector(vec![0.1, -0.3]);
        let c = Tensor::vector(vec![0.5, 0.2]);
        let loss = |set: &ParamSet| {
            let mut g = Graph::new();
            let (xv, hv, cv) = (g.input(x.clone()), g.input(h.clone()), g.input(c.clone()));
            let (h2, _) = lstm_cell(&mut g, set, &p, xv, hv, cv).unwrap();
            let s = g.sum(h2).unwrap();
            (g, s)
        };
        let (g, s) = loss(&set);
        let grads = g.backward(s).unwrap();
        for id in set.ids() {
            let numeric = finite_diff_oracle(
                |t| {
                    let mut probe = set.clone();
                    *probe.get_mut(id) = t.clone();
                    let (g, s) = loss(&probe);
                    g.value(s).data()[0]
                },
                set.get(id),
                1e-5,
            );
            let err = max_relative_error(grads.param(id.index()).unwrap(), &numeric);
            assert!(err < 1e-4, "{}: {err}", set.param(id).name);
        }
    }

    fn small_dims() -> ModelDims {
        ModelDims {
            vocab: 8,
            word_dim: 3,
            question_hidden: 4,
            channels: 2,
            locations: 2,
            hidden: 2,
            attention: 2,
            classes: 3,
        }
    }

    fn encode(model: &RauModel, qs: &[&[usize]]) -> Tensor {
        let mut g = Graph::new();
        let v = encode_question(&mut g, &model.params, &model.question, qs).unwrap();
        g.value(v).clone()
    }

    #[test]
    fn encode_question_single_token_is_one_cell_per_layer() {
        let mut rng = SeededRng::new(2);
        let model = RauModel::new(small_dims(), &mut rng).unwrap();
        let f_q = encode(&model, &[&[5]]);
        let set = &model.params;
        let emb = set.get(model.question.embedding);
        let x = Tensor::vector(emb.data()[5 * 3..6 * 3].to_vec());
        let z = Tensor::zeros(&[4]);
        let (h1, c1) = run_cell(set, &model.question.layer1, &x, &z, &z);
        let (h2, c2) = run_cell(set, &model.question.layer2, &Tensor::vector(h1.clone()), &z, &z);
        let expected: Vec<f64> = [h1, c1, h2, c2].concat();
        assert_eq!(f_q.data(), &expected[..]);
    }

    #[test]
    fn encode_question_zero_params_gives_zero_feature() {
        let model = RauModel::zeros(small_dims()).unwrap();
        let f_q = encode(&model, &[&[2, 3, 4]]);
        assert_eq!(f_q.shape(), &[16, 1]);
        assert!(f_q.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_question_rejects_bad_ids() {
        let model = RauModel::zeros(small_dims()).unwrap();
        let mut g = Graph::new();
        assert!(encode_question(&mut g, &model.params, &model.question, &[&[9]]).is_err());
        assert!(encode_question(&mut g, &model.params, &model.question, &[&[]]).is_err());
    }

    /// Straight-line reference of the two-layer recurrence on plain vectors.
    fn reference_encode(model: &RauModel, tokens: &[usize]) -> Vec<f64> {
        let set = &model.params;
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let matvec = |m: &Tensor, v: &[f64]| -> Vec<f64> {
            (0..m.rows())
                .map(|r| (0..m.cols()).map(|c| m.get(r, c) * v[c]).sum())
                .collect()
        };
        let step = |p: &LstmCellParams, x: &[f64], h: &[f64], c: &[f64]| {
            let gate = |w, u, b| -> Vec<f64> {
                let wx = matvec(set.get(w), x);
                let uh = matvec(set.get(u), h);
                let b = set.get(b).data();
                (0..h.len()).map(|k| wx[k] + uh[k] + b[k]).collect()
            };
            let i: Vec<f64> = gate(p.w_i, p.u_i, p.b_i).into_iter().map(sig).collect();
            let f: Vec<f64> = gate(p.w_f, p.u_f, p.b_f).into_iter().map(sig).collect();
            let o: Vec<f64> = gate(p.w_o, p.u_o, p.b_o).into_iter().map(sig).collect();
            let g: Vec<f64> = gate(p.w_g, p.u_g, p.b_g).into_iter().map(f64::tanh).collect();
            let c2: Vec<f64> = (0..h.len()).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
            let h2: Vec<f64> = (0..h.len()).map(|k| o[k] * c2[k].tanh()).collect();
            (h2, c2)
        };
        let hq = model.dims.question_hidden;
        let dw = model.dims.word_dim;
        let (mut h1, mut c1, mut h2, mut c2) = (vec![0.0; hq], vec![0.0; hq], vec![0.0; hq], vec![0.0; hq]);
        let emb = set.get(model.question.embedding).data();
        for &t in tokens {
            let x = &emb[t * dw..(t + 1) * dw];
            (h1, c1) = step(&model.question.layer1, x, &h1, &c1);
            (h2, c2) = step(&model.question.layer2, &h1, &h2, &c2);
        }
        [h1, c1, h2, c2].concat()
    }

    #[test]
    fn encode_question_matches_straight_line_reference() {
        let mut rng = SeededRng::new(17);
        let model = RauModel::new(small_dims(), &mut rng).unwrap();
        let tokens = [3, 7, 2];
        let f_q = encode(&model, &[&tokens]);
        let reference = reference_encode(&model, &tokens);
        for (a, b) in f_q.data().iter().zip(&reference) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn encode_question_batches_mixed_lengths_like_singles() {
        let mut rng = SeededRng::new(4);
        let model = RauModel::new(small_dims(), &mut rng).unwrap();
        let qs: [&[usize]; 4] = [&[2, 3], &[4, 5], &[6], &[2, 3, 4]];
        let batch = encode(&model, &qs);
        for (n, q) in qs.iter().enumerate() {
            let single = encode(&model, &[q]);
            assert_eq!(batch.column(n), single.data().to_vec());
        }
    }

    #[test]
    fn encode_question_is_causal() {
        let mut rng = SeededRng::new(8);
        let model = RauModel::new(small_dims(), &mut rng).unwrap();
        let full = encode(&model, &[&[2, 3, 4, 5]]);
        let prefix = encode(&model, &[&[2, 3, 4]]);
        assert_ne!(full.data(), prefix.data());
        // the prefix state is the state after three steps of the longer run
        let reference = reference_encode(&model, &[2, 3, 4]);
        for (a, b) in prefix.data().iter().zip(&reference) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    fn image_model(w: Vec<f64>, b: Vec<f64>) -> RauModel {
        let mut model = RauModel::zeros(small_dims()).unwrap();
        *model.params.get_mut(model.image.w) = Tensor::matrix(2, 2, w).unwrap();
        *model.params.get_mut(model.image.b) = Tensor::vector(b);
        model
    }

    fn embed(model: &RauModel, f: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let x = g.input(f.clone());
        let v = embed_image(&mut g, &model.params, &model.image, x).unwrap();
        g.value(v).clone()
    }

    #[test]
    fn embed_image_examples() {
        let f = Tensor::matrix(2, 2, vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let m = image_model(vec![0.0; 4], vec![0.2, -0.4]);
        let out = embed(&m, &f);
        assert_eq!(out.data(), &[0.2f64.tanh(), 0.2f64.tanh(), (-0.4f64).tanh(), (-0.4f64).tanh()]);

        let m = image_model(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]);
        let out = embed(&m, &f);
        let expected: Vec<f64> = f.data().iter().map(|v| v.tanh()).collect();
        assert_eq!(out.data(), &expected[..]);

        // W = [[1, 2], [0, -1]], b = [0.5, 0.1]
        // col 0: [0.3 + 4.0 + 0.5, -2.0 + 0.1] ; col 1: [-1.0 + 1.0 + 0.5, -0.5 + 0.1]
        let m = image_model(vec![1.0, 2.0, 0.0, -1.0], vec![0.5, 0.1]);
        let out = embed(&m, &f);
        let expected = [4.8f64.tanh(), 0.5f64.tanh(), (-1.9f64).tanh(), (-0.4f64).tanh()];
        for (a, b) in out.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(out.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn embed_image_rejects_wrong_channels() {
        let m = image_model(vec![0.0; 4], vec![0.0, 0.0]);
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[3, 2]));
        assert!(embed_image(&mut g, &m.params, &m.image, x).is_err());
    }
}
