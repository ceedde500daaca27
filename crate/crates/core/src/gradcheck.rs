//! Whole-model gradient verification against central differences.

use crate::error::Result;
use crate::model::{ModelDims, ParamId, RauModel};
use crate::rau::{forward, Dropout};
use crate::tensor::{finite_diff_oracle, max_relative_error, Graph, SeededRng, Tensor};
use crate::trainer::joint_loss_graph;

pub const DEFAULT_TOL: f64 = 1e-4;
pub const FD_EPS: f64 = 1e-5;

/// Small dimensions for exhaustive gradient checks.
pub fn tiny_dims() -> ModelDims {
    ModelDims {
        vocab: 10,
        word_dim: 4,
        question_hidden: 4,
        channels: 3,
        locations: 4,
        hidden: 8,
        attention: 4,
        classes: 5,
    }
}

/// A fixed random batch: feature maps side by side, questions, labels.
#[derive(Clone, Debug)]
pub struct Probe {
    pub features: Tensor,
    pub questions: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
    pub active: Vec<bool>,
}

impl Probe {
    /// Three examples with question lengths 2, 3 and 3, every unit active.
    pub fn random(dims: &ModelDims, k: usize, rng: &mut SeededRng) -> Result<Self> {
        let n = 3;
        let features = Tensor::matrix(
            dims.channels,
            dims.locations * n,
            (0..dims.channels * dims.locations * n)
                .map(|_| rng.uniform_range(-1.0, 1.0))
                .collect(),
        )?;
        let questions = [2, 3, 3]
            .iter()
            .map(|&len| (0..len).map(|_| rng.int_inclusive(0, dims.vocab - 1)).collect())
            .collect();
        let labels = (0..n).map(|_| rng.below(dims.classes)).collect();
        Ok(Probe {
            features,
            questions,
            labels,
            active: vec![true; k],
        })
    }

    pub fn loss(&self, model: &RauModel) -> Result<(Graph, crate::tensor::Var)> {
        let mut g = Graph::new();
        let qs: Vec<&[usize]> = self.questions.iter().map(Vec::as_slice).collect();
        let steps = forward(&mut g, model, &self.features, &qs, self.active.len(), &mut Dropout::Off)?;
        let loss = joint_loss_graph(&mut g, &steps, &self.labels, &self.active)?;
        Ok((g, loss))
    }
}

/// Parameter group of a dotted name: `img` for the image embedder, else the
/// first two components (`enc.embed`, `enc.lstm1`, `rau.att`, ...).
pub fn group_of(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    if parts[0] == "img" {
        parts[0].to_string()
    } else if parts.len() < 3 {
        name.to_string()
    } else {
        format!("{}.{}", parts[0], parts[1])
    }
}

/// Maximum relative error of one parameter tensor's analytic gradient.
pub fn check_param(model: &RauModel, probe: &Probe, id: ParamId, analytic: &Tensor) -> Result<f64> {
    let mut scratch = model.clone();
    let mut failure = None;
    let numeric = finite_diff_oracle(
        |x| {
            *scratch.params.get_mut(id) = x.clone();
            match probe.loss(&scratch) {
                Ok((g, l)) => g.value(l).data()[0],
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        model.params.get(id),
        FD_EPS,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(max_relative_error(analytic, &numeric))
}

/// Gradient check of the full unrolled model. Returns `(group, max relative
/// error)` in parameter order of first appearance.
pub fn grad_check(dims: ModelDims, k: usize, seed: u64) -> Result<Vec<(String, f64)>> {
    let mut rng = SeededRng::new(seed);
    let model = RauModel::new(dims, &mut rng)?;
    let probe = Probe::random(&dims, k, &mut rng)?;
    let (g, loss) = probe.loss(&model)?;
    let grads = g.backward(loss)?;
    let mut report: Vec<(String, f64)> = Vec::new();
    for (id, p) in model.params.iter() {
        let analytic = grads
            .param(id.index())
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
        let err = check_param(&model, &probe, id, &analytic)?;
        let group = group_of(&p.name);
        match report.iter_mut().find(|(g, _)| *g == group) {
            Some(entry) => entry.1 = entry.1.max(err),
            None => report.push((group, err)),
        }
    }
    Ok(report)
}
