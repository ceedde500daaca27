//! Parameter storage and the assembled model (question encoder, image
//! embedder and the single shared answering unit).

use crate::encoders::{ImageEmbedderParams, QuestionEncoderParams};
use crate::error::{Error, Result};
use crate::rau::UnitParams;
use crate::tensor::{Graph, SeededRng, Tensor, Var};

/// Learning-rate group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Question encoder (word embeddings and the two LSTM layers).
    Encoder,
    /// Image embedder and every answering-unit parameter.
    Answering,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Leaf node for `id` in `g`; repeated calls share one node.
    pub fn var(&self, g: &mut Graph, id: ParamId) -> Var {
        g.param(id.0, &self.params[id.0].value)
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// How freshly registered weight matrices are filled.
pub enum Init<'a> {
    /// Uniform in `[-r, r]`, `r = sqrt(6 / (fan_in + fan_out))`.
    Glorot(&'a mut SeededRng),
    Zeros,
}

impl Init<'_> {
    pub(crate) fn matrix(&mut self, rows: usize, cols: usize) -> Tensor {
        match self {
            Init::Zeros => Tensor::zeros(&[rows, cols]),
            Init::Glorot(rng) => {
                let r = (6.0 / (rows + cols) as f64).sqrt();
                let data = (0..rows * cols).map(|_| rng.uniform_range(-r, r)).collect();
                Tensor::matrix(rows, cols, data).expect("positive dims")
            }
        }
    }
}

/// Model dimensions. `Q = 4 * H_q` is derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    /// Vocabulary size `V`.
    pub vocab: usize,
    /// Word embedding width `D_w`.
    pub word_dim: usize,
    /// Question LSTM hidden size `H_q`.
    pub question_hidden: usize,
    /// Raw feature channels `P`.
    pub channels: usize,
    /// Feature-map locations `L`.
    pub locations: usize,
    /// Subtask / attended feature / memory width `S`.
    pub hidden: usize,
    /// Attention projection width `A`.
    pub attention: usize,
    /// Answer classes `C`.
    pub classes: usize,
}

impl ModelDims {
    pub fn question_dim(&self) -> usize {
        4 * self.question_hidden
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab", self.vocab),
            ("d_w", self.word_dim),
            ("h_q", self.question_hidden),
            ("p", self.channels),
            ("l", self.locations),
            ("s", self.hidden),
            ("a", self.attention),
            ("c", self.classes),
        ];
        for (key, v) in fields {
            if v == 0 {
                return Err(Error::config(key, "dimension must be positive"));
            }
        }
        if self.vocab < 2 {
            return Err(Error::config("vocab", "needs room for PAD and UNK"));
        }
        Ok(())
    }
}

/// The full model: one parameter set, with typed handles into it.
#[derive(Clone, Debug, PartialEq)]
pub struct RauModel {
    pub dims: ModelDims,
    pub params: ParamSet,
    pub question: QuestionEncoderParams,
    pub image: ImageEmbedderParams,
    pub unit: UnitParams,
}

impl RauModel {
    pub fn new(dims: ModelDims, rng: &mut SeededRng) -> Result<Self> {
        Self::build(dims, Init::Glorot(rng))
    }

    /// All weights zero, LSTM forget biases 1.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        Self::build(dims, Init::Zeros)
    }

    fn build(dims: ModelDims, mut init: Init<'_>) -> Result<Self> {
        dims.validate()?;
        let mut params = ParamSet::new();
        let question = QuestionEncoderParams::register(&mut params, &dims, &mut init);
        let image = ImageEmbedderParams::register(&mut params, &dims, &mut init);
        let unit = UnitParams::register(&mut params, &dims, &mut init);
        Ok(RauModel {
            dims,
            params,
            question,
            image,
            unit,
        })
    }

    /// Rebuilds a model from named tensors, inferring every dimension from
    /// the tensor shapes. Names and shapes must match a freshly built model
    /// exactly.
    pub fn from_named(named: Vec<(String, Tensor)>) -> Result<Self> {
        let lookup = |name: &str| -> Result<&Tensor> {
            named
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
        };
        let embed = lookup("enc.embed")?;
        let w_i = lookup("img.W_I")?;
        let w_beta = lookup("rau.att.W_beta")?;
        let w_alpha2 = lookup("rau.att.W_alpha2")?;
        let w_s = lookup("rau.soft.W_s")?;
        let u1 = lookup("enc.lstm1.U_i")?;
        let dims = ModelDims {
            vocab: embed.rows(),
            word_dim: embed.cols(),
            question_hidden: u1.rows(),
            channels: w_i.cols(),
            locations: w_beta.rows(),
            hidden: w_i.rows(),
            attention: w_alpha2.rows(),
            classes: w_s.rows(),
        };
        let mut model = Self::zeros(dims)?;
        if named.len() != model.params.len() {
            return Err(Error::contract(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                named.len()
            )));
        }
        for (name, tensor) in named {
            let id = model
                .params
                .find(&name)
                .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
            let slot = model.params.get_mut(id);
            if slot.shape() != tensor.shape() {
                return Err(Error::Shape {
                    op: "load parameter",
                    left: slot.shape().to_vec(),
                    right: tensor.shape().to_vec(),
                });
            }
            *slot = tensor;
        }
        Ok(model)
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.clone()))
            .collect()
    }
}
