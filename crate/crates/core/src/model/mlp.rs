use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{matmul, softmax_rows, Tape, Tensor, Var};

/// Per-layer nonlinearity of the feature extractor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Tanh,
    Relu,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Linear => v,
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    fn on_tape(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Linear => v,
            Activation::Tanh => tape.tanh(v),
            Activation::Relu => tape.relu(v),
        }
    }
}

/// Layer widths of an [`MlpModel`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    /// Hidden widths between the input and the bottleneck.
    pub hidden: Vec<usize>,
    /// Width `d` of the embedding handed to the classifier.
    pub bottleneck: usize,
    pub classes: usize,
}

impl ModelDims {
    /// One hidden layer of 32 units and a 16-wide bottleneck.
    pub fn desk_scale(input_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![32],
            bottleneck: 16,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.bottleneck == 0 || self.hidden.contains(&0) {
            return Err(Error::Argument("layer widths must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Argument("a classifier needs at least 2 classes".into()));
        }
        Ok(())
    }

    /// Widths of the extractor layers, input first and bottleneck last.
    pub fn extractor_widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.bottleneck);
        w
    }
}

/// Fully connected layer `act(x W + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            weight: Tensor::zeros(fan_in, fan_out),
            bias: Tensor::zeros(1, fan_out),
            activation,
        }
    }

    /// Uniform(-s, s) weights and biases with `s = 1/sqrt(fan_in)`.
    fn uniform(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let s = 1.0 / (fan_in as f64).sqrt();
        let mut layer = Self::zeros(fan_in, fan_out, activation);
        for v in layer.weight.data_mut().iter_mut().chain(layer.bias.data_mut()) {
            *v = rng.random_range(-s..s);
        }
        layer
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut z = matmul(x, &self.weight)?;
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(self.bias.data()) {
                *v = self.activation.apply(*v + b);
            }
        }
        Ok(z)
    }
}

/// Tape handles for every model parameter, in declaration order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub vars: Vec<Var>,
}

/// Feature extractor `f` (input → bottleneck) followed by a linear classifier `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    dims: ModelDims,
    extractor: Vec<Dense>,
    classifier: Dense,
    seed: u64,
}

impl MlpModel {
    /// Seeded uniform initialisation with tanh on every extractor layer.
    pub fn new(dims: ModelDims, seed: u64) -> Result<Self> {
        let acts = vec![Activation::Tanh; dims.hidden.len() + 1];
        Self::with_activations(dims, &acts, seed)
    }

    pub fn with_activations(dims: ModelDims, activations: &[Activation], seed: u64) -> Result<Self> {
        dims.validate()?;
        let widths = dims.extractor_widths();
        if activations.len() != widths.len() - 1 {
            return Err(Error::Argument(format!(
                "{} activations for {} extractor layers",
                activations.len(),
                widths.len() - 1
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extractor = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Dense::uniform(w[0], w[1], act, &mut rng))
            .collect();
        let classifier = Dense::uniform(dims.bottleneck, dims.classes, Activation::Linear, &mut rng);
        Ok(Self {
            dims,
            extractor,
            classifier,
            seed,
        })
    }

    /// Assembles a model from explicit layers; shapes must chain.
    pub fn from_layers(extractor: Vec<Dense>, classifier: Dense, seed: u64) -> Result<Self> {
        let first = extractor
            .first()
            .ok_or_else(|| Error::Argument("extractor needs at least one layer".into()))?;
        let mut hidden = Vec::new();
        let mut width = first.weight.rows();
        let input_dim = width;
        for (i, layer) in extractor.iter().enumerate() {
            check_layer(layer, width, i)?;
            width = layer.weight.cols();
            if i + 1 < extractor.len() {
                hidden.push(width);
            }
        }
        check_layer(&classifier, width, extractor.len())?;
        if classifier.activation != Activation::Linear {
            return Err(Error::Argument("classifier must be linear".into()));
        }
        let dims = ModelDims {
            input_dim,
            hidden,
            bottleneck: width,
            classes: classifier.weight.cols(),
        };
        dims.validate()?;
        Ok(Self {
            dims,
            extractor,
            classifier,
            seed,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn extractor(&self) -> &[Dense] {
        &self.extractor
    }

    pub fn classifier(&self) -> &Dense {
        &self.classifier
    }

    pub fn classifier_mut(&mut self) -> &mut Dense {
        &mut self.classifier
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.extractor.iter().map(|l| l.activation).collect()
    }

    /// Parameters in declaration order: each extractor layer's weight then bias,
    /// then the classifier weight and bias.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(2 * self.extractor.len() + 2);
        for l in self.extractor.iter().chain(std::iter::once(&self.classifier)) {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(2 * self.extractor.len() + 2);
        for l in self.extractor.iter_mut().chain(std::iter::once(&mut self.classifier)) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn num_parameter_tensors(&self) -> usize {
        2 * self.extractor.len() + 2
    }

    /// Indices (into [`MlpModel::parameters`]) of the classifier weight and bias.
    pub fn classifier_param_indices(&self) -> [usize; 2] {
        let n = self.num_parameter_tensors();
        [n - 2, n - 1]
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.dims.input_dim {
            return Err(Error::Shape(format!(
                "model expects {} input columns, got {}",
                self.dims.input_dim,
                x.cols()
            )));
        }
        Ok(())
    }

    /// Bottleneck embeddings, n×d.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        h.clear_grad();
        for layer in &self.extractor {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.classifier.forward(&self.features(x)?)
    }

    pub fn logits_from_features(&self, features: &Tensor) -> Result<Tensor> {
        self.classifier.forward(features)
    }

    /// Class probabilities, n×C.
    pub fn probs(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax_rows(&self.logits(x)?))
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            vars: self.parameters().into_iter().map(|p| tape.leaf(p.clone())).collect(),
        }
    }

    pub fn features_on(&self, tape: &mut Tape, params: &ParamVars, x: Var) -> Result<Var> {
        self.check_input(tape.value(x))?;
        let mut h = x;
        for (i, layer) in self.extractor.iter().enumerate() {
            let z = tape.matmul(h, params.vars[2 * i])?;
            let z = tape.add_row(z, params.vars[2 * i + 1])?;
            h = layer.activation.on_tape(tape, z);
        }
        Ok(h)
    }

    pub fn logits_on(&self, tape: &mut Tape, params: &ParamVars, features: Var) -> Result<Var> {
        let [w, b] = self.classifier_param_indices();
        let z = tape.matmul(features, params.vars[w])?;
        tape.add_row(z, params.vars[b])
    }

    /// Gradients of every parameter after `tape.backward`.
    pub fn collect_grads(&self, tape: &Tape, params: &ParamVars) -> Result<Vec<Tensor>> {
        params
            .vars
            .iter()
            .map(|&v| {
                tape.grad(v)
                    .ok_or_else(|| Error::State("parameter gradient missing; call backward first".into()))
            })
            .collect()
    }
}

fn check_layer(layer: &Dense, fan_in: usize, index: usize) -> Result<()> {
    if layer.weight.rows() != fan_in {
        return Err(Error::Shape(format!(
            "layer {index} expects {} inputs but the previous layer yields {fan_in}",
            layer.weight.rows()
        )));
    }
    if layer.bias.shape() != (1, layer.weight.cols()) {
        return Err(Error::Shape(format!(
            "layer {index} bias must be 1x{}",
            layer.weight.cols()
        )));
    }
    Ok(())
}
