use rand::Rng;

use super::tape::{affine_forward, Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out x in`
    pub weight: Tensor,
    /// `1 x out`
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Fully connected network: ReLU on every hidden layer, linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

/// Tape handles of a network's parameters, `(weight, bias)` per layer.
#[derive(Debug, Clone)]
pub struct NetVars(Vec<(Var, Var)>);

impl DenseNet {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.out_dim()) {
                return Err(Error::Shape(format!("layer {i}: bias {:?} for {} outputs", l.bias.shape(), l.out_dim())));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {} outputs {} values but layer {} takes {}",
                    i,
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Weights uniform in +-sqrt(6/(fan_in+fan_out)), biases uniform in
    /// +-1/sqrt(fan_in).
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Shape("network needs input and output widths".into()));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let wlim = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let blim = (fan_in as f64).sqrt().recip();
                let w = (0..fan_in * fan_out).map(|_| rng.random_range(-wlim..wlim)).collect();
                let b = (0..fan_out).map(|_| rng.random_range(-blim..blim)).collect();
                DenseLayer {
                    weight: Tensor::new(fan_out, fan_in, w).expect("sized above"),
                    bias: Tensor::row(b),
                    activation: if i == last { Activation::Linear } else { Activation::Relu },
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Tensor::row(input.to_vec()))?.into_data())
    }

    /// Row-wise forward pass of a `B x in` batch.
    pub fn forward_batch(&self, input: &Tensor) -> Result<Tensor> {
        if input.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "network takes {} inputs, got {}",
                self.in_dim(),
                input.cols()
            )));
        }
        let mut h = input.clone();
        for l in &self.layers {
            h = affine_forward(&h, &l.weight, &l.bias);
            if l.activation == Activation::Relu {
                h.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(h)
    }

    /// Registers every weight and bias on the tape as a trainable leaf.
    pub fn attach(&self, tape: &mut Tape) -> NetVars {
        NetVars(
            self.layers
                .iter()
                .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
                .collect(),
        )
    }

    pub fn forward_on(&self, tape: &mut Tape, vars: &NetVars, input: Var) -> Result<Var> {
        if tape.value(input).cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "network takes {} inputs, got {}",
                self.in_dim(),
                tape.value(input).cols()
            )));
        }
        let mut h = input;
        for (l, &(w, b)) in self.layers.iter().zip(&vars.0) {
            h = tape.affine(h, w, b)?;
            if l.activation == Activation::Relu {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Parameter gradients in [`Self::params_mut`] order.
    pub fn gradients(&self, grads: &Gradients, vars: &NetVars) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .zip(&vars.0)
            .flat_map(|(l, &(w, b))| {
                [
                    grads.get_or_zeros(w, l.weight.rows(), l.weight.cols()).into_data(),
                    grads.get_or_zeros(b, 1, l.bias.cols()).into_data(),
                ]
            })
            .collect()
    }

    /// Weight and bias of every layer, in order.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.data_mut()])
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|t| t.len()).collect()
    }
}
