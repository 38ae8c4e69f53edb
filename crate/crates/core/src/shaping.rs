//! Channel-conditioned neural mapper and demapper.
//!
//! The transmitter network maps the (scaled) channel condition to the 2^m
//! constellation points, interleaved as (Re, Im); point `i` carries label
//! `i`, so the one-hot index of a bit pattern selects its point directly.
//! The receiver network maps (Re x, Im x, condition) to m LLRs with the
//! convention `L = ln(P(b=0)/P(b=1))`.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::ChannelParams;
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::nnkit::{DenseNet, NetVars, Tape, Tensor, Var};

/// Affine map of (sigma_n, sigma_phi) onto [0, 1]^2 over the training ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionScaling {
    pub sigma_n_min: f64,
    pub sigma_n_max: f64,
    pub sigma_phi_min: f64,
    pub sigma_phi_max: f64,
}

impl ConditionScaling {
    pub fn apply(&self, p: ChannelParams) -> [f64; 2] {
        [
            unit(p.sigma_n, self.sigma_n_min, self.sigma_n_max),
            unit(p.sigma_phi, self.sigma_phi_min, self.sigma_phi_max),
        ]
    }

    /// Parameters in the middle of both ranges.
    pub fn center(&self) -> ChannelParams {
        ChannelParams {
            sigma_n: 0.5 * (self.sigma_n_min + self.sigma_n_max),
            sigma_phi: 0.5 * (self.sigma_phi_min + self.sigma_phi_max),
        }
    }
}

fn unit(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.5
    }
}

/// How the channel condition reaches the networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Both networks see the actual condition.
    Parameterized,
    /// Both networks see the center of the training range.
    Robust,
    /// Fixed Gray-mapped square QAM transmitter; the demapper sees the
    /// actual condition and is the only trained part.
    QamDemapperOnly,
}

impl Conditioning {
    pub fn name(self) -> &'static str {
        match self {
            Conditioning::Parameterized => "parameterized",
            Conditioning::Robust => "robust",
            Conditioning::QamDemapperOnly => "qam_demapper_only",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "parameterized" => Ok(Self::Parameterized),
            "robust" => Ok(Self::Robust),
            "qam_demapper_only" | "qam" => Ok(Self::QamDemapperOnly),
            _ => Err(Error::Config(format!("unknown conditioning mode `{s}`"))),
        }
    }
}

pub fn hidden_width(bits: usize) -> usize {
    1 << (bits + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TxNet {
    bits: usize,
    net: DenseNet,
}

impl TxNet {
    pub fn init<R: Rng + ?Sized>(bits: usize, rng: &mut R) -> Result<Self> {
        let h = hidden_width(bits);
        Self::from_net(bits, DenseNet::init(&[2, h, h, 2 << bits], rng)?)
    }

    pub fn from_net(bits: usize, net: DenseNet) -> Result<Self> {
        if net.in_dim() != 2 || net.out_dim() != 2 << bits {
            return Err(Error::Shape(format!(
                "transmitter network for m={bits} must map 2 -> {}, got {} -> {}",
                2 << bits,
                net.in_dim(),
                net.out_dim()
            )));
        }
        Ok(Self { bits, net })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    /// Unit-power constellation for the given network input.
    pub fn constellation(&self, cond: [f64; 2]) -> Result<Constellation> {
        let out = self.net.forward(&cond)?;
        let points = out.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        Constellation::with_identity_labels(self.bits, points)?.normalize()
    }

    /// Normalized points as an `M x 2` tape node.
    pub fn points_on(&self, tape: &mut Tape, vars: &NetVars, cond: [f64; 2]) -> Result<Var> {
        let input = tape.constant(Tensor::row(cond.to_vec()));
        let raw = self.net.forward_on(tape, vars, input)?;
        tape.normalize_power(raw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RxNet {
    bits: usize,
    net: DenseNet,
}

impl RxNet {
    pub fn init<R: Rng + ?Sized>(bits: usize, rng: &mut R) -> Result<Self> {
        let h = hidden_width(bits);
        Self::from_net(bits, DenseNet::init(&[4, h, h, bits], rng)?)
    }

    pub fn from_net(bits: usize, net: DenseNet) -> Result<Self> {
        if net.in_dim() != 4 || net.out_dim() != bits {
            return Err(Error::Shape(format!(
                "receiver network for m={bits} must map 4 -> {bits}, got {} -> {}",
                net.in_dim(),
                net.out_dim()
            )));
        }
        Ok(Self { bits, net })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    /// LLRs, `B x m`.
    pub fn llrs(&self, x_hat: &[Complex64], cond: [f64; 2]) -> Result<Tensor> {
        self.net.forward_batch(&features(x_hat, cond))
    }

    pub fn llrs_on(&self, tape: &mut Tape, vars: &NetVars, x_hat: Var, cond: [f64; 2]) -> Result<Var> {
        let rows = tape.value(x_hat).rows();
        let c = tape.constant(condition_columns(rows, cond));
        let input = tape.concat_cols(x_hat, c)?;
        self.net.forward_on(tape, vars, input)
    }
}

fn condition_columns(rows: usize, cond: [f64; 2]) -> Tensor {
    Tensor::new(rows, 2, cond.repeat(rows)).expect("two columns")
}

fn features(x_hat: &[Complex64], cond: [f64; 2]) -> Tensor {
    let data = x_hat.iter().flat_map(|x| [x.re, x.im, cond[0], cond[1]]).collect();
    Tensor::new(x_hat.len(), 4, data).expect("four columns")
}

/// Mapper, demapper and the conditioning convention they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapingModel {
    pub tx: TxNet,
    pub rx: RxNet,
    pub scaling: ConditionScaling,
    pub conditioning: Conditioning,
}

impl ShapingModel {
    pub fn bits(&self) -> usize {
        self.rx.bits()
    }

    pub fn tx_condition(&self, p: ChannelParams) -> [f64; 2] {
        match self.conditioning {
            Conditioning::Robust => [0.5, 0.5],
            _ => self.scaling.apply(p),
        }
    }

    pub fn rx_condition(&self, p: ChannelParams) -> [f64; 2] {
        self.tx_condition(p)
    }

    pub fn constellation(&self, p: ChannelParams) -> Result<Constellation> {
        match self.conditioning {
            Conditioning::QamDemapperOnly => Constellation::square_qam(self.bits()),
            _ => self.tx.constellation(self.tx_condition(p)),
        }
    }

    pub fn demap(&self, x_hat: &[Complex64], p: ChannelParams) -> Result<Tensor> {
        self.rx.llrs(x_hat, self.rx_condition(p))
    }
}

/// Integer value of an m-bit row, bit 0 most significant.
pub fn bits_to_index(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

pub fn index_to_bits(index: usize, m: usize, out: &mut [u8]) {
    for (i, o) in out.iter_mut().enumerate().take(m) {
        *o = ((index >> (m - 1 - i)) & 1) as u8;
    }
}

/// One-hot rows (`B x 2^m`) for a row-major `B x m` bit matrix.
pub fn embed_one_hot(bits: &[u8], m: usize) -> Result<Tensor> {
    if m == 0 || bits.len() % m != 0 {
        return Err(Error::Shape(format!("{} bits do not form rows of {m}", bits.len())));
    }
    if let Some(b) = bits.iter().find(|&&b| b > 1) {
        return Err(Error::Validation(format!("non-binary entry {b}")));
    }
    let rows = bits.len() / m;
    let order = 1usize << m;
    let mut data = vec![0.0; rows * order];
    for (r, row) in bits.chunks_exact(m).enumerate() {
        data[r * order + bits_to_index(row)] = 1.0;
    }
    Tensor::new(rows, order, data)
}

/// `x_k = sum_i one_hot[k][i] * point(label i)`.
pub fn map_symbols(one_hot: &Tensor, c: &Constellation) -> Result<Vec<Complex64>> {
    if one_hot.cols() != c.order() {
        return Err(Error::Shape(format!(
            "one-hot width {} for a constellation of {} points",
            one_hot.cols(),
            c.order()
        )));
    }
    Ok((0..one_hot.rows())
        .map(|r| {
            one_hot
                .row_slice(r)
                .iter()
                .enumerate()
                .map(|(i, &w)| c.point_for_label(i as u32) * w)
                .sum()
        })
        .collect())
}

/// Exact bit LLRs for a circular Gaussian channel with total noise variance
/// `sigma_n^2`, `B x m`.
pub fn exact_gaussian_llrs(x_hat: &[Complex64], c: &Constellation, sigma_n: f64) -> Result<Tensor> {
    if !(sigma_n > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "exact LLRs need a positive noise level, got {sigma_n}"
        )));
    }
    let m = c.bits_per_symbol();
    let inv_var = (sigma_n * sigma_n).recip();
    let mut out = Vec::with_capacity(x_hat.len() * m);
    let mut metric = vec![0.0; c.order()];
    for y in x_hat {
        for (d, p) in metric.iter_mut().zip(c.points()) {
            *d = -(y - p).norm_sqr() * inv_var;
        }
        for bit in 0..m {
            let (mut m0, mut m1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (i, &d) in metric.iter().enumerate() {
                if c.label_bit(i, bit) == 0 {
                    m0 = m0.max(d);
                } else {
                    m1 = m1.max(d);
                }
            }
            let (mut s0, mut s1) = (0.0, 0.0);
            for (i, &d) in metric.iter().enumerate() {
                if c.label_bit(i, bit) == 0 {
                    s0 += (d - m0).exp();
                } else {
                    s1 += (d - m1).exp();
                }
            }
            out.push((m0 + s0.ln()) - (m1 + s1.ln()));
        }
    }
    Tensor::new(x_hat.len(), m, out)
}
