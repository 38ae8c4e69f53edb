//! Reverse-mode differentiation over a tape of coarse tensor operations.
//!
//! Nodes are appended in evaluation order; [`Tape::backward`] walks them in
//! reverse once and accumulates vector-Jacobian products. Complex arrays are
//! `n x 2` tensors of (Re, Im) rows and their gradients are the real partials
//! with respect to each coordinate.

use num_complex::Complex64;

use super::tensor::Tensor;
use crate::bps::{self, BpsConfig, SoftBpsCache};
use crate::error::{Error, Result};

/// Largest LLR magnitude (natural log) that reaches the loss.
pub const LLR_CLAMP: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Sum(usize),
    Affine { x: usize, w: usize, b: usize },
    Relu(usize),
    NormalizePower { x: usize, scale: f64 },
    Gather { src: usize, index: Vec<usize> },
    Rotate { x: usize, rot: Vec<Complex64> },
    SoftBps { z: usize, points: usize, cache: Box<SoftBpsCache> },
    ConcatCols(usize, usize),
    Bce { llr: usize, bits: Vec<u8>, edge: Vec<bool>, count: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros of the given shape when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(rows, cols))
    }
}

fn as_complex(t: &Tensor) -> Vec<Complex64> {
    t.data().chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

fn from_complex(v: &[Complex64]) -> Tensor {
    let data = v.iter().flat_map(|c| [c.re, c.im]).collect();
    Tensor::new(v.len(), 2, data).expect("two columns per complex value")
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy in nats of one bit against an LLR `L = ln(P(0)/P(1))`.
pub fn bce_cell(llr: f64, bit: u8) -> f64 {
    let l = llr.clamp(-LLR_CLAMP, LLR_CLAMP);
    if bit == 0 {
        softplus(-l)
    } else {
        softplus(l)
    }
}

/// `out = x W^T + b` for `x: B x in`, `W: out x in`, `b: 1 x out`.
pub(crate) fn affine_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (rows, inp) = x.shape();
    let out = w.rows();
    let mut data = vec![0.0; rows * out];
    for r in 0..rows {
        let xr = x.row_slice(r);
        let dst = &mut data[r * out..(r + 1) * out];
        for (o, d) in dst.iter_mut().enumerate() {
            let wr = &w.data()[o * inp..(o + 1) * inp];
            let mut acc = b.data()[o];
            for (a, c) in xr.iter().zip(wr) {
                acc += a * c;
            }
            *d = acc;
        }
    }
    Tensor::new(rows, out, data).expect("shape computed above")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_open(&self) -> Result<()> {
        if self.consumed {
            Err(Error::GraphConsumed)
        } else {
            Ok(())
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn complex_value(&self, v: Var) -> Vec<Complex64> {
        as_complex(self.value(v))
    }

    pub fn constant_complex(&mut self, v: &[Complex64]) -> Var {
        self.constant(from_complex(v))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_open()?;
        self.same_shape(a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(va.rows(), va.cols(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a.0, b.0), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_open()?;
        self.same_shape(a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.rows(), va.cols(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a.0, b.0), ng))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check_open()?;
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a.0), ng))
    }

    /// `x W^T + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.check_open()?;
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        if vx.cols() != vw.cols() || vb.shape() != (1, vw.rows()) {
            return Err(Error::Shape(format!(
                "affine: input {:?}, weight {:?}, bias {:?}",
                vx.shape(),
                vw.shape(),
                vb.shape()
            )));
        }
        let value = affine_forward(vx, vw, vb);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(value, Op::Affine { x: x.0, w: w.0, b: b.0 }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check_open()?;
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(0.0)).collect();
        let value = Tensor::new(v.rows(), v.cols(), data)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Relu(x.0), ng))
    }

    /// Treats the data as (Re, Im) pairs and scales them to unit mean power.
    /// The output is an `n x 2` tensor.
    pub fn normalize_power(&mut self, x: Var) -> Result<Var> {
        self.check_open()?;
        let v = self.value(x);
        if v.len() % 2 != 0 || v.is_empty() {
            return Err(Error::Shape("normalize_power needs (Re, Im) pairs".into()));
        }
        let n = v.len() / 2;
        let power = v.data().iter().map(|a| a * a).sum::<f64>() / n as f64;
        if power == 0.0 {
            return Err(Error::DegenerateConstellation);
        }
        let scale = power.sqrt();
        let data = v.data().iter().map(|a| a / scale).collect();
        let value = Tensor::new(n, 2, data)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::NormalizePower { x: x.0, scale }, ng))
    }

    /// Row gather: `out[k] = src[index[k]]`.
    pub fn gather(&mut self, src: Var, index: Vec<usize>) -> Result<Var> {
        self.check_open()?;
        let v = self.value(src);
        if let Some(bad) = index.iter().find(|&&i| i >= v.rows()) {
            return Err(Error::Shape(format!("gather index {bad} out of {} rows", v.rows())));
        }
        let cols = v.cols();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in &index {
            data.extend_from_slice(v.row_slice(i));
        }
        let value = Tensor::new(index.len(), cols, data)?;
        let ng = self.needs(src);
        Ok(self.push(value, Op::Gather { src: src.0, index }, ng))
    }

    /// Multiplies each complex row by `exp(j * angle[k])`.
    pub fn rotate(&mut self, x: Var, angles: &[f64]) -> Result<Var> {
        self.check_open()?;
        let v = self.value(x);
        if v.cols() != 2 || v.rows() != angles.len() {
            return Err(Error::Shape(format!(
                "rotate: {:?} against {} angles",
                v.shape(),
                angles.len()
            )));
        }
        let rot: Vec<Complex64> = angles.iter().map(|&a| Complex64::from_polar(1.0, a)).collect();
        let out: Vec<Complex64> = as_complex(v).iter().zip(&rot).map(|(a, r)| a * r).collect();
        let ng = self.needs(x);
        Ok(self.push(from_complex(&out), Op::Rotate { x: x.0, rot }, ng))
    }

    /// Differentiable blind phase search of `z` (n x 2) against the
    /// constellation `points` (M x 2).
    pub fn soft_bps(&mut self, z: Var, points: Var, config: &BpsConfig) -> Result<Var> {
        self.check_open()?;
        config.validate()?;
        let (vz, vp) = (self.value(z), self.value(points));
        if vz.cols() != 2 || vp.cols() != 2 {
            return Err(Error::Shape("soft_bps expects n x 2 complex tensors".into()));
        }
        let (out, cache) = bps::soft_forward(&as_complex(vz), &as_complex(vp), config);
        let ng = self.needs(z) || self.needs(points);
        Ok(self.push(
            from_complex(&out),
            Op::SoftBps {
                z: z.0,
                points: points.0,
                cache: Box::new(cache),
            },
            ng,
        ))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_open()?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(Error::Shape(format!("concat: {:?} and {:?}", va.shape(), vb.shape())));
        }
        let cols = va.cols() + vb.cols();
        let mut data = Vec::with_capacity(va.rows() * cols);
        for r in 0..va.rows() {
            data.extend_from_slice(va.row_slice(r));
            data.extend_from_slice(vb.row_slice(r));
        }
        let value = Tensor::new(va.rows(), cols, data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatCols(a.0, b.0), ng))
    }

    /// Mean binary cross-entropy in nats over the (symbol, bit) cells of
    /// non-edge symbols. LLRs follow `L = ln(P(b=0)/P(b=1))` and are clamped
    /// to `+-LLR_CLAMP`.
    pub fn bce_with_logits(&mut self, llr: Var, bits: &[u8], edge: &[bool]) -> Result<Var> {
        self.check_open()?;
        let v = self.value(llr);
        if bits.len() != v.len() || edge.len() != v.rows() {
            return Err(Error::Shape(format!(
                "bce: llr {:?}, {} bits, {} mask rows",
                v.shape(),
                bits.len(),
                edge.len()
            )));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Validation(format!("non-binary target {b}")));
        }
        let cols = v.cols();
        let used = edge.iter().filter(|e| !**e).count();
        let count = used * cols;
        if count == 0 {
            return Err(Error::DegenerateBatch);
        }
        let mut total = 0.0;
        for (r, _) in edge.iter().enumerate().filter(|(_, e)| !**e) {
            for c in 0..cols {
                total += bce_cell(v.get(r, c), bits[r * cols + c]);
            }
        }
        let ng = self.needs(llr);
        Ok(self.push(
            Tensor::scalar(total / count as f64),
            Op::Bce {
                llr: llr.0,
                bits: bits.to_vec(),
                edge: edge.to_vec(),
                count,
            },
            ng,
        ))
    }

    /// Reverse pass from the scalar `loss`. The tape can be differentiated
    /// once; later calls and later recording fail with
    /// [`Error::GraphConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.check_open()?;
        if self.value(loss).len() != 1 {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = Some(g);
                continue;
            }
            let mut contributions: Vec<(usize, Vec<f64>)> = Vec::new();
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    contributions.push((*a, g.clone()));
                    contributions.push((*b, g.clone()));
                }
                Op::Mul(a, b) => {
                    let va = self.nodes[*a].value.data();
                    let vb = self.nodes[*b].value.data();
                    contributions.push((*a, g.iter().zip(vb).map(|(g, y)| g * y).collect()));
                    contributions.push((*b, g.iter().zip(va).map(|(g, x)| g * x).collect()));
                }
                Op::Sum(a) => {
                    contributions.push((*a, vec![g[0]; self.nodes[*a].value.len()]));
                }
                Op::Affine { x, w, b } => {
                    let vx = &self.nodes[*x].value;
                    let vw = &self.nodes[*w].value;
                    let (rows, inp) = vx.shape();
                    let out = vw.rows();
                    if self.nodes[*x].needs_grad {
                        let mut dx = vec![0.0; rows * inp];
                        for r in 0..rows {
                            let gr = &g[r * out..(r + 1) * out];
                            let dr = &mut dx[r * inp..(r + 1) * inp];
                            for (o, &go) in gr.iter().enumerate() {
                                if go == 0.0 {
                                    continue;
                                }
                                for (d, wv) in dr.iter_mut().zip(&vw.data()[o * inp..(o + 1) * inp]) {
                                    *d += go * wv;
                                }
                            }
                        }
                        contributions.push((*x, dx));
                    }
                    if self.nodes[*w].needs_grad {
                        let mut dw = vec![0.0; out * inp];
                        for r in 0..rows {
                            let xr = vx.row_slice(r);
                            for o in 0..out {
                                let go = g[r * out + o];
                                if go == 0.0 {
                                    continue;
                                }
                                for (d, xv) in dw[o * inp..(o + 1) * inp].iter_mut().zip(xr) {
                                    *d += go * xv;
                                }
                            }
                        }
                        contributions.push((*w, dw));
                    }
                    if self.nodes[*b].needs_grad {
                        let mut db = vec![0.0; out];
                        for r in 0..rows {
                            for (d, gv) in db.iter_mut().zip(&g[r * out..(r + 1) * out]) {
                                *d += gv;
                            }
                        }
                        contributions.push((*b, db));
                    }
                }
                Op::Relu(x) => {
                    let vx = self.nodes[*x].value.data();
                    contributions.push((
                        *x,
                        g.iter().zip(vx).map(|(g, &a)| if a > 0.0 { *g } else { 0.0 }).collect(),
                    ));
                }
                Op::NormalizePower { x, scale } => {
                    let vx = self.nodes[*x].value.data();
                    let n = (vx.len() / 2) as f64;
                    let dot: f64 = g.iter().zip(vx).map(|(g, p)| g * p).sum();
                    let k = dot / (n * scale * scale * scale);
                    contributions.push((*x, g.iter().zip(vx).map(|(g, p)| g / scale - k * p).collect()));
                }
                Op::Gather { src, index } => {
                    let cols = self.nodes[*src].value.cols();
                    let mut d = vec![0.0; self.nodes[*src].value.len()];
                    for (r, &i) in index.iter().enumerate() {
                        for c in 0..cols {
                            d[i * cols + c] += g[r * cols + c];
                        }
                    }
                    contributions.push((*src, d));
                }
                Op::Rotate { x, rot } => {
                    let d: Vec<f64> = g
                        .chunks_exact(2)
                        .zip(rot)
                        .flat_map(|(gv, r)| {
                            let v = Complex64::new(gv[0], gv[1]) * r.conj();
                            [v.re, v.im]
                        })
                        .collect();
                    contributions.push((*x, d));
                }
                Op::SoftBps { z, points, cache } => {
                    let zc = as_complex(&self.nodes[*z].value);
                    let pc = as_complex(&self.nodes[*points].value);
                    let gc: Vec<Complex64> = g.chunks_exact(2).map(|v| Complex64::new(v[0], v[1])).collect();
                    let (dz, dp) = bps::soft_backward(&zc, &pc, cache, &gc);
                    if self.nodes[*z].needs_grad {
                        contributions.push((*z, from_complex(&dz).into_data()));
                    }
                    if self.nodes[*points].needs_grad {
                        contributions.push((*points, from_complex(&dp).into_data()));
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.nodes[*a].value.cols();
                    let cb = self.nodes[*b].value.cols();
                    let cols = ca + cb;
                    let rows = self.nodes[*a].value.rows();
                    let mut da = Vec::with_capacity(rows * ca);
                    let mut db = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        da.extend_from_slice(&g[r * cols..r * cols + ca]);
                        db.extend_from_slice(&g[r * cols + ca..(r + 1) * cols]);
                    }
                    contributions.push((*a, da));
                    contributions.push((*b, db));
                }
                Op::Bce {
                    llr,
                    bits,
                    edge,
                    count,
                } => {
                    let v = &self.nodes[*llr].value;
                    let cols = v.cols();
                    let scale = g[0] / *count as f64;
                    let mut d = vec![0.0; v.len()];
                    for (r, _) in edge.iter().enumerate().filter(|(_, e)| !**e) {
                        for c in 0..cols {
                            let l = v.get(r, c);
                            if l.abs() > LLR_CLAMP {
                                continue;
                            }
                            let dl = if bits[r * cols + c] == 0 {
                                -sigmoid(-l)
                            } else {
                                sigmoid(l)
                            };
                            d[r * cols + c] = scale * dl;
                        }
                    }
                    contributions.push((*llr, d));
                }
            }
            for (target, d) in contributions {
                if !self.nodes[target].needs_grad {
                    continue;
                }
                match &mut grads[target] {
                    Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(d),
                }
            }
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.needs_grad)
                    .map(|g| Tensor::new(n.value.rows(), n.value.cols(), g).expect("gradient shaped like value"))
            })
            .collect();
        Ok(Gradients { grads })
    }
}
