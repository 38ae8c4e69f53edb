//! Blind phase search, hard and differentiable.
//!
//! Every received symbol is rotated by each test angle, the squared distance
//! to the nearest constellation point is accumulated over a sliding window,
//! and either the best angle is picked (hard) or a temperature-scaled
//! softmax over the negated window costs mixes the rotated candidates (soft).
//!
//! The window for symbol `k` covers `k - floor(N/2) ..= k + ceil(N/2) - 1`,
//! truncated at the frame edges. The first and last `floor(N/2)` symbols of a
//! frame are edge symbols and are excluded from losses and BMI estimates.

use std::cell::Cell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::constellation::Constellation;
use crate::error::{Error, Result};

/// Rows per parallel work item; reductions over rows are summed chunk by
/// chunk in index order so results do not depend on the thread count.
const ROW_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BpsMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpsConfig {
    pub num_test_angles: usize,
    pub window_size: usize,
    #[serde(default = "default_angle_min")]
    pub angle_min: f64,
    #[serde(default = "default_angle_max")]
    pub angle_max: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_mode")]
    pub mode: BpsMode,
}

fn default_angle_min() -> f64 {
    -PI
}
fn default_angle_max() -> f64 {
    PI
}
fn default_temperature() -> f64 {
    1.0
}
fn default_mode() -> BpsMode {
    BpsMode::Hard
}

impl Default for BpsConfig {
    /// 60 test angles over the full circle, window of 128 symbols.
    fn default() -> Self {
        Self {
            num_test_angles: 60,
            window_size: 128,
            angle_min: default_angle_min(),
            angle_max: default_angle_max(),
            temperature: 1.0,
            mode: BpsMode::Hard,
        }
    }
}

impl BpsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_test_angles < 2 {
            return Err(Error::InvalidArgument("BPS needs at least 2 test angles".into()));
        }
        if self.window_size < 1 {
            return Err(Error::InvalidArgument("BPS window size must be at least 1".into()));
        }
        if !(self.angle_min < self.angle_max) || !self.angle_min.is_finite() || !self.angle_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "BPS angle span [{}, {}) is empty",
                self.angle_min, self.angle_max
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "BPS temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn test_angles(&self) -> Vec<f64> {
        let step = (self.angle_max - self.angle_min) / self.num_test_angles as f64;
        (0..self.num_test_angles)
            .map(|i| self.angle_min + i as f64 * step)
            .collect()
    }

    /// Grid spanning one period of a `fold`-fold rotationally symmetric
    /// constellation, centered on zero.
    pub fn with_symmetric_span(mut self, fold: usize) -> Self {
        let half = PI / fold as f64;
        self.angle_min = -half;
        self.angle_max = half;
        self
    }

    pub fn hard(mut self) -> Self {
        self.mode = BpsMode::Hard;
        self
    }

    pub fn soft(mut self, temperature: f64) -> Self {
        self.mode = BpsMode::Soft;
        self.temperature = temperature;
        self
    }

    pub fn edge_len(&self) -> usize {
        self.window_size / 2
    }

    /// `true` marks an edge symbol.
    pub fn edge_mask(&self, len: usize) -> Vec<bool> {
        edge_mask(len, self.window_size)
    }
}

pub fn edge_mask(len: usize, window_size: usize) -> Vec<bool> {
    let e = window_size / 2;
    (0..len).map(|k| k < e || k + e >= len).collect()
}

fn rotors(angles: &[f64]) -> Vec<Complex64> {
    angles.iter().map(|&a| Complex64::from_polar(1.0, a)).collect()
}

#[inline]
fn nearest(r: Complex64, points: &[Complex64]) -> (f64, u32) {
    let mut best = f64::INFINITY;
    let mut idx = 0u32;
    for (i, c) in points.iter().enumerate() {
        let d = (r - c).norm_sqr();
        if d < best {
            best = d;
            idx = i as u32;
        }
    }
    (best, idx)
}

/// `D[k][t] = min_c |z_k e^{j angle_t} - c|^2`, row-major `B x T`, together
/// with the index of the minimizing point.
fn distance_with_argmin(z: &[Complex64], points: &[Complex64], rot: &[Complex64]) -> (Vec<f64>, Vec<u32>) {
    let t = rot.len();
    let mut d = vec![0.0; z.len() * t];
    let mut idx = vec![0u32; z.len() * t];
    d.par_chunks_mut(ROW_CHUNK * t)
        .zip(idx.par_chunks_mut(ROW_CHUNK * t))
        .enumerate()
        .for_each(|(chunk, (d, idx))| {
            let base = chunk * ROW_CHUNK;
            for (row, (d, idx)) in d.chunks_mut(t).zip(idx.chunks_mut(t)).enumerate() {
                let zk = z[base + row];
                for ((d, idx), r) in d.iter_mut().zip(idx.iter_mut()).zip(rot) {
                    let (best, i) = nearest(zk * r, points);
                    *d = best;
                    *idx = i;
                }
            }
        });
    (d, idx)
}

/// Per-angle minimum squared distance, row-major `B x T`.
pub fn distance_metric(z: &[Complex64], points: &[Complex64], angles: &[f64]) -> Vec<f64> {
    distance_with_argmin(z, points, &rotors(angles)).0
}

/// Sliding-window sum over rows of a row-major `rows x cols` matrix,
/// window `k - floor(N/2) ..= k + ceil(N/2) - 1`, truncated at the edges.
pub fn windowed_cost(d: &[f64], rows: usize, cols: usize, window_size: usize) -> Vec<f64> {
    let back = window_size / 2;
    let ahead = window_size - back; // ceil(N/2)
    range_sums(d, rows, cols, |k| (k.saturating_sub(back), (k + ahead).min(rows)))
}

/// Adjoint of [`windowed_cost`]: each row collects the rows whose window
/// covers it.
fn windowed_cost_adjoint(g: &[f64], rows: usize, cols: usize, window_size: usize) -> Vec<f64> {
    let back = window_size / 2;
    let ahead = window_size - back;
    range_sums(g, rows, cols, |i| (i.saturating_sub(ahead - 1), (i + back + 1).min(rows)))
}

fn range_sums(d: &[f64], rows: usize, cols: usize, range: impl Fn(usize) -> (usize, usize)) -> Vec<f64> {
    debug_assert_eq!(d.len(), rows * cols);
    let mut prefix = vec![0.0; (rows + 1) * cols];
    for k in 0..rows {
        for t in 0..cols {
            prefix[(k + 1) * cols + t] = prefix[k * cols + t] + d[k * cols + t];
        }
    }
    let mut out = vec![0.0; rows * cols];
    for k in 0..rows {
        let (lo, hi) = range(k);
        for t in 0..cols {
            out[k * cols + t] = prefix[hi * cols + t] - prefix[lo * cols + t];
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardBpsOutput {
    pub x_hat: Vec<Complex64>,
    pub theta_hat: Vec<f64>,
    pub angle_index: Vec<usize>,
}

/// Hard decision BPS: the test angle with the lowest window cost wins, ties
/// going to the lowest index. No unwrapping between decisions.
pub fn bps_hard(z: &[Complex64], constellation: &Constellation, config: &BpsConfig) -> Result<HardBpsOutput> {
    config.validate()?;
    if config.mode != BpsMode::Hard {
        return Err(Error::InvalidArgument("bps_hard called with a soft configuration".into()));
    }
    let angles = config.test_angles();
    let rot = rotors(&angles);
    let t = angles.len();
    let (d, _) = distance_with_argmin(z, constellation.points(), &rot);
    let w = windowed_cost(&d, z.len(), t, config.window_size);
    let angle_index: Vec<usize> = w
        .chunks(t)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v < row[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    let x_hat = z.iter().zip(&angle_index).map(|(zk, &i)| zk * rot[i]).collect();
    let theta_hat = angle_index.iter().map(|&i| angles[i]).collect();
    Ok(HardBpsOutput {
        x_hat,
        theta_hat,
        angle_index,
    })
}

/// Whole periods to add to each decision so consecutive estimates never
/// jump by more than half a period.
pub fn unwrap_steps(theta_hat: &[f64], period: f64) -> Vec<i64> {
    let mut out = Vec::with_capacity(theta_hat.len());
    let mut prev: Option<f64> = None;
    for &t in theta_hat {
        let n = match prev {
            None => 0,
            Some(p) => (0.5 + (p - t) / period).floor() as i64,
        };
        prev = Some(t + n as f64 * period);
        out.push(n);
    }
    out
}

/// Decision `theta_hat` made continuous modulo `period`.
pub fn unwrap_phase(theta_hat: &[f64], period: f64) -> Vec<f64> {
    theta_hat
        .iter()
        .zip(unwrap_steps(theta_hat, period))
        .map(|(t, n)| t + n as f64 * period)
        .collect()
}

/// Rotation `k * pi/2` of a frame that best aligns `x_hat` with the known
/// transmitted symbols over non-edge positions. Resolves the residual
/// quadrant ambiguity of square QAM with transmitter knowledge.
pub fn genie_quadrant(x_hat: &[Complex64], x: &[Complex64], edge: &[bool]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for k in 0..4 {
        let r = Complex64::i().powu(k as u32);
        let cost: f64 = x_hat
            .iter()
            .zip(x)
            .zip(edge)
            .filter(|(_, e)| !**e)
            .map(|((a, b), _)| (a * r - b).norm_sqr())
            .sum();
        if cost < best.0 {
            best = (cost, k);
        }
    }
    best.1
}

thread_local! {
    static SOFT_CALLS: Cell<u64> = const { Cell::new(0) };
    static SOFT_GRAD_FAULT: Cell<bool> = const { Cell::new(false) };
}

/// Test hook: while set, the soft BPS reverse pass on this thread returns
/// gradients scaled by 1.05.
#[doc(hidden)]
pub fn set_soft_grad_fault(on: bool) {
    SOFT_GRAD_FAULT.with(|c| c.set(on));
}

/// Number of soft BPS evaluations performed on the current thread.
pub fn soft_invocations() -> u64 {
    SOFT_CALLS.with(|c| c.get())
}

/// Forward state of the soft BPS kept for the reverse pass.
#[derive(Debug, Clone)]
pub(crate) struct SoftBpsCache {
    rot: Vec<Complex64>,
    nearest: Vec<u32>,
    weights: Vec<f64>,
    mix: Vec<Complex64>,
    window_size: usize,
    temperature: f64,
}

pub(crate) fn soft_forward(
    z: &[Complex64],
    points: &[Complex64],
    config: &BpsConfig,
) -> (Vec<Complex64>, SoftBpsCache) {
    SOFT_CALLS.with(|c| c.set(c.get() + 1));
    let rot = rotors(&config.test_angles());
    let t = rot.len();
    let (d, nearest) = distance_with_argmin(z, points, &rot);
    let w = windowed_cost(&d, z.len(), t, config.window_size);
    let inv_temp = config.temperature.recip();
    let mut weights = vec![0.0; w.len()];
    let mut mix = vec![Complex64::new(0.0, 0.0); z.len()];
    weights
        .par_chunks_mut(ROW_CHUNK * t)
        .zip(mix.par_chunks_mut(ROW_CHUNK))
        .enumerate()
        .for_each(|(chunk, (weights, mix))| {
            let base = chunk * ROW_CHUNK;
            for (row, (wr, s)) in weights.chunks_mut(t).zip(mix.iter_mut()).enumerate() {
                let cost = &w[(base + row) * t..(base + row + 1) * t];
                let min = cost.iter().copied().fold(f64::INFINITY, f64::min);
                let mut total = 0.0;
                for (o, &c) in wr.iter_mut().zip(cost) {
                    *o = (-(c - min) * inv_temp).exp();
                    total += *o;
                }
                let mut acc = Complex64::new(0.0, 0.0);
                for (o, r) in wr.iter_mut().zip(&rot) {
                    *o /= total;
                    acc += r * *o;
                }
                *s = acc;
            }
        });
    let x_hat = z.iter().zip(&mix).map(|(zk, s)| zk * s).collect();
    (
        x_hat,
        SoftBpsCache {
            rot,
            nearest,
            weights,
            mix,
            window_size: config.window_size,
            temperature: config.temperature,
        },
    )
}

/// Reverse pass of [`soft_forward`]. Gradients are packed as `dRe + j dIm`.
/// Returns the gradients with respect to `z` and to the constellation points.
pub(crate) fn soft_backward(
    z: &[Complex64],
    points: &[Complex64],
    cache: &SoftBpsCache,
    grad_out: &[Complex64],
) -> (Vec<Complex64>, Vec<Complex64>) {
    let b = z.len();
    let t = cache.rot.len();
    // x_hat = z * s  =>  dz = g * conj(s); dL/dw_t = Re(conj(g) * z * rot_t)
    let mut dz: Vec<Complex64> = grad_out.iter().zip(&cache.mix).map(|(g, s)| g * s.conj()).collect();
    let mut d_cost = vec![0.0; b * t];
    d_cost
        .par_chunks_mut(ROW_CHUNK * t)
        .enumerate()
        .for_each(|(chunk, out)| {
            let base = chunk * ROW_CHUNK;
            for (row, out) in out.chunks_mut(t).enumerate() {
                let k = base + row;
                let g = grad_out[k];
                let w = &cache.weights[k * t..(k + 1) * t];
                let mut dot = 0.0;
                for ((o, r), &wt) in out.iter_mut().zip(&cache.rot).zip(w) {
                    let cand = z[k] * r;
                    *o = g.re * cand.re + g.im * cand.im;
                    dot += wt * *o;
                }
                // softmax over -cost/temperature
                for (o, &wt) in out.iter_mut().zip(w) {
                    *o = -wt * (*o - dot) / cache.temperature;
                }
            }
        });
    let d_dist = windowed_cost_adjoint(&d_cost, b, t, cache.window_size);

    let m = points.len();
    let partials: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..b.div_ceil(ROW_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * ROW_CHUNK;
            let hi = (lo + ROW_CHUNK).min(b);
            let mut dp = vec![Complex64::new(0.0, 0.0); m];
            let mut dzc = Vec::with_capacity(hi - lo);
            for k in lo..hi {
                let mut acc = Complex64::new(0.0, 0.0);
                for (ti, r) in cache.rot.iter().enumerate() {
                    let g = d_dist[k * t + ti];
                    if g == 0.0 {
                        continue;
                    }
                    let c = cache.nearest[k * t + ti] as usize;
                    let e = z[k] * r - points[c];
                    dp[c] -= e * (2.0 * g);
                    acc += e * r.conj() * (2.0 * g);
                }
                dzc.push(acc);
            }
            (dzc, dp)
        })
        .collect();
    let mut dpoints = vec![Complex64::new(0.0, 0.0); m];
    for (chunk, (dzc, dp)) in partials.into_iter().enumerate() {
        for (i, v) in dzc.into_iter().enumerate() {
            dz[chunk * ROW_CHUNK + i] += v;
        }
        for (acc, v) in dpoints.iter_mut().zip(dp) {
            *acc += v;
        }
    }
    if SOFT_GRAD_FAULT.with(|c| c.get()) {
        dz.iter_mut().chain(dpoints.iter_mut()).for_each(|v| *v *= 1.05);
    }
    (dz, dpoints)
}

/// Differentiable BPS: softmax-weighted mix of the rotated candidates.
pub fn bps_soft(z: &[Complex64], constellation: &Constellation, config: &BpsConfig) -> Result<Vec<Complex64>> {
    config.validate()?;
    if config.mode != BpsMode::Soft {
        return Err(Error::InvalidArgument("bps_soft called with a hard configuration".into()));
    }
    Ok(soft_forward(z, constellation.points(), config).0)
}

/// Softmax weights of the soft BPS, row-major `B x T`.
pub fn soft_weights(z: &[Complex64], constellation: &Constellation, config: &BpsConfig) -> Result<Vec<f64>> {
    config.validate()?;
    Ok(soft_forward(z, constellation.points(), config).1.weights)
}
