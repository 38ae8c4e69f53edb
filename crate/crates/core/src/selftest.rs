//! Oracle-equivalence and gradient checks runnable from the command line.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::Rng;

use crate::bps::{bps_hard, set_soft_grad_fault, BpsConfig};
use crate::channel::{snr_db_to_sigma_n, ChannelParams};
use crate::constellation::Constellation;
use crate::error::Result;
use crate::evalsuite::{run_point, PointSpec, System};
use crate::nnkit::{Tape, Tensor};
use crate::oracle::{central_difference, gray_qam_bmi, naive_bps_hard, relative_error};
use crate::rng::{normal, RngStreams, Stream};
use crate::trainer::{build_batch_graph, BatchInput, PhaseRecovery, TrainConfig, Trainer};

/// Fault to inject while self-testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    SoftBpsGrad,
}

impl Fault {
    pub fn from_name(s: &str) -> Option<Self> {
        (s == "soft-bps-grad").then_some(Fault::SoftBpsGrad)
    }
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

/// Random BPS instance: constellation of up to 16 points (random cloud or
/// square QAM on a quarter-turn grid), frame, grid and window.
pub fn random_bps_instance<R: Rng + ?Sized>(rng: &mut R) -> (Vec<Complex64>, Constellation, BpsConfig) {
    let m = rng.random_range(1..=4usize);
    let qam = m % 2 == 0 && rng.random_bool(0.5);
    let c = if qam {
        Constellation::square_qam(m).expect("even m")
    } else {
        let pts = (0..1usize << m).map(|_| Complex64::new(normal(rng), normal(rng))).collect();
        Constellation::with_identity_labels(m, pts).expect("finite").normalize().expect("nonzero")
    };
    let mut cfg = BpsConfig {
        num_test_angles: rng.random_range(2..=60),
        window_size: rng.random_range(1..=128),
        ..BpsConfig::default()
    };
    if qam {
        cfg = cfg.with_symmetric_span(4);
    }
    let b = rng.random_range(1..=256usize);
    let phase0: f64 = rng.random_range(-3.0..3.0);
    let noise = rng.random_range(0.0..0.3);
    let z = (0..b)
        .map(|k| {
            let x = c.points()[rng.random_range(0..c.order())];
            let n = Complex64::new(normal(rng), normal(rng)) * noise;
            (x + n) * Complex64::from_polar(1.0, phase0 + 0.002 * k as f64)
        })
        .collect();
    (z, c, cfg)
}

/// Number of instances on which the fast hard BPS disagrees with the
/// brute-force reference.
pub fn bps_oracle_mismatches(instances: usize, seed: u64) -> Result<usize> {
    let mut rng = RngStreams::new(seed);
    let mut bad = 0;
    for _ in 0..instances {
        let (z, c, cfg) = random_bps_instance(rng.get(Stream::Params));
        let fast = bps_hard(&z, &c, &cfg)?.angle_index;
        let slow = naive_bps_hard(&z, c.points(), &cfg.test_angles(), cfg.window_size);
        bad += usize::from(fast != slow);
    }
    Ok(bad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckSetup {
    pub m: usize,
    pub batch: usize,
    pub window: usize,
    pub angles: usize,
    pub temperature: f64,
    pub coords: usize,
    pub step: f64,
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        Self {
            m: 3,
            batch: 64,
            window: 16,
            angles: 16,
            temperature: 0.1,
            coords: 100,
            step: 1e-5,
            floor: 1e-6,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst: f64,
    /// (network, flat index, analytic, numeric) above tolerance.
    pub failures: Vec<(&'static str, usize, f64, f64)>,
}

/// Compares reverse-mode gradients of the full training loss (Tx-NN, channel,
/// soft BPS, Rx-NN, BCE) with central differences on random coordinates.
pub fn pipeline_gradient_check(setup: &GradCheckSetup, tol: f64) -> Result<GradCheckReport> {
    let cfg = TrainConfig {
        m: setup.m,
        epochs: 1,
        batch_start: setup.batch,
        batch_end: setup.batch,
        bps: BpsConfig {
            num_test_angles: setup.angles,
            window_size: setup.window,
            ..BpsConfig::default()
        },
        seed: setup.seed,
        ..TrainConfig::paper()
    };
    let trainer = Trainer::new(cfg.clone())?;
    let model = trainer.model().clone();
    let mut rng = RngStreams::new(setup.seed ^ 0x5eed);
    let input = BatchInput::draw(&cfg, setup.batch, &mut rng)?;
    let bps = cfg.effective_bps();

    let mut graph = build_batch_graph(&model, &input, &bps, PhaseRecovery::Bps, setup.temperature)?;
    let grads = graph.tape.backward(graph.loss)?;
    let tx_vars = graph.tx_vars.as_ref().expect("shaped model has a Tx graph");
    let flat = |g: Vec<Vec<f64>>| g.into_iter().flatten().collect::<Vec<f64>>();
    let analytic = [
        flat(model.tx.net().gradients(&grads, tx_vars)),
        flat(model.rx.net().gradients(&grads, &graph.rx_vars)),
    ];

    let loss_at = |net: usize, idx: usize, value: f64| -> Result<f64> {
        let mut m2 = model.clone();
        let params = if net == 0 {
            m2.tx.net_mut().params_mut()
        } else {
            m2.rx.net_mut().params_mut()
        };
        let mut left = idx;
        for p in params {
            if left < p.len() {
                p[left] = value;
                break;
            }
            left -= p.len();
        }
        Ok(build_batch_graph(&m2, &input, &bps, PhaseRecovery::Bps, setup.temperature)?.loss_nats())
    };
    let original = |net: usize, idx: usize| -> f64 {
        let n = if net == 0 { model.tx.net() } else { model.rx.net() };
        let mut left = idx;
        for p in n.params() {
            if left < p.len() {
                return p.data()[left];
            }
            left -= p.len();
        }
        unreachable!("index within parameter count")
    };

    let total = analytic[0].len() + analytic[1].len();
    let pick = rng.get(Stream::Params);
    let mut report = GradCheckReport {
        checked: 0,
        worst: 0.0,
        failures: Vec::new(),
    };
    for _ in 0..setup.coords {
        let flat_idx = pick.random_range(0..total);
        let (net, idx) = if flat_idx < analytic[0].len() {
            (0, flat_idx)
        } else {
            (1, flat_idx - analytic[0].len())
        };
        let x0 = original(net, idx);
        let mut err = None;
        let numeric = central_difference(
            |v| loss_at(net, idx, v).unwrap_or_else(|e| {
                err = Some(e);
                f64::NAN
            }),
            x0,
            setup.step,
        );
        if let Some(e) = err {
            return Err(e);
        }
        let a = analytic[net][idx];
        let rel = relative_error(a, numeric, setup.floor);
        report.checked += 1;
        report.worst = report.worst.max(rel);
        if !(rel <= tol) {
            report.failures.push((if net == 0 { "tx" } else { "rx" }, idx, a, numeric));
        }
    }
    Ok(report)
}

/// Worst relative error of the soft BPS gradient with respect to its
/// inputs, against central differences of a random linear functional.
pub fn soft_bps_gradient_error(seed: u64) -> Result<f64> {
    let mut streams = RngStreams::new(seed);
    let rng = streams.get(Stream::Params);
    let c = Constellation::with_identity_labels(
        3,
        (0..8).map(|_| Complex64::new(normal(rng), normal(rng))).collect(),
    )?
    .normalize()?;
    let z: Vec<Complex64> = (0..48)
        .map(|k| {
            (c.points()[k % 8] + Complex64::new(normal(rng), normal(rng)) * 0.1) * Complex64::from_polar(1.0, 0.3)
        })
        .collect();
    let probe: Vec<f64> = (0..96).map(|_| normal(rng)).collect();
    let cfg = BpsConfig {
        num_test_angles: 12,
        window_size: 8,
        ..BpsConfig::default()
    }
    .soft(0.2);

    let eval = |z: &[Complex64], p: &[Complex64], grad: bool| -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let zv = tape.param(complex_tensor(z));
        let pv = tape.param(complex_tensor(p));
        let out = tape.soft_bps(zv, pv, &cfg)?;
        let w = tape.constant(Tensor::new(z.len(), 2, probe.clone())?);
        let prod = tape.mul(out, w)?;
        let loss = tape.sum(prod)?;
        let value = tape.value(loss).data()[0];
        if !grad {
            return Ok((value, Vec::new(), Vec::new()));
        }
        let g = tape.backward(loss)?;
        Ok((
            value,
            g.get_or_zeros(zv, z.len(), 2).into_data(),
            g.get_or_zeros(pv, p.len(), 2).into_data(),
        ))
    };
    let (_, gz, gp) = eval(&z, c.points(), true)?;
    let mut worst: f64 = 0.0;
    let h = 1e-6;
    for i in 0..gz.len() {
        let num = central_difference(
            |v| {
                let mut zz = z.clone();
                set_part(&mut zz, i, v);
                eval(&zz, c.points(), false).map(|r| r.0).unwrap_or(f64::NAN)
            },
            get_part(&z, i),
            h,
        );
        worst = worst.max(relative_error(gz[i], num, 1e-6));
    }
    for i in 0..gp.len() {
        let num = central_difference(
            |v| {
                let mut pp = c.points().to_vec();
                set_part(&mut pp, i, v);
                eval(&z, &pp, false).map(|r| r.0).unwrap_or(f64::NAN)
            },
            get_part(c.points(), i),
            h,
        );
        worst = worst.max(relative_error(gp[i], num, 1e-6));
    }
    Ok(worst)
}

fn complex_tensor(v: &[Complex64]) -> Tensor {
    Tensor::new(v.len(), 2, v.iter().flat_map(|c| [c.re, c.im]).collect()).expect("two columns")
}

fn get_part(v: &[Complex64], i: usize) -> f64 {
    if i % 2 == 0 {
        v[i / 2].re
    } else {
        v[i / 2].im
    }
}

fn set_part(v: &mut [Complex64], i: usize, x: f64) {
    if i % 2 == 0 {
        v[i / 2].re = x;
    } else {
        v[i / 2].im = x;
    }
}

/// Exact-demapper BMI of Gray QAM through the evaluation path against the
/// numerically integrated value. Returns (estimate, reference).
pub fn bmi_oracle_gap(m: usize, snr_db: f64, symbols: usize, seed: u64) -> Result<(f64, f64)> {
    let q = Constellation::square_qam(m)?;
    let sigma_n = snr_db_to_sigma_n(snr_db);
    let p = ChannelParams::new(sigma_n, 0.0)?;
    let spec = PointSpec {
        recovery: PhaseRecovery::Genie,
        ..PointSpec::new(symbols, BpsConfig::default())
    };
    let est = run_point(System::ExactGaussian(&q), p, p, &spec, &mut RngStreams::new(seed))?;
    Ok((est.raw, gray_qam_bmi(m, sigma_n)))
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome {
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

/// Runs every check at fixed seeds.
pub fn run_selftest(fault: Option<Fault>) -> Vec<CheckOutcome> {
    set_soft_grad_fault(fault == Some(Fault::SoftBpsGrad));
    let out = vec![
        timed("bps-oracle", || {
            let bad = bps_oracle_mismatches(1000, 1)?;
            Ok((bad == 0, format!("{bad} of 1000 instances disagree")))
        }),
        timed("soft-bps-grad", || {
            let worst = soft_bps_gradient_error(2)?;
            Ok((worst < 1e-5, format!("worst relative error {worst:.2e}")))
        }),
        timed("pipeline-grad", || {
            let r = pipeline_gradient_check(&GradCheckSetup::default(), 1e-4)?;
            Ok((
                r.failures.is_empty(),
                format!("{} coordinates, worst relative error {:.2e}", r.checked, r.worst),
            ))
        }),
        timed("bmi-oracle", || {
            let (est, reference) = bmi_oracle_gap(2, 8.0, 1 << 17, 3)?;
            let gap = (est - reference).abs();
            Ok((gap < 0.01, format!("QPSK 8 dB: {est:.4} vs {reference:.4}")))
        }),
    ];
    set_soft_grad_fault(false);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_names() {
        assert_eq!(Fault::from_name("soft-bps-grad"), Some(Fault::SoftBpsGrad));
        assert_eq!(Fault::from_name("nope"), None);
    }

    #[test]
    fn small_bps_oracle_run_agrees() {
        assert_eq!(bps_oracle_mismatches(40, 9).unwrap(), 0);
    }

    #[test]
    fn soft_bps_gradient_matches_differences() {
        assert!(soft_bps_gradient_error(4).unwrap() < 1e-5);
    }

    #[test]
    fn injected_fault_is_detected() {
        set_soft_grad_fault(true);
        let worst = soft_bps_gradient_error(4).unwrap();
        set_soft_grad_fault(false);
        assert!(worst > 1e-2);
    }
}
