//! AWGN plus Wiener phase-noise channel.
//!
//! Conventions: symbols have unit mean energy, `sigma_n` is the standard
//! deviation of the complex noise (so SNR = 1/sigma_n^2), and `sigma_phi`
//! is the standard deviation of the per-symbol phase increment,
//! sigma_phi^2 = 2*pi*linewidth/symbol_rate.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{normal, RngStreams, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub sigma_n: f64,
    pub sigma_phi: f64,
}

impl ChannelParams {
    pub fn new(sigma_n: f64, sigma_phi: f64) -> Result<Self> {
        if !(sigma_n.is_finite() && sigma_n >= 0.0 && sigma_phi.is_finite() && sigma_phi >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "channel parameters must be finite and non-negative, got sigma_n={sigma_n}, sigma_phi={sigma_phi}"
            )));
        }
        Ok(Self { sigma_n, sigma_phi })
    }

    pub fn from_physical(snr_db: f64, linewidth_hz: f64, symbol_rate: f64) -> Result<Self> {
        Self::new(
            snr_db_to_sigma_n(snr_db),
            linewidth_to_sigma_phi(linewidth_hz, symbol_rate)?,
        )
    }

    pub fn snr_db(&self) -> f64 {
        sigma_n_to_snr_db(self.sigma_n)
    }
}

pub fn snr_db_to_sigma_n(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0)
}

pub fn sigma_n_to_snr_db(sigma_n: f64) -> f64 {
    -20.0 * sigma_n.log10()
}

pub fn linewidth_to_sigma_phi(linewidth_hz: f64, symbol_rate_baud: f64) -> Result<f64> {
    if !(symbol_rate_baud > 0.0) || !symbol_rate_baud.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "symbol rate must be positive, got {symbol_rate_baud}"
        )));
    }
    if !(linewidth_hz >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "linewidth must be non-negative, got {linewidth_hz}"
        )));
    }
    Ok((TAU * linewidth_hz / symbol_rate_baud).sqrt())
}

pub fn sigma_phi_to_linewidth(sigma_phi: f64, symbol_rate_baud: f64) -> f64 {
    sigma_phi * sigma_phi * symbol_rate_baud / TAU
}

/// How the phase walk starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartPhase {
    /// Uniform in [0, 2*pi), drawn from the phase stream.
    Random,
    Fixed(f64),
}

/// One realization of the channel impairments for a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Impairments {
    pub noise: Vec<Complex64>,
    pub phase: Vec<f64>,
}

impl Impairments {
    pub fn draw(len: usize, params: ChannelParams, start: StartPhase, rng: &mut RngStreams) -> Self {
        // total variance sigma_n^2, half per real dimension
        let per_dim = params.sigma_n * std::f64::consts::FRAC_1_SQRT_2;
        let noise_rng = rng.get(Stream::Noise);
        let noise = (0..len)
            .map(|_| {
                let re = normal(noise_rng);
                let im = normal(noise_rng);
                Complex64::new(re * per_dim, im * per_dim)
            })
            .collect();

        let phase_rng = rng.get(Stream::Phase);
        let mut phi = match start {
            StartPhase::Random => phase_rng.random::<f64>() * TAU,
            StartPhase::Fixed(p) => p,
        };
        let mut phase = Vec::with_capacity(len);
        for k in 0..len {
            if k > 0 {
                phi += params.sigma_phi * normal(phase_rng);
            }
            phase.push(phi);
        }
        Self { noise, phase }
    }

    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }

    /// z_k = (x_k + n_k) * exp(j*phi_k)
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        x.iter()
            .zip(&self.noise)
            .zip(&self.phase)
            .map(|((&x, &n), &phi)| (x + n) * Complex64::from_polar(1.0, phi))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub x: Vec<Complex64>,
    pub z: Vec<Complex64>,
    pub phi: Vec<f64>,
    pub x_hat: Option<Vec<Complex64>>,
}

impl SymbolFrame {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

pub fn apply_channel(
    x: &[Complex64],
    params: ChannelParams,
    start: StartPhase,
    rng: &mut RngStreams,
) -> Result<SymbolFrame> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty symbol frame".into()));
    }
    let imp = Impairments::draw(x.len(), params, start, rng);
    Ok(SymbolFrame {
        x: x.to_vec(),
        z: imp.apply(x),
        phi: imp.phase,
        x_hat: None,
    })
}

/// Wraps an angle into [-pi, pi).
pub fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_conversion() {
        assert_eq!(snr_db_to_sigma_n(0.0), 1.0);
        assert!((snr_db_to_sigma_n(20.0) - 0.1).abs() < 1e-15);
        assert!((snr_db_to_sigma_n(18.0) - 0.125_892_54).abs() < 1e-8);
        assert!((sigma_n_to_snr_db(snr_db_to_sigma_n(14.3)) - 14.3).abs() < 1e-12);
    }

    #[test]
    fn linewidth_conversion() {
        assert_eq!(linewidth_to_sigma_phi(0.0, 32e9).unwrap(), 0.0);
        let s = linewidth_to_sigma_phi(100e3, 32e9).unwrap();
        assert!((s * s - 1.963_495_4e-5).abs() < 1e-12);
        let s = linewidth_to_sigma_phi(600e3, 32e9).unwrap();
        assert!((s - 1.0854e-2).abs() < 1e-6);
        assert!(linewidth_to_sigma_phi(1e5, 0.0).is_err());
        assert!(linewidth_to_sigma_phi(1e5, -1.0).is_err());
        assert!((sigma_phi_to_linewidth(s, 32e9) - 600e3).abs() < 1e-6);
    }

    #[test]
    fn identity_channel() {
        let x: Vec<Complex64> = (0..50).map(|k| Complex64::new(k as f64, -(k as f64))).collect();
        let mut rng = RngStreams::new(3);
        let f = apply_channel(&x, ChannelParams::new(0.0, 0.0).unwrap(), StartPhase::Fixed(0.0), &mut rng)
            .unwrap();
        assert_eq!(f.z, x);
        assert!(f.phi.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn rejects_bad_params_and_empty_input() {
        assert!(ChannelParams::new(-1.0, 0.0).is_err());
        assert!(ChannelParams::new(0.0, f64::NAN).is_err());
        let mut rng = RngStreams::new(3);
        assert!(apply_channel(&[], ChannelParams::new(0.1, 0.0).unwrap(), StartPhase::Random, &mut rng).is_err());
    }

    #[test]
    fn replay_is_bit_identical() {
        let x = vec![Complex64::new(1.0, 0.5); 300];
        let p = ChannelParams::new(0.2, 0.01).unwrap();
        let a = apply_channel(&x, p, StartPhase::Random, &mut RngStreams::new(9)).unwrap();
        let b = apply_channel(&x, p, StartPhase::Random, &mut RngStreams::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn start_phase_is_uniform_on_circle() {
        let mut rng = RngStreams::new(21);
        let p = ChannelParams::new(0.0, 0.0).unwrap();
        let starts: Vec<f64> = (0..4000)
            .map(|_| Impairments::draw(1, p, StartPhase::Random, &mut rng).phase[0])
            .collect();
        assert!(starts.iter().all(|&s| (0.0..TAU).contains(&s)));
        let mean = starts.iter().sum::<f64>() / starts.len() as f64;
        assert!((mean - PI).abs() < 0.1);
    }

    #[test]
    fn noise_is_circular_and_increments_uncorrelated() {
        let mut rng = RngStreams::new(5);
        let n = 200_000;
        let imp = Impairments::draw(n, ChannelParams::new(1.0, 0.05).unwrap(), StartPhase::Fixed(0.0), &mut rng);
        let pseudo: Complex64 = imp.noise.iter().map(|v| v * v).sum::<Complex64>() / n as f64;
        // standard error of E[n^2] is ~ 1/sqrt(n)
        assert!(pseudo.norm() < 5.0 / (n as f64).sqrt());

        let inc: Vec<f64> = imp.phase.windows(2).map(|w| w[1] - w[0]).collect();
        let var = inc.iter().map(|d| d * d).sum::<f64>() / inc.len() as f64;
        for lag in 1..4 {
            let cov = inc.iter().zip(&inc[lag..]).map(|(a, b)| a * b).sum::<f64>()
                / (inc.len() - lag) as f64;
            assert!((cov / var).abs() < 5.0 / (inc.len() as f64).sqrt(), "lag {lag}");
        }
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-10.0, -PI, 0.0, PI, 3.5, 100.0] {
            let w = wrap_angle(a);
            assert!((-PI..PI).contains(&w));
            assert!(((a - w) / TAU - ((a - w) / TAU).round()).abs() < 1e-12);
        }
    }
}
