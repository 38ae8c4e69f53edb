//! Slow, independent reference computations used to cross-check the fast
//! paths: brute-force BPS, numerically integrated BMI of Gray-labeled
//! PAM/QAM, Monte-Carlo bitwise mutual information and finite differences.

use num_complex::Complex64;
use rand::Rng;

use crate::constellation::Constellation;
use crate::rng::normal;

/// Hard BPS decision indices by direct window summation, no prefix sums.
pub fn naive_bps_hard(z: &[Complex64], points: &[Complex64], angles: &[f64], window: usize) -> Vec<usize> {
    let b = z.len();
    let d: Vec<Vec<f64>> = z
        .iter()
        .map(|zk| {
            angles
                .iter()
                .map(|&a| {
                    let r = zk * Complex64::from_polar(1.0, a);
                    points.iter().map(|c| (r - c).norm_sqr()).fold(f64::INFINITY, f64::min)
                })
                .collect()
        })
        .collect();
    let past = window / 2;
    let future = window.div_ceil(2) - 1;
    (0..b)
        .map(|k| {
            let lo = k.saturating_sub(past);
            let hi = (k + future).min(b - 1);
            let mut best = (f64::INFINITY, 0);
            for t in 0..angles.len() {
                let mut s = 0.0;
                for row in &d[lo..=hi] {
                    s += row[t];
                }
                if s < best.0 {
                    best = (s, t);
                }
            }
            best.1
        })
        .collect()
}

/// Sum of per-bit mutual informations of a Gray-labeled PAM with the given
/// (sorted) amplitudes in real Gaussian noise of standard deviation `sigma`,
/// by composite Simpson integration.
pub fn gray_pam_bmi(levels: &[f64], sigma: f64) -> f64 {
    let n = levels.len();
    assert!(n.is_power_of_two() && n >= 2);
    let bits = n.trailing_zeros() as usize;
    let gray: Vec<usize> = (0..n).map(|l| l ^ (l >> 1)).collect();
    let steps = 6000;
    let span = 14.0 * sigma;
    let h = 2.0 * span / steps as f64;
    let mut loss = 0.0;
    for (l, &a) in levels.iter().enumerate() {
        // expected -log2 P(bit_i = own bit | y), y ~ N(a, sigma^2)
        let integrand = |y: f64| -> f64 {
            let own = (y - a) * (y - a);
            let w: Vec<f64> = levels
                .iter()
                .map(|&c| (-((y - c) * (y - c) - own) / (2.0 * sigma * sigma)).exp())
                .collect();
            let total: f64 = w.iter().sum();
            let mut acc = 0.0;
            for i in 0..bits {
                let mask = 1 << (bits - 1 - i);
                let same: f64 = w
                    .iter()
                    .zip(&gray)
                    .filter(|(_, g)| (**g & mask) == (gray[l] & mask))
                    .map(|(v, _)| v)
                    .sum();
                acc -= (same / total).log2();
            }
            let pdf = (-own / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            acc * pdf
        };
        let mut s = integrand(a - span) + integrand(a + span);
        for j in 1..steps {
            let y = a - span + j as f64 * h;
            s += integrand(y) * if j % 2 == 1 { 4.0 } else { 2.0 };
        }
        loss += s * h / 3.0;
    }
    bits as f64 - loss / n as f64
}

/// BMI of unit-power Gray square QAM with `m` bits in complex noise of
/// total variance `sigma_n^2`: twice the BMI of each axis.
pub fn gray_qam_bmi(m: usize, sigma_n: f64) -> f64 {
    let side = 1usize << (m / 2);
    let scale = (2.0 * ((side * side - 1) as f64) / 3.0).sqrt();
    let levels: Vec<f64> = (0..side).map(|l| ((2 * l) as f64 - (side - 1) as f64) / scale).collect();
    2.0 * gray_pam_bmi(&levels, sigma_n / 2f64.sqrt())
}

/// Monte-Carlo bitwise mutual information of `c` over complex AWGN with
/// total variance `sigma_n^2`, from posterior probabilities computed
/// directly. Returns (estimate, standard error).
pub fn mc_bitwise_mi<R: Rng + ?Sized>(c: &Constellation, sigma_n: f64, samples: usize, rng: &mut R) -> (f64, f64) {
    let m = c.bits_per_symbol();
    let s = sigma_n / 2f64.sqrt();
    let var = sigma_n * sigma_n;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let mut p = vec![0.0; c.order()];
    for _ in 0..samples {
        let tx = rng.random_range(0..c.order());
        let y = c.points()[tx] + Complex64::new(s * normal(rng), s * normal(rng));
        let own = (y - c.points()[tx]).norm_sqr();
        for (pi, pt) in p.iter_mut().zip(c.points()) {
            *pi = (-((y - pt).norm_sqr() - own) / var).exp();
        }
        let total: f64 = p.iter().sum();
        let mut info = m as f64;
        for bit in 0..m {
            let own_bit = c.label_bit(tx, bit);
            let same: f64 = p
                .iter()
                .enumerate()
                .filter(|(i, _)| c.label_bit(*i, bit) == own_bit)
                .map(|(_, v)| v)
                .sum();
            info += (same / total).log2();
        }
        sum += info;
        sum_sq += info * info;
    }
    let n = samples as f64;
    let mean = sum / n;
    let se = ((sum_sq / n - mean * mean).max(0.0) / n).sqrt();
    (mean, se)
}

pub fn central_difference(mut f: impl FnMut(f64) -> f64, x0: f64, h: f64) -> f64 {
    (f(x0 + h) - f(x0 - h)) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bpsk_quadrature_limits() {
        assert!((gray_pam_bmi(&[-1.0, 1.0], 1e-3) - 1.0).abs() < 1e-9);
        assert!(gray_pam_bmi(&[-1.0, 1.0], 100.0) < 1e-3);
    }

    #[test]
    fn bpsk_quadrature_reference_value() {
        // BPSK at Es/N0 = 0 dB per real dimension (sigma = 1): 0.4859 bit
        let v = gray_pam_bmi(&[-1.0, 1.0], 1.0);
        assert!((v - 0.48587).abs() < 2e-4, "{v}");
    }

    #[test]
    fn naive_bps_examples() {
        let qpsk: Vec<Complex64> = (0..4)
            .map(|k| Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4 + k as f64 * std::f64::consts::FRAC_PI_2))
            .collect();
        let z: Vec<Complex64> = qpsk.iter().cycle().take(10).map(|p| p * Complex64::from_polar(1.0, -0.2)).collect();
        let angles = [-0.4, -0.2, 0.0, 0.2, 0.4];
        assert!(naive_bps_hard(&z, &qpsk, &angles, 4).iter().all(|&i| i == 3));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
        assert!((relative_error(1e-9, 2e-9, 1e-6) - 1e-3).abs() < 1e-15);
    }
}
