//! Frozen-model evaluation with the hard BPS: BMI estimation, SNR x
//! linewidth sweeps, SNR misestimation and constellation export.

use std::f64::consts::LN_2;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::bps::{bps_hard, genie_quadrant, unwrap_steps, BpsConfig};
use crate::channel::{apply_channel, ChannelParams, StartPhase};
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::nnkit::{bce_cell, Tensor};
use crate::rng::{derive_seed, RngStreams, Stream};
use crate::shaping::{exact_gaussian_llrs, ShapingModel};
use crate::trainer::{effective_bps, PhaseRecovery};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmiEstimate {
    /// Clamped at zero.
    pub bmi: f64,
    pub raw: f64,
    /// Number of unmasked symbols.
    pub symbols: usize,
}

/// `m` minus the summed per-bit mean BCE (bits) over unmasked rows.
pub fn estimate_bmi(llrs: &Tensor, bits: &[u8], mask: &[bool]) -> Result<BmiEstimate> {
    let (rows, m) = llrs.shape();
    if bits.len() != rows * m || mask.len() != rows {
        return Err(Error::Shape(format!(
            "{rows}x{m} LLRs, {} bits, {} mask entries",
            bits.len(),
            mask.len()
        )));
    }
    let mut acc = BceAccumulator::new(m);
    acc.add(llrs, bits, mask);
    acc.finish()
}

/// Running BCE sum, so frames can be streamed.
#[derive(Debug, Clone, Copy)]
struct BceAccumulator {
    m: usize,
    nats: f64,
    symbols: usize,
}

impl BceAccumulator {
    fn new(m: usize) -> Self {
        Self { m, nats: 0.0, symbols: 0 }
    }

    fn add(&mut self, llrs: &Tensor, bits: &[u8], mask: &[bool]) {
        for (k, &masked) in mask.iter().enumerate() {
            if masked {
                continue;
            }
            let row = llrs.row_slice(k);
            self.nats += row.iter().zip(&bits[k * self.m..]).map(|(&l, &b)| bce_cell(l, b)).sum::<f64>();
            self.symbols += 1;
        }
    }

    fn finish(self) -> Result<BmiEstimate> {
        if self.symbols == 0 {
            return Err(Error::DegenerateBatch);
        }
        let raw = self.m as f64 - self.nats / LN_2 / self.symbols as f64;
        Ok(BmiEstimate {
            bmi: raw.max(0.0),
            raw,
            symbols: self.symbols,
        })
    }
}

/// What is being evaluated.
#[derive(Debug, Clone, Copy)]
pub enum System<'a> {
    /// Trained mapper and demapper (or QAM plus trained demapper).
    Model(&'a ShapingModel),
    /// Fixed constellation with the exact Gaussian demapper.
    ExactGaussian(&'a Constellation),
}

impl System<'_> {
    pub fn bits(&self) -> usize {
        match self {
            System::Model(m) => m.bits(),
            System::ExactGaussian(c) => c.bits_per_symbol(),
        }
    }

    fn constellation(&self, assumed: ChannelParams) -> Result<Constellation> {
        match self {
            System::Model(m) => m.constellation(assumed),
            System::ExactGaussian(c) => Ok((*c).clone()),
        }
    }

    fn demap(&self, x_hat: &[Complex64], assumed: ChannelParams) -> Result<Tensor> {
        match self {
            System::Model(m) => m.demap(x_hat, assumed),
            System::ExactGaussian(c) => exact_gaussian_llrs(x_hat, c, assumed.sigma_n),
        }
    }

    fn bps(&self, bps: BpsConfig) -> BpsConfig {
        match self {
            System::Model(m) => effective_bps(bps, m.conditioning),
            System::ExactGaussian(_) => bps,
        }
        .hard()
    }
}

/// Per-point evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSpec {
    pub symbols: usize,
    /// Symbols per independently phase-started frame.
    pub frame_len: usize,
    pub bps: BpsConfig,
    pub recovery: PhaseRecovery,
    /// Unwrap hard decisions when the search span is restricted.
    pub unwrap: bool,
}

impl PointSpec {
    pub fn new(symbols: usize, bps: BpsConfig) -> Self {
        Self {
            symbols,
            frame_len: DEFAULT_FRAME_LEN,
            bps,
            recovery: PhaseRecovery::Bps,
            unwrap: false,
        }
    }
}

pub const DEFAULT_SYMBOLS: usize = 1 << 17;
pub const DEFAULT_FRAME_LEN: usize = 1 << 14;

/// BMI of `system` when the channel runs at `truth` while both ends are
/// conditioned on `assumed`.
///
/// Symbols are sent in frames of `frame_len`, each with its own uniformly
/// random start phase. With the hard BPS the first and last `N/2` symbols of
/// each frame are excluded. When the BPS search span is restricted to one
/// symmetry period (square QAM), the quarter-turn ambiguity is resolved once
/// per frame by a genie; decisions are unwrapped first only if asked.
pub fn run_point(
    system: System<'_>,
    truth: ChannelParams,
    assumed: ChannelParams,
    spec: &PointSpec,
    rng: &mut RngStreams,
) -> Result<BmiEstimate> {
    let m = system.bits();
    let bps = system.bps(spec.bps);
    bps.validate()?;
    if spec.symbols == 0 || spec.frame_len == 0 {
        return Err(Error::InvalidArgument("symbol and frame counts must be positive".into()));
    }
    if spec.recovery == PhaseRecovery::Bps && spec.frame_len.min(spec.symbols) <= 2 * bps.edge_len() {
        return Err(Error::InvalidArgument(format!(
            "frames of {} symbols leave nothing after removing BPS edges",
            spec.frame_len.min(spec.symbols)
        )));
    }
    let period = bps.angle_max - bps.angle_min;
    let restricted = period < std::f64::consts::TAU - 1e-9;
    let c = system.constellation(assumed)?;
    let mut acc = BceAccumulator::new(m);
    let mut remaining = spec.symbols;
    while remaining > 0 {
        let len = remaining.min(spec.frame_len);
        remaining -= len;
        let bits_rng = rng.get(Stream::Bits);
        let labels: Vec<u32> = (0..len).map(|_| bits_rng.random_range(0..c.order() as u32)).collect();
        let x: Vec<Complex64> = labels.iter().map(|&l| c.point_for_label(l)).collect();
        let frame = apply_channel(&x, truth, StartPhase::Random, rng)?;
        let (x_hat, mask) = match spec.recovery {
            PhaseRecovery::Genie => {
                let x_hat = frame.z.iter().zip(&frame.phi).map(|(z, p)| z * Complex64::from_polar(1.0, -p)).collect();
                (x_hat, vec![false; len])
            }
            PhaseRecovery::Bps => {
                let mask = bps.edge_mask(len);
                let hard = bps_hard(&frame.z, &c, &bps)?;
                let mut x_hat = hard.x_hat;
                if restricted {
                    if spec.unwrap {
                        for (v, n) in x_hat.iter_mut().zip(unwrap_steps(&hard.theta_hat, period)) {
                            *v *= Complex64::from_polar(1.0, n as f64 * period);
                        }
                    }
                    let k = genie_quadrant(&x_hat, &x, &mask);
                    let r = Complex64::new(0.0, 1.0).powu(k as u32);
                    x_hat.iter_mut().for_each(|v| *v *= r);
                }
                (x_hat, mask)
            }
        };
        let llrs = system.demap(&x_hat, assumed)?;
        let mut bits = Vec::with_capacity(len * m);
        for l in labels {
            bits.extend((0..m).map(|i| ((l >> (m - 1 - i)) & 1) as u8));
        }
        acc.add(&llrs, &bits, &mask);
    }
    acc.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub snr_db: Vec<f64>,
    pub linewidth_hz: Vec<f64>,
    pub symbols_per_point: usize,
    pub frame_len: usize,
    pub seed: u64,
    /// Added to the true SNR to get the SNR both ends are conditioned on.
    pub offset_db: f64,
    pub symbol_rate: f64,
    pub bps: BpsConfig,
    pub recovery: PhaseRecovery,
    pub unwrap: bool,
}

impl SweepSpec {
    pub fn new(snr_db: Vec<f64>, linewidth_hz: Vec<f64>, bps: BpsConfig) -> Self {
        Self {
            snr_db,
            linewidth_hz,
            symbols_per_point: DEFAULT_SYMBOLS,
            frame_len: DEFAULT_FRAME_LEN,
            seed: 1,
            offset_db: 0.0,
            symbol_rate: 32e9,
            bps,
            recovery: PhaseRecovery::Bps,
            unwrap: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_empty() || self.linewidth_hz.is_empty() {
            return Err(Error::InvalidArgument("SNR and linewidth lists must be nonempty".into()));
        }
        if self.symbols_per_point < 10 * self.bps.window_size {
            return Err(Error::InvalidArgument(format!(
                "symbols_per_point must be at least {} (10 BPS windows)",
                10 * self.bps.window_size
            )));
        }
        if !self.offset_db.is_finite() {
            return Err(Error::InvalidArgument("offset must be finite".into()));
        }
        self.bps.validate()
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.snr_db
            .iter()
            .flat_map(|&s| self.linewidth_hz.iter().map(move |&l| (s, l)))
            .collect()
    }

    fn point_spec(&self) -> PointSpec {
        PointSpec {
            symbols: self.symbols_per_point,
            frame_len: self.frame_len,
            bps: self.bps,
            recovery: self.recovery,
            unwrap: self.unwrap,
        }
    }
}

/// Ten linewidths from 50 kHz to 600 kHz.
pub fn default_linewidth_grid() -> Vec<f64> {
    (0..10).map(|i| 50e3 + 550e3 * i as f64 / 9.0).collect()
}

pub fn default_snr_list() -> Vec<f64> {
    vec![14.0, 15.0, 16.0, 17.0, 18.0, 20.0, 25.0]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub linewidth_hz: f64,
    pub bmi: f64,
    pub raw_bmi: f64,
    pub symbols: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub offset_db: f64,
    pub edge_excluded: usize,
}

impl SweepResult {
    pub const HEADER: &'static str = "snr linewidth mean n seed";

    pub fn to_table(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{:.2} {:.2} {:.6} {} {}\n",
                r.snr_db, r.linewidth_hz, r.bmi, r.symbols, r.seed
            ));
        }
        out
    }
}

/// Evaluates every (SNR, linewidth) pair on `jobs` threads. Point `i`
/// (SNR-major order) draws from streams seeded by `derive_seed(seed, i)`,
/// so the rows do not depend on `jobs`.
pub fn run_sweep(system: System<'_>, spec: &SweepSpec, jobs: usize) -> Result<SweepResult> {
    spec.validate()?;
    let point = spec.point_spec();
    let eval = |(i, &(snr, lw)): (usize, &(f64, f64))| -> Result<SweepRow> {
        let seed = derive_seed(spec.seed, i as u64);
        let truth = ChannelParams::from_physical(snr, lw, spec.symbol_rate)?;
        let assumed = ChannelParams::from_physical(snr + spec.offset_db, lw, spec.symbol_rate)?;
        let est = run_point(system, truth, assumed, &point, &mut RngStreams::new(seed)).map_err(|e| {
            Error::InvalidArgument(format!("point snr={snr} dB, linewidth={lw} Hz: {e}"))
        })?;
        Ok(SweepRow {
            snr_db: snr,
            linewidth_hz: lw,
            bmi: est.bmi,
            raw_bmi: est.raw,
            symbols: est.symbols,
            seed,
        })
    };
    let points = spec.points();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let rows = pool.install(|| points.par_iter().enumerate().map(eval).collect::<Result<Vec<_>>>())?;
    Ok(SweepResult {
        rows,
        offset_db: spec.offset_db,
        edge_excluded: system.bps(spec.bps).edge_len(),
    })
}

pub fn constellation_file_name(linewidth_hz: f64, snr_db: f64) -> String {
    format!("constellation_{linewidth_hz:.2}_{snr_db}.txt")
}

/// Writes the transmit constellation for every grid point into `dir`.
pub fn export_constellation_sweep(
    model: &ShapingModel,
    snr_db: &[f64],
    linewidth_hz: &[f64],
    symbol_rate: f64,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if snr_db.is_empty() || linewidth_hz.is_empty() {
        return Err(Error::InvalidArgument("SNR and linewidth lists must be nonempty".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for &snr in snr_db {
        for &lw in linewidth_hz {
            let c = model.constellation(ChannelParams::from_physical(snr, lw, symbol_rate)?)?;
            let path = dir.join(constellation_file_name(lw, snr));
            std::fs::write(&path, c.to_text())?;
            out.push(path);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bps::soft_invocations;
    use crate::rng::Stream;
    use crate::shaping::{ConditionScaling, Conditioning, RxNet, TxNet};

    fn model(conditioning: Conditioning) -> ShapingModel {
        let mut rng = RngStreams::new(4);
        ShapingModel {
            tx: TxNet::init(4, rng.get(Stream::Init)).unwrap(),
            rx: RxNet::init(4, rng.get(Stream::Init)).unwrap(),
            scaling: ConditionScaling {
                sigma_n_min: 0.05,
                sigma_n_max: 0.2,
                sigma_phi_min: 0.001,
                sigma_phi_max: 0.01,
            },
            conditioning,
        }
    }

    fn small_bps() -> BpsConfig {
        BpsConfig {
            num_test_angles: 16,
            window_size: 16,
            ..BpsConfig::default()
        }
    }

    #[test]
    fn perfect_and_zero_llrs() {
        let bits = [0u8, 1, 1, 0, 0, 0];
        let llr: Vec<f64> = bits.iter().map(|&b| if b == 0 { 40.0 } else { -40.0 }).collect();
        let t = Tensor::new(3, 2, llr).unwrap();
        let e = estimate_bmi(&t, &bits, &[false; 3]).unwrap();
        assert!((e.bmi - 2.0).abs() < 1e-6);
        let z = Tensor::zeros(3, 2);
        assert!(estimate_bmi(&z, &bits, &[false; 3]).unwrap().bmi.abs() < 1e-12);
        assert!(matches!(estimate_bmi(&z, &bits, &[true; 3]), Err(Error::DegenerateBatch)));
    }

    #[test]
    fn confident_wrong_llrs_clamp_at_zero() {
        let t = Tensor::new(1, 1, vec![-40.0]).unwrap();
        let e = estimate_bmi(&t, &[0], &[false]).unwrap();
        assert_eq!(e.bmi, 0.0);
        assert!(e.raw < -50.0);
    }

    #[test]
    fn sweep_is_deterministic_and_job_invariant() {
        let m = model(Conditioning::Parameterized);
        let mut spec = SweepSpec::new(vec![14.0, 20.0], vec![1e5, 4e5], small_bps());
        spec.symbols_per_point = 2000;
        spec.frame_len = 500;
        let a = run_sweep(System::Model(&m), &spec, 1).unwrap();
        let b = run_sweep(System::Model(&m), &spec, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 4);
        assert_eq!((a.rows[1].snr_db, a.rows[1].linewidth_hz), (14.0, 4e5));
        assert!(a.rows.iter().all(|r| (0.0..=4.0).contains(&r.bmi)));
        assert!(a.to_table().starts_with("snr linewidth mean n seed\n14.00 100000.00 "));
    }

    #[test]
    fn evaluation_never_touches_soft_bps() {
        let m = model(Conditioning::Parameterized);
        let before = soft_invocations();
        let p = ChannelParams::from_physical(18.0, 1e5, 32e9).unwrap();
        let spec = PointSpec {
            frame_len: 400,
            ..PointSpec::new(800, small_bps())
        };
        run_point(System::Model(&m), p, p, &spec, &mut RngStreams::new(1)).unwrap();
        assert_eq!(soft_invocations(), before);
    }

    #[test]
    fn qam_exact_demapper_without_phase_noise_is_near_capacity() {
        let q = Constellation::square_qam(4).unwrap();
        let p = ChannelParams::new(crate::channel::snr_db_to_sigma_n(25.0), 0.0).unwrap();
        let mut spec = PointSpec::new(20_000, small_bps().with_symmetric_span(4));
        spec.recovery = PhaseRecovery::Genie;
        let e = run_point(System::ExactGaussian(&q), p, p, &spec, &mut RngStreams::new(2)).unwrap();
        assert!(e.bmi > 3.99, "{}", e.bmi);
        spec.recovery = PhaseRecovery::Bps;
        let e = run_point(System::ExactGaussian(&q), p, p, &spec, &mut RngStreams::new(2)).unwrap();
        assert!(e.bmi > 3.98, "{}", e.bmi);
    }

    #[test]
    fn sweep_validation() {
        let spec = SweepSpec::new(vec![], vec![1e5], small_bps());
        assert!(spec.validate().is_err());
        let mut spec = SweepSpec::new(vec![18.0], vec![1e5], small_bps());
        spec.symbols_per_point = 159;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn export_names_and_robust_files_match() {
        let dir = tempfile::tempdir().unwrap();
        let m = model(Conditioning::Robust);
        let grid = default_linewidth_grid();
        let files = export_constellation_sweep(&m, &[18.0], &grid, 32e9, dir.path()).unwrap();
        assert_eq!(files.len(), 10);
        assert!(files[1].ends_with("constellation_111111.11_18.txt"));
        let first = std::fs::read(&files[0]).unwrap();
        for f in &files {
            assert_eq!(std::fs::read(f).unwrap(), first);
            Constellation::read(std::io::BufReader::new(std::fs::File::open(f).unwrap())).unwrap();
        }
        assert!(export_constellation_sweep(&m, &[18.0], &[], 32e9, dir.path()).is_err());
    }
}
