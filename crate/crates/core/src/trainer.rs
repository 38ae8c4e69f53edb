//! End-to-end training: per-batch channel sampling, batch-size ramp,
//! temperature annealing of the soft BPS, BCE loss and Adam updates.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use rand::Rng;

use crate::bps::{edge_mask, genie_quadrant, BpsConfig};
use crate::channel::{linewidth_to_sigma_phi, snr_db_to_sigma_n, ChannelParams, Impairments, StartPhase};
use crate::error::{Error, Result};
use crate::nnkit::{AdamHyper, AdamState, NetVars, Tape, Var};
use crate::rng::{RngStreams, Stream};
use crate::shaping::{ConditionScaling, Conditioning, RxNet, ShapingModel, TxNet};

pub mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

/// How (sigma_n, sigma_phi) are drawn for each batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Uniform in the sigma domain over the converted ranges.
    #[default]
    SigmaUniform,
    /// SNR uniform in dB, linewidth uniform in Hz.
    DbUniform,
}

/// Carrier phase recovery inside the training loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseRecovery {
    /// Soft blind phase search; edge symbols are masked.
    #[default]
    Bps,
    /// De-rotation by the true channel phase; nothing is masked.
    Genie,
}

fn default_batches_per_epoch() -> usize {
    10
}
fn default_learning_rate() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub m: usize,
    pub epochs: usize,
    #[serde(default = "default_batches_per_epoch")]
    pub batches_per_epoch: usize,
    pub batch_start: usize,
    pub batch_end: usize,
    pub snr_db_range: [f64; 2],
    pub linewidth_range_hz: [f64; 2],
    pub symbol_rate: f64,
    pub bps: BpsConfig,
    pub temp_start: f64,
    pub temp_end: f64,
    pub seed: u64,
    pub conditioning: Conditioning,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub phase_recovery: PhaseRecovery,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
}

impl TrainConfig {
    /// Full-scale setup: m=6, 1000 epochs, batch 1000 -> 10000, SNR 14-25 dB,
    /// linewidth 50-600 kHz at 32 GBaud, 60 test angles, window 128,
    /// temperature 1.0 -> 0.001.
    pub fn paper() -> Self {
        Self {
            m: 6,
            epochs: 1000,
            batches_per_epoch: default_batches_per_epoch(),
            batch_start: 1000,
            batch_end: 10000,
            snr_db_range: [14.0, 25.0],
            linewidth_range_hz: [50e3, 600e3],
            symbol_rate: 32e9,
            bps: BpsConfig::default(),
            temp_start: 1.0,
            temp_end: 0.001,
            seed: 1,
            conditioning: Conditioning::Parameterized,
            sampling: Sampling::SigmaUniform,
            phase_recovery: PhaseRecovery::Bps,
            learning_rate: default_learning_rate(),
        }
    }

    /// Desk-scale variant of [`Self::paper`]: m=4, 100 epochs of 100 batches,
    /// batch 500 -> 2000.
    pub fn desk() -> Self {
        Self {
            m: 4,
            epochs: 100,
            batches_per_epoch: 100,
            batch_start: 500,
            batch_end: 2000,
            ..Self::paper()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if !(1..=10).contains(&self.m) {
            return fail("m", format!("must be in 1..=10, got {}", self.m));
        }
        if self.conditioning == Conditioning::QamDemapperOnly && self.m % 2 != 0 {
            return fail("m", "square QAM baseline needs an even m".into());
        }
        if self.epochs == 0 {
            return fail("epochs", "must be positive".into());
        }
        if self.batches_per_epoch == 0 {
            return fail("batches_per_epoch", "must be positive".into());
        }
        self.bps.validate().or_else(|e| fail("bps", e.to_string()))?;
        if self.phase_recovery == PhaseRecovery::Bps && self.batch_start < self.bps.window_size {
            return fail(
                "batch_start",
                format!("must be at least the BPS window ({})", self.bps.window_size),
            );
        }
        if self.batch_start == 0 {
            return fail("batch_start", "must be positive".into());
        }
        if self.batch_end < self.batch_start {
            return fail("batch_end", "must not be below batch_start".into());
        }
        let [s0, s1] = self.snr_db_range;
        if !(s0.is_finite() && s1.is_finite() && s0 <= s1) {
            return fail("snr_db_range", format!("[{s0}, {s1}] is not an ordered range"));
        }
        let [l0, l1] = self.linewidth_range_hz;
        if !(l0 >= 0.0 && l1.is_finite() && l0 <= l1) {
            return fail("linewidth_range_hz", format!("[{l0}, {l1}] is not an ordered non-negative range"));
        }
        if !(self.symbol_rate > 0.0 && self.symbol_rate.is_finite()) {
            return fail("symbol_rate", "must be positive".into());
        }
        if !(self.temp_end > 0.0 && self.temp_end <= self.temp_start && self.temp_start.is_finite()) {
            return fail("temp_end", "need 0 < temp_end <= temp_start".into());
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate", "must be positive".into());
        }
        Ok(())
    }

    pub fn sigma_n_range(&self) -> (f64, f64) {
        (snr_db_to_sigma_n(self.snr_db_range[1]), snr_db_to_sigma_n(self.snr_db_range[0]))
    }

    pub fn sigma_phi_range(&self) -> Result<(f64, f64)> {
        Ok((
            linewidth_to_sigma_phi(self.linewidth_range_hz[0], self.symbol_rate)?,
            linewidth_to_sigma_phi(self.linewidth_range_hz[1], self.symbol_rate)?,
        ))
    }

    pub fn scaling(&self) -> Result<ConditionScaling> {
        let (n0, n1) = self.sigma_n_range();
        let (p0, p1) = self.sigma_phi_range()?;
        Ok(ConditionScaling {
            sigma_n_min: n0,
            sigma_n_max: n1,
            sigma_phi_min: p0,
            sigma_phi_max: p1,
        })
    }

    /// BPS grid actually used. The square-QAM baseline searches one period
    /// of its four-fold symmetry.
    pub fn effective_bps(&self) -> BpsConfig {
        effective_bps(self.bps, self.conditioning)
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            ..AdamHyper::default()
        }
    }

    /// Flat `key=value` view, stable order, floats in round-trip form.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let f = |v: f64| format!("{v:?}");
        vec![
            ("m".into(), self.m.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("batches_per_epoch".into(), self.batches_per_epoch.to_string()),
            ("batch_start".into(), self.batch_start.to_string()),
            ("batch_end".into(), self.batch_end.to_string()),
            ("snr_db_min".into(), f(self.snr_db_range[0])),
            ("snr_db_max".into(), f(self.snr_db_range[1])),
            ("linewidth_hz_min".into(), f(self.linewidth_range_hz[0])),
            ("linewidth_hz_max".into(), f(self.linewidth_range_hz[1])),
            ("symbol_rate".into(), f(self.symbol_rate)),
            ("bps.num_test_angles".into(), self.bps.num_test_angles.to_string()),
            ("bps.window_size".into(), self.bps.window_size.to_string()),
            ("bps.angle_min".into(), f(self.bps.angle_min)),
            ("bps.angle_max".into(), f(self.bps.angle_max)),
            ("temp_start".into(), f(self.temp_start)),
            ("temp_end".into(), f(self.temp_end)),
            ("seed".into(), self.seed.to_string()),
            ("conditioning".into(), self.conditioning.name().into()),
            (
                "sampling".into(),
                match self.sampling {
                    Sampling::SigmaUniform => "sigma-uniform",
                    Sampling::DbUniform => "db-uniform",
                }
                .into(),
            ),
            (
                "phase_recovery".into(),
                match self.phase_recovery {
                    PhaseRecovery::Bps => "bps",
                    PhaseRecovery::Genie => "genie",
                }
                .into(),
            ),
            ("learning_rate".into(), f(self.learning_rate)),
        ]
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        fn get<'a>(kv: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
            kv.get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::Checkpoint(format!("missing config key `{key}`")))
        }
        fn num<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
            get(kv, key)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad value for config key `{key}`")))
        }
        let cfg = Self {
            m: num(kv, "m")?,
            epochs: num(kv, "epochs")?,
            batches_per_epoch: num(kv, "batches_per_epoch")?,
            batch_start: num(kv, "batch_start")?,
            batch_end: num(kv, "batch_end")?,
            snr_db_range: [num(kv, "snr_db_min")?, num(kv, "snr_db_max")?],
            linewidth_range_hz: [num(kv, "linewidth_hz_min")?, num(kv, "linewidth_hz_max")?],
            symbol_rate: num(kv, "symbol_rate")?,
            bps: BpsConfig {
                num_test_angles: num(kv, "bps.num_test_angles")?,
                window_size: num(kv, "bps.window_size")?,
                angle_min: num(kv, "bps.angle_min")?,
                angle_max: num(kv, "bps.angle_max")?,
                ..BpsConfig::default()
            },
            temp_start: num(kv, "temp_start")?,
            temp_end: num(kv, "temp_end")?,
            seed: num(kv, "seed")?,
            conditioning: Conditioning::from_name(get(kv, "conditioning")?)?,
            sampling: match get(kv, "sampling")? {
                "sigma-uniform" => Sampling::SigmaUniform,
                "db-uniform" => Sampling::DbUniform,
                other => return Err(Error::Checkpoint(format!("unknown sampling `{other}`"))),
            },
            phase_recovery: match get(kv, "phase_recovery")? {
                "bps" => PhaseRecovery::Bps,
                "genie" => PhaseRecovery::Genie,
                other => return Err(Error::Checkpoint(format!("unknown phase recovery `{other}`"))),
            },
            learning_rate: num(kv, "learning_rate")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn effective_bps(bps: BpsConfig, conditioning: Conditioning) -> BpsConfig {
    match conditioning {
        Conditioning::QamDemapperOnly => bps.with_symmetric_span(4),
        _ => bps,
    }
}

/// Batch size (linear, rounded, at least the BPS window) and soft-BPS
/// temperature (geometric) for an epoch.
pub fn schedule(epoch: usize, config: &TrainConfig) -> (usize, f64) {
    let frac = if config.epochs > 1 {
        epoch.min(config.epochs - 1) as f64 / (config.epochs - 1) as f64
    } else {
        0.0
    };
    let (b0, b1) = (config.batch_start as f64, config.batch_end as f64);
    let batch = (b0 + (b1 - b0) * frac).round() as usize;
    let batch = if config.phase_recovery == PhaseRecovery::Bps {
        batch.max(config.bps.window_size)
    } else {
        batch
    };
    let temperature = if epoch == 0 {
        config.temp_start
    } else if epoch + 1 >= config.epochs {
        config.temp_end
    } else {
        config.temp_start * (config.temp_end / config.temp_start).powf(frac)
    };
    (batch, temperature)
}

pub fn sample_channel_params<R: Rng + ?Sized>(config: &TrainConfig, rng: &mut R) -> Result<ChannelParams> {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let lerp = |lo: f64, hi: f64, u: f64| lo + (hi - lo) * u;
    match config.sampling {
        Sampling::SigmaUniform => {
            let (n0, n1) = config.sigma_n_range();
            let (p0, p1) = config.sigma_phi_range()?;
            ChannelParams::new(lerp(n0, n1, u1), lerp(p0, p1, u2))
        }
        Sampling::DbUniform => {
            let snr = lerp(config.snr_db_range[0], config.snr_db_range[1], u1);
            let lw = lerp(config.linewidth_range_hz[0], config.linewidth_range_hz[1], u2);
            ChannelParams::from_physical(snr, lw, config.symbol_rate)
        }
    }
}

/// Random draws of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInput {
    pub params: ChannelParams,
    /// Row-major `B x m`.
    pub bits: Vec<u8>,
    pub impairments: Impairments,
}

impl BatchInput {
    pub fn draw(config: &TrainConfig, batch_size: usize, rng: &mut RngStreams) -> Result<Self> {
        let params = sample_channel_params(config, rng.get(Stream::Params))?;
        let bits_rng = rng.get(Stream::Bits);
        let bits = (0..batch_size * config.m).map(|_| bits_rng.random::<bool>() as u8).collect();
        let impairments = Impairments::draw(batch_size, params, StartPhase::Random, rng);
        Ok(Self {
            params,
            bits,
            impairments,
        })
    }

    pub fn len(&self) -> usize {
        self.impairments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.impairments.is_empty()
    }

    pub fn indices(&self, m: usize) -> Vec<usize> {
        self.bits.chunks_exact(m).map(crate::shaping::bits_to_index).collect()
    }
}

/// Recorded forward pass of one batch.
#[derive(Debug)]
pub struct BatchGraph {
    pub tape: Tape,
    pub tx_vars: Option<NetVars>,
    pub rx_vars: NetVars,
    pub loss: Var,
    pub llrs: Var,
    pub edge: Vec<bool>,
}

impl BatchGraph {
    pub fn loss_nats(&self) -> f64 {
        self.tape.value(self.loss).data()[0]
    }
}

/// Records Tx-NN -> mapping -> channel -> phase recovery -> Rx-NN -> BCE for
/// one batch. The constellation used by the soft BPS is the one generated
/// for this batch's channel parameters.
pub fn build_batch_graph(
    model: &ShapingModel,
    input: &BatchInput,
    bps: &BpsConfig,
    recovery: PhaseRecovery,
    temperature: f64,
) -> Result<BatchGraph> {
    let m = model.bits();
    let b = input.len();
    if input.bits.len() != b * m {
        return Err(Error::Shape(format!("{} bits for {b} symbols of {m} bits", input.bits.len())));
    }
    let mut tape = Tape::new();
    let (points, tx_vars) = match model.conditioning {
        Conditioning::QamDemapperOnly => {
            let q = crate::constellation::Constellation::square_qam(m)?;
            (tape.constant_complex(q.points()), None)
        }
        _ => {
            let vars = model.tx.net().attach(&mut tape);
            let p = model.tx.points_on(&mut tape, &vars, model.tx_condition(input.params))?;
            (p, Some(vars))
        }
    };
    let x = tape.gather(points, input.indices(m))?;
    let noise = tape.constant_complex(&input.impairments.noise);
    let noisy = tape.add(x, noise)?;
    let z = tape.rotate(noisy, &input.impairments.phase)?;

    let (x_hat, edge) = match recovery {
        PhaseRecovery::Genie => {
            let back: Vec<f64> = input.impairments.phase.iter().map(|p| -p).collect();
            (tape.rotate(z, &back)?, vec![false; b])
        }
        PhaseRecovery::Bps => {
            let cfg = bps.soft(temperature);
            let edge = edge_mask(b, cfg.window_size);
            let mut x_hat = tape.soft_bps(z, points, &cfg)?;
            if model.conditioning == Conditioning::QamDemapperOnly {
                let k = genie_quadrant(&tape.complex_value(x_hat), &tape.complex_value(x), &edge);
                let turn = k as f64 * std::f64::consts::FRAC_PI_2;
                x_hat = tape.rotate(x_hat, &vec![turn; b])?;
            }
            (x_hat, edge)
        }
    };

    let rx_vars = model.rx.net().attach(&mut tape);
    let llrs = model.rx.llrs_on(&mut tape, &rx_vars, x_hat, model.rx_condition(input.params))?;
    let loss = tape.bce_with_logits(llrs, &input.bits, &edge)?;
    Ok(BatchGraph {
        tape,
        tx_vars,
        rx_vars,
        loss,
        llrs,
        edge,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub batch_size: usize,
    pub temperature: f64,
    /// Mean BCE per bit, in bits.
    pub bce_bits: f64,
    /// m minus the per-symbol BCE, in bits.
    pub bmi_bits: f64,
}

impl EpochMetrics {
    pub const HEADER: &'static str = "epoch batch_size temperature bce_bits bmi_bits";

    pub fn row(&self) -> String {
        format!(
            "{} {} {:.6e} {:.6} {:.6}",
            self.epoch, self.batch_size, self.temperature, self.bce_bits, self.bmi_bits
        )
    }
}

#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    model: ShapingModel,
    tx_adam: AdamState,
    rx_adam: AdamState,
    epoch: usize,
    rng: RngStreams,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStreams::new(config.seed);
        let tx = TxNet::init(config.m, rng.get(Stream::Init))?;
        let rx = RxNet::init(config.m, rng.get(Stream::Init))?;
        let model = ShapingModel {
            tx,
            rx,
            scaling: config.scaling()?,
            conditioning: config.conditioning,
        };
        let tx_adam = AdamState::new(config.adam(), &model.tx.net().param_sizes());
        let rx_adam = AdamState::new(config.adam(), &model.rx.net().param_sizes());
        Ok(Self {
            config,
            model,
            tx_adam,
            rx_adam,
            epoch: 0,
            rng,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &ShapingModel {
        &self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// One optimizer step; returns the batch BCE in nats per bit.
    pub fn train_batch(&mut self, batch_size: usize, temperature: f64, batch: usize) -> Result<f64> {
        let input = BatchInput::draw(&self.config, batch_size, &mut self.rng)?;
        let bps = self.config.effective_bps();
        let mut graph = build_batch_graph(&self.model, &input, &bps, self.config.phase_recovery, temperature)?;
        let loss = graph.loss_nats();
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                epoch: self.epoch,
                batch,
                sigma_n: input.params.sigma_n,
                sigma_phi: input.params.sigma_phi,
            });
        }
        let grads = graph.tape.backward(graph.loss)?;
        if let Some(tx_vars) = &graph.tx_vars {
            let g = self.model.tx.net().gradients(&grads, tx_vars);
            check_finite(&g, self.epoch, batch, input.params)?;
            self.tx_adam.step(&mut self.model.tx.net_mut().params_mut(), &g)?;
        }
        let g = self.model.rx.net().gradients(&grads, &graph.rx_vars);
        check_finite(&g, self.epoch, batch, input.params)?;
        self.rx_adam.step(&mut self.model.rx.net_mut().params_mut(), &g)?;
        Ok(loss)
    }

    pub fn train_epoch(&mut self) -> Result<EpochMetrics> {
        if self.is_finished() {
            return Err(Error::InvalidArgument(format!(
                "training already finished after {} epochs",
                self.config.epochs
            )));
        }
        let (batch_size, temperature) = schedule(self.epoch, &self.config);
        let mut total = 0.0;
        for b in 0..self.config.batches_per_epoch {
            total += self.train_batch(batch_size, temperature, b)?;
        }
        let bce_bits = total / self.config.batches_per_epoch as f64 / LN_2;
        let metrics = EpochMetrics {
            epoch: self.epoch,
            batch_size,
            temperature,
            bce_bits,
            bmi_bits: self.config.m as f64 * (1.0 - bce_bits),
        };
        self.epoch += 1;
        Ok(metrics)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            model: self.model.clone(),
            tx_adam: self.tx_adam.clone(),
            rx_adam: self.rx_adam.clone(),
            epoch: self.epoch,
            rng: self.rng.state(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.config.validate()?;
        Ok(Self {
            rng: RngStreams::restore(&ck.rng),
            config: ck.config,
            model: ck.model,
            tx_adam: ck.tx_adam,
            rx_adam: ck.rx_adam,
            epoch: ck.epoch,
        })
    }

    /// Extends the run to `epochs` total epochs (schedule recomputed).
    pub fn set_epochs(&mut self, epochs: usize) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.epochs = epochs;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }
}

fn check_finite(grads: &[Vec<f64>], epoch: usize, batch: usize, p: ChannelParams) -> Result<()> {
    if grads.iter().flatten().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            epoch,
            batch,
            sigma_n: p.sigma_n,
            sigma_phi: p.sigma_phi,
        })
    }
}
