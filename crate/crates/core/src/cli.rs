//! Command-line front end. Exit codes: 0 success, 1 selftest failure,
//! 2 usage or configuration error, 3 numerical failure, 4 I/O error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::bps::BpsConfig;
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::evalsuite::{
    default_linewidth_grid, export_constellation_sweep, run_sweep, SweepSpec, System, DEFAULT_FRAME_LEN,
    DEFAULT_SYMBOLS,
};
use crate::selftest::{run_selftest, Fault};
use crate::shaping::Conditioning;
use crate::trainer::{save_checkpoint, EpochMetrics, PhaseRecovery, TrainConfig, Trainer};

/// Default output directory when `--out` is not given.
pub const OUT_DIR_ENV: &str = "PGCS_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "pgcs", version, about = "Parameterized constellation shaping for phase-noise channels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Parameterized,
    Robust,
    Qam,
}

impl From<Mode> for Conditioning {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Parameterized => Conditioning::Parameterized,
            Mode::Robust => Conditioning::Robust,
            Mode::Qam => Conditioning::QamDemapperOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    /// Gray QAM with the checkpoint's neural demapper.
    Qam,
    /// Gray QAM with the exact Gaussian demapper.
    QamExact,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train mapper and demapper end to end.
    Train {
        /// TOML training configuration (defaults to the full-scale setup).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over an SNR x linewidth grid with the hard BPS.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// SNR values in dB, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![18.0])]
        snr: Vec<f64>,
        /// Linewidths in Hz, comma separated (default: ten points 50-600 kHz).
        #[arg(long, value_delimiter = ',')]
        linewidth: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_SYMBOLS)]
        symbols: usize,
        #[arg(long, default_value_t = DEFAULT_FRAME_LEN)]
        frame_len: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// SNR offset applied to the conditioning of both ends.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        offset_db: f64,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        /// Expected bits per symbol; rejects a checkpoint with another m.
        #[arg(long)]
        m: Option<usize>,
        /// Unwrap hard BPS decisions on restricted search spans.
        #[arg(long)]
        unwrap: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the transmit constellation for every grid point.
    ExportConstellation {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        snr: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        linewidth: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run oracle-equivalence and gradient checks.
    Selftest {
        #[arg(long)]
        inject_fault: Option<String>,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let command_line: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, &command_line) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, command_line: &[String]) -> Result<i32> {
    match command {
        Command::Train {
            config,
            epochs,
            m,
            mode,
            seed,
            resume,
            out,
        } => train(config, epochs, m, mode, seed, resume, out, command_line).map(|_| 0),
        Command::Eval {
            checkpoint,
            snr,
            linewidth,
            symbols,
            frame_len,
            seed,
            offset_db,
            baseline,
            m,
            unwrap,
            jobs,
            out,
        } => {
            let mut spec = SweepSpec::new(snr, linewidth.unwrap_or_else(default_linewidth_grid), BpsConfig::default());
            spec.symbols_per_point = symbols;
            spec.frame_len = frame_len;
            spec.seed = seed;
            spec.offset_db = offset_db;
            spec.unwrap = unwrap;
            eval(&checkpoint, spec, baseline, m, jobs, out, command_line).map(|_| 0)
        }
        Command::ExportConstellation {
            checkpoint,
            snr,
            linewidth,
            out,
        } => export(&checkpoint, &snr, &linewidth, out, command_line).map(|_| 0),
        Command::Selftest { inject_fault } => {
            let fault = match inject_fault.as_deref() {
                None => None,
                Some(name) => Some(
                    Fault::from_name(name)
                        .ok_or_else(|| Error::InvalidArgument(format!("unknown fault `{name}`")))?,
                ),
            };
            Ok(selftest(fault))
        }
    }
}

fn out_dir(out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("pgcs-out"))
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, serde::Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub input_digest: String,
    pub seed: u64,
    pub version: String,
    pub started: f64,
    pub finished: f64,
    pub outputs: Vec<String>,
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    fn new(command: &[String], input: &[u8], seed: u64) -> Self {
        Self {
            command: command.to_vec(),
            input_digest: sha256_hex(input),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: now(),
            finished: 0.0,
            outputs: Vec::new(),
            metadata: serde_json::Map::new(),
        }
    }

    fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished = now();
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn train(
    config: Option<PathBuf>,
    epochs: Option<usize>,
    m: Option<usize>,
    mode: Option<Mode>,
    seed: Option<u64>,
    resume: Option<PathBuf>,
    out: Option<PathBuf>,
    command_line: &[String],
) -> Result<()> {
    let (mut trainer, input) = if let Some(path) = resume {
        if config.is_some() || m.is_some() || mode.is_some() || seed.is_some() {
            return Err(Error::InvalidArgument(
                "--resume continues a run; only --epochs may be changed".into(),
            ));
        }
        let bytes = fs::read(&path)?;
        let ck = crate::trainer::Checkpoint::from_bytes(&bytes)?;
        (Trainer::from_checkpoint(ck)?, bytes)
    } else {
        let (mut cfg, input) = match config {
            Some(path) => {
                let text = fs::read_to_string(&path)?;
                let cfg: TrainConfig = toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
                (cfg, text.into_bytes())
            }
            None => (TrainConfig::paper(), Vec::new()),
        };
        if let Some(m) = m {
            cfg.m = m;
        }
        if let Some(mode) = mode {
            cfg.conditioning = mode.into();
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(e) = epochs {
            cfg.epochs = e;
        }
        (Trainer::new(cfg)?, input)
    };
    if let Some(e) = epochs {
        trainer.set_epochs(e)?;
    }
    let dir = out_dir(out);
    fs::create_dir_all(&dir)?;
    let mut manifest = RunManifest::new(command_line, &input, trainer.config().seed);

    let metrics_path = dir.join("metrics.txt");
    let fresh = trainer.epoch() == 0 || !metrics_path.exists();
    let mut metrics = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&metrics_path)?;
    if fresh {
        writeln!(metrics, "{}", EpochMetrics::HEADER)?;
    }
    let ck_path = dir.join("checkpoint.bin");
    while !trainer.is_finished() {
        let row = match trainer.train_epoch() {
            Ok(r) => r,
            Err(e) => {
                // keep the last good state for inspection
                save_checkpoint(&trainer.checkpoint(), &ck_path)?;
                return Err(e);
            }
        };
        writeln!(metrics, "{}", row.row())?;
        println!("{}", row.row());
    }
    metrics.flush()?;
    save_checkpoint(&trainer.checkpoint(), &ck_path)?;

    let cfg = trainer.config();
    manifest.outputs = vec![path_string(&ck_path), path_string(&metrics_path)];
    manifest.metadata.insert("conditioning".into(), cfg.conditioning.name().into());
    manifest.metadata.insert("m".into(), cfg.m.into());
    manifest.metadata.insert("epochs".into(), cfg.epochs.into());
    manifest.metadata.insert(
        "config".into(),
        cfg.to_kv().into_iter().map(|(k, v)| (k, serde_json::Value::from(v))).collect(),
    );
    manifest.finish(&dir)
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn eval(
    checkpoint: &Path,
    mut spec: SweepSpec,
    baseline: Option<Baseline>,
    m: Option<usize>,
    jobs: usize,
    out: Option<PathBuf>,
    command_line: &[String],
) -> Result<()> {
    let bytes = fs::read(checkpoint)?;
    let ck = crate::trainer::Checkpoint::from_bytes(&bytes)?;
    if let Some(m) = m {
        ck.expect_bits(m)?;
    }
    spec.bps = BpsConfig {
        num_test_angles: ck.config.bps.num_test_angles,
        window_size: ck.config.bps.window_size,
        angle_min: ck.config.bps.angle_min,
        angle_max: ck.config.bps.angle_max,
        ..BpsConfig::default()
    };
    spec.symbol_rate = ck.config.symbol_rate;
    spec.recovery = PhaseRecovery::Bps;

    let mut model = ck.model.clone();
    let qam;
    let system = match baseline {
        None => System::Model(&model),
        Some(Baseline::Qam) => {
            if model.conditioning != Conditioning::QamDemapperOnly {
                eprintln!("warning: checkpoint demapper was not trained on square QAM");
            }
            if model.bits() % 2 != 0 {
                return Err(Error::Validation(format!("square QAM needs an even m, checkpoint has {}", model.bits())));
            }
            model.conditioning = Conditioning::QamDemapperOnly;
            System::Model(&model)
        }
        Some(Baseline::QamExact) => {
            qam = Constellation::square_qam(model.bits())?;
            spec.bps = spec.bps.with_symmetric_span(4);
            System::ExactGaussian(&qam)
        }
    };

    let dir = out_dir(out);
    fs::create_dir_all(&dir)?;
    let mut manifest = RunManifest::new(command_line, &bytes, spec.seed);
    let result = run_sweep(system, &spec, jobs)?;
    let table = result.to_table();
    let table_path = dir.join("results.txt");
    fs::write(&table_path, &table)?;
    print!("{table}");

    let used_bps = match system {
        System::Model(m) => crate::trainer::effective_bps(spec.bps, m.conditioning),
        System::ExactGaussian(_) => spec.bps,
    };
    manifest.outputs = vec![path_string(&table_path)];
    let md = &mut manifest.metadata;
    md.insert("offset_db".into(), spec.offset_db.into());
    md.insert("symbols_per_point".into(), spec.symbols_per_point.into());
    md.insert("frame_len".into(), spec.frame_len.into());
    md.insert("edge_symbols_excluded_per_frame_side".into(), result.edge_excluded.into());
    md.insert("bps_angle_min".into(), used_bps.angle_min.into());
    md.insert("bps_angle_max".into(), used_bps.angle_max.into());
    md.insert("bps_test_angles".into(), used_bps.num_test_angles.into());
    md.insert("bps_window".into(), used_bps.window_size.into());
    md.insert("unwrap".into(), spec.unwrap.into());
    md.insert(
        "baseline".into(),
        match baseline {
            None => "none",
            Some(Baseline::Qam) => "qam",
            Some(Baseline::QamExact) => "qam-exact",
        }
        .into(),
    );
    md.insert(
        "raw_bmi".into(),
        result.rows.iter().map(|r| serde_json::Value::from(r.raw_bmi)).collect(),
    );
    manifest.finish(&dir)
}

fn export(checkpoint: &Path, snr: &[f64], linewidth: &[f64], out: Option<PathBuf>, command_line: &[String]) -> Result<()> {
    let bytes = fs::read(checkpoint)?;
    let ck = crate::trainer::Checkpoint::from_bytes(&bytes)?;
    let dir = out_dir(out);
    let mut manifest = RunManifest::new(command_line, &bytes, ck.config.seed);
    let files = export_constellation_sweep(&ck.model, snr, linewidth, ck.config.symbol_rate, &dir)?;
    for f in &files {
        println!("{}", f.display());
    }
    manifest.outputs = files.iter().map(|p| path_string(p)).collect();
    manifest.metadata.insert("conditioning".into(), ck.model.conditioning.name().into());
    manifest.finish(&dir)
}

fn selftest(fault: Option<Fault>) -> i32 {
    let started = std::time::Instant::now();
    let outcomes = run_selftest(fault);
    let mut failed = Vec::new();
    for o in &outcomes {
        println!(
            "{:<14} {} {:>8.2}s  {}",
            o.name,
            if o.passed { "PASS" } else { "FAIL" },
            o.elapsed.as_secs_f64(),
            o.detail
        );
        if !o.passed {
            failed.push(o.name);
        }
    }
    let total = started.elapsed().as_secs_f64();
    if total > 300.0 {
        eprintln!("warning: selftest took {total:.0}s, above the 5 minute budget");
    }
    if failed.is_empty() {
        println!("all {} checks passed in {total:.2}s", outcomes.len());
        0
    } else {
        println!("failed: {}", failed.join(", "));
        1
    }
}
