//! The `apsnet` command-line front end.
//!
//! Every subcommand takes the same flags. The config file is optional;
//! missing keys take their defaults and unknown keys are an error. The
//! effective config, after `--seed` and `--precision` are applied, is
//! written to `<out>/config.toml` next to the CSVs.
//!
//! Exit codes: 0 success, 1 assertion failure or runtime error, 2 usage or
//! config error.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Precision;
use commands::Outcome;
use config::*;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "apsnet", version, about = "Adaptive polyphase sampling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config for the subcommand.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if needed.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Replaces every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Network arithmetic width.
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        _ => Err(format!("expected f32 or f64, got `{s}`")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classification consistency under random shifts, per downsample kind.
    Invariance(Common),
    /// Spectral identities on the DFT grid.
    Oracle(Common),
    /// Train one network; writes the epoch log, parameters and test summary.
    Train(Common),
    /// Shift-compensated feature stability at named taps.
    Stability(Common),
    /// Consistency on erased and flipped images.
    Ood(Common),
    /// Consistency of APS under each component selection criterion.
    Criteria(Common),
    /// Consistency with odd input sizes.
    Oddsize(Common),
    /// Forward-pass timing of two downsample kinds.
    Bench(Common),
}

/// Applies the shared flags to a config.
pub trait Overrides {
    fn reseed(&mut self, seed: u64);
    fn set_precision(&mut self, p: Precision);
}

macro_rules! net_overrides {
    ($($t:ty),*) => {$(
        impl Overrides for $t {
            fn reseed(&mut self, seed: u64) {
                self.network.seed = seed;
                self.dataset.seed = seed;
            }
            fn set_precision(&mut self, p: Precision) {
                self.network.precision = p;
            }
        }
    )*};
}

net_overrides!(InvarianceConfig, StabilityConfig, OodConfig, CriteriaConfig, OddsizeConfig);

impl Overrides for TrainCmdConfig {
    fn reseed(&mut self, seed: u64) {
        self.network.seed = seed;
        self.dataset.seed = seed;
        self.train.seed = seed;
    }
    fn set_precision(&mut self, p: Precision) {
        self.network.precision = p;
    }
}

impl Overrides for BenchConfig {
    fn reseed(&mut self, seed: u64) {
        self.network.seed = seed;
    }
    fn set_precision(&mut self, p: Precision) {
        self.network.precision = p;
    }
}

/// Oracles always run in f64; `--precision` is accepted and ignored.
impl Overrides for OracleConfig {
    fn reseed(&mut self, seed: u64) {
        self.seed = seed;
    }
    fn set_precision(&mut self, _: Precision) {}
}

/// Reads the config (or the defaults), applies the flags and records the
/// result in the output directory.
pub fn load_config<C>(common: &Common) -> Result<C>
where
    C: Default + Serialize + DeserializeOwned + Overrides,
{
    let mut cfg: C = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => C::default(),
    };
    if let Some(seed) = common.seed {
        cfg.reseed(seed);
    }
    if let Some(p) = common.precision {
        cfg.set_precision(p);
    }
    fs::create_dir_all(&common.out)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", common.out.display())))?;
    let text = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(common.out.join("config.toml"), text)
        .map_err(|e| Error::Config(format!("cannot write to {}: {e}", common.out.display())))?;
    Ok(cfg)
}

macro_rules! by_precision {
    ($p:expr, $f:ident, $cfg:expr, $out:expr) => {
        match $p {
            Precision::F32 => commands::$f::<f32>($cfg, $out),
            Precision::F64 => commands::$f::<f64>($cfg, $out),
        }
    };
}

fn dispatch(command: &Command) -> Result<Outcome> {
    match command {
        Command::Invariance(c) => {
            let cfg: InvarianceConfig = load_config(c)?;
            by_precision!(cfg.network.precision, invariance, &cfg, &c.out)
        }
        Command::Oracle(c) => {
            let cfg: OracleConfig = load_config(c)?;
            commands::oracle(&cfg, &c.out)
        }
        Command::Train(c) => {
            let cfg: TrainCmdConfig = load_config(c)?;
            by_precision!(cfg.network.precision, train_cmd, &cfg, &c.out)
        }
        Command::Stability(c) => {
            let cfg: StabilityConfig = load_config(c)?;
            by_precision!(cfg.network.precision, stability, &cfg, &c.out)
        }
        Command::Ood(c) => {
            let cfg: OodConfig = load_config(c)?;
            by_precision!(cfg.network.precision, ood, &cfg, &c.out)
        }
        Command::Criteria(c) => {
            let cfg: CriteriaConfig = load_config(c)?;
            by_precision!(cfg.network.precision, criteria, &cfg, &c.out)
        }
        Command::Oddsize(c) => {
            let cfg: OddsizeConfig = load_config(c)?;
            by_precision!(cfg.network.precision, oddsize, &cfg, &c.out)
        }
        Command::Bench(c) => {
            let cfg: BenchConfig = load_config(c)?;
            by_precision!(cfg.network.precision, bench, &cfg, &c.out)
        }
    }
}

/// Exit code for an error: config and argument problems are usage errors,
/// anything that goes wrong while running is a failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } | Error::Io(_) | Error::Csv(_) => EXIT_FAILED,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Reports go to stdout, errors to stderr.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            if outcome.passed {
                EXIT_OK
            } else {
                eprintln!("assertion failed");
                EXIT_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
