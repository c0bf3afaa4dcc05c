//! Benchmark systems and the evaluation sweeps built on them.
//!
//! Systems are looked up by name and configured from JSON documents whose
//! fields override the defaults one by one.

pub mod bump;
pub mod cartpole;
pub mod checks;
pub mod linear;
mod sweep;
pub mod toy;

pub use bump::{bump_psi, BumpConfig};
pub use cartpole::{cartpole_step, CartpoleConfig};
pub use linear::LinearConfig;
pub use sweep::{
    ordering_check, run_figure2, run_figure3, run_sweep, summarize, summary_path, write_rows_csv, write_summary_csv,
    Method, OrderingCheck, SweepOutcome, SweepRow, SweepSummary,
};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::alcoi::{AlcoiConfig, Experiment};
use crate::{Error, Result};

/// A named benchmark with its constants.
#[derive(Clone, Debug, PartialEq)]
pub enum Benchmark {
    Illustrative(BumpConfig),
    BumpOffset(BumpConfig),
    Cartpole(CartpoleConfig),
    ScalarLinear(LinearConfig),
    Linear2(LinearConfig),
}

pub const SYSTEM_NAMES: [&str; 5] = ["illustrative2d", "bump-offset", "cartpole", "scalar-linear", "linear2"];

/// Recursively overlays `overlay` onto `base`; non-object values replace.
/// A single-key object overlaid with disjoint keys is an enum variant switch
/// and is replaced outright.
pub fn merge_json(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) if b.len() == 1 && !o.keys().any(|k| b.contains_key(k)) => {
            *b = o.clone();
        }
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge_json(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn with_overrides<T: Serialize + DeserializeOwned>(defaults: T, overrides: Option<&Value>) -> Result<T> {
    match overrides {
        None => Ok(defaults),
        Some(o) => {
            let mut v = serde_json::to_value(defaults)?;
            merge_json(&mut v, o);
            Ok(serde_json::from_value(v)?)
        }
    }
}

impl Benchmark {
    pub fn from_name(name: &str, overrides: Option<&Value>) -> Result<Self> {
        Ok(match name {
            "illustrative2d" => Benchmark::Illustrative(with_overrides(BumpConfig::default(), overrides)?),
            "bump-offset" => Benchmark::BumpOffset(with_overrides(BumpConfig::default(), overrides)?),
            "cartpole" => Benchmark::Cartpole(with_overrides(CartpoleConfig::default(), overrides)?),
            "scalar-linear" => Benchmark::ScalarLinear(with_overrides(LinearConfig::default(), overrides)?),
            "linear2" => Benchmark::Linear2(with_overrides(LinearConfig::default(), overrides)?),
            other => return Err(Error::UnknownSystem(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Benchmark::Illustrative(_) => "illustrative2d",
            Benchmark::BumpOffset(_) => "bump-offset",
            Benchmark::Cartpole(_) => "cartpole",
            Benchmark::ScalarLinear(_) => "scalar-linear",
            Benchmark::Linear2(_) => "linear2",
        }
    }

    /// The experiment for one run; `seed` fixes the learner's initial guess.
    pub fn experiment(&self, seed: u64) -> Result<Experiment> {
        match self {
            Benchmark::Illustrative(c) => bump::bump_experiment(c, seed),
            Benchmark::BumpOffset(c) => bump::bump_offset_experiment(c, seed),
            Benchmark::Cartpole(c) => cartpole::cartpole_experiment(c, seed),
            Benchmark::ScalarLinear(c) => linear::scalar_linear_experiment(c, seed),
            Benchmark::Linear2(c) => linear::linear2_experiment(c, seed),
        }
    }

    /// Pipeline settings used for this benchmark unless overridden.
    pub fn default_alcoi_config(&self) -> AlcoiConfig {
        let base = AlcoiConfig::default();
        match self {
            Benchmark::Cartpole(_) => AlcoiConfig {
                hessian_mc: 1000,
                hessian_step: 0.015,
                eval_mc: 1000,
                ..base
            },
            _ => base,
        }
    }

    pub fn alcoi_config(&self, overrides: Option<&Value>) -> Result<AlcoiConfig> {
        let cfg = with_overrides(self.default_alcoi_config(), overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
