//! Benchmark scenarios and execution configurations.
//!
//! A scenario file is TOML with one `[[scenario]]` table per entry:
//!
//! ```toml
//! [[scenario]]
//! integrator = "pagani"
//! integrand = "f4"
//! dim = 8
//! g = 3              # regions per axis of the uniform split
//! repetitions = 100
//!
//! [[scenario]]
//! id = "mc-f5"
//! integrator = "mcubes"
//! integrand = "f5"
//! dim = 6
//! n = 1000000        # samples per iteration
//! ```

use std::fmt;
use std::str::FromStr;

use paracube::integrands::{lookup, Family};
use paracube::ExecConfig;
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_REPETITIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Pagani,
    Mcubes,
}

impl fmt::Display for Integrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Integrator::Pagani => "pagani",
            Integrator::Mcubes => "mcubes",
        })
    }
}

/// What one scenario times.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Workload {
    /// One PAGANI kernel launch over the uniform split with `g` regions per axis.
    Regions { g: usize },
    /// One m-Cubes kernel launch with about `n` samples on the uniform grid.
    Samples { n: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub id: String,
    pub integrator: Integrator,
    pub integrand: String,
    pub dim: usize,
    pub workload: Workload,
    pub repetitions: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    id: Option<String>,
    integrator: Integrator,
    integrand: String,
    dim: usize,
    g: Option<usize>,
    n: Option<u64>,
    repetitions: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    scenario: Vec<RawScenario>,
}

impl RawScenario {
    fn validate(self) -> Result<Scenario, String> {
        lookup(&self.integrand, self.dim).map_err(|e| e.to_string())?;
        let workload = match (self.integrator, self.g, self.n) {
            (Integrator::Pagani, Some(g), None) if g >= 1 => Workload::Regions { g },
            (Integrator::Mcubes, None, Some(n)) => Workload::Samples { n },
            (Integrator::Pagani, ..) => return Err("pagani scenarios need `g` ≥ 1 and no `n`".into()),
            (Integrator::Mcubes, ..) => return Err("mcubes scenarios need `n` and no `g`".into()),
        };
        let repetitions = self.repetitions.unwrap_or(DEFAULT_REPETITIONS);
        if repetitions == 0 {
            return Err("repetitions must be at least 1".into());
        }
        let id = self.id.unwrap_or_else(|| {
            let knob = match workload {
                Workload::Regions { g } => format!("g{g}"),
                Workload::Samples { n } => format!("n{n}"),
            };
            format!("{}-{}-d{}-{knob}", self.integrator, self.integrand, self.dim)
        });
        Ok(Scenario {
            id,
            integrator: self.integrator,
            integrand: self.integrand,
            dim: self.dim,
            workload,
            repetitions,
        })
    }
}

/// Parses and validates a scenario file.
pub fn parse_scenarios(text: &str) -> Result<Vec<Scenario>, CliError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| CliError::Usage(format!("scenario file: {e}")))?;
    if file.scenario.is_empty() {
        return Err(CliError::Usage("scenario file lists no scenarios".into()));
    }
    let mut out = Vec::with_capacity(file.scenario.len());
    for (i, raw) in file.scenario.into_iter().enumerate() {
        let s = raw
            .validate()
            .map_err(|e| CliError::Usage(format!("scenario {}: {e}", i + 1)))?;
        if out.iter().any(|o: &Scenario| o.id == s.id) {
            return Err(CliError::Usage(format!("duplicate scenario id `{}`", s.id)));
        }
        out.push(s);
    }
    Ok(out)
}

/// The six benchmark families at d = 8 under the PAGANI kernel.
pub fn builtin_8d(g: usize, repetitions: usize) -> Vec<Scenario> {
    Family::ALL
        .iter()
        .map(|f| Scenario {
            id: format!("{f}-8d"),
            integrator: Integrator::Pagani,
            integrand: f.to_string(),
            dim: 8,
            workload: Workload::Regions { g },
            repetitions,
        })
        .collect()
}

/// Execution configuration of one side of a comparison, written as
/// comma-separated tokens: `workers=N`, `chunk=N`, `deterministic`,
/// `unordered`. Example: `workers=8,unordered`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecSpec(pub ExecConfig);

impl FromStr for ExecSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut cfg = ExecConfig::default();
        for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match token.split_once('=') {
                Some(("workers", v)) => cfg.workers = parse_positive(v, "workers")?,
                Some(("chunk", v)) => cfg.chunk = parse_positive(v, "chunk")?,
                None if token == "deterministic" => cfg.deterministic = true,
                None if token == "unordered" => cfg.deterministic = false,
                _ => return Err(format!("unknown configuration token `{token}`")),
            }
        }
        Ok(ExecSpec(cfg))
    }
}

fn parse_positive(v: &str, what: &str) -> Result<usize, String> {
    match v.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("{what} must be a positive integer, got `{v}`")),
    }
}
