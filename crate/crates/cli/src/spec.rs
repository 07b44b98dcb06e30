//! Experiment specification: command-line flags merged over an optional
//! key=value config file, validated before dispatch.

use std::collections::HashMap;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Contraction-identity suite on the model form and transported forms
    Identities,
    /// Diamond-operator structure: kernel, ranks, pairing identity
    Decompose,
    /// Principal-symbol sweep: nullities, gauge kernel, coercivity
    Symbol,
    /// Run the gradient flow and record the energy trace
    Flow,
    /// First-variation check against the energy gradient formula
    Variation,
    /// Soliton residuals for canonical and perturbed candidates
    Soliton,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Deterministic experiment driver for the Spin(7)-structure engine.
#[derive(Parser, Debug)]
#[command(name = "spin7", version, about)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,

    /// Seed for the counter-based generator (ChaCha8)
    #[arg(long)]
    pub seed: Option<u64>,

    /// Points per active dimension
    #[arg(long = "grid-n")]
    pub grid_n: Option<usize>,

    /// Number of active coordinates (1 or 2)
    #[arg(long = "active-dims")]
    pub active_dims: Option<usize>,

    /// Time step; 0 selects the stability heuristic
    #[arg(long)]
    pub dt: Option<f64>,

    /// Number of flow steps
    #[arg(long)]
    pub steps: Option<usize>,

    /// Coefficient of -Ric in the flow family
    #[arg(long = "coeff-a")]
    pub coeff_a: Option<f64>,

    /// Coefficient of the torsion-vector Lie derivative
    #[arg(long = "coeff-b")]
    pub coeff_b: Option<f64>,

    /// Coefficient of Div T
    #[arg(long = "coeff-c")]
    pub coeff_c: Option<f64>,

    /// Use the gauge-fixed right-hand side (background = initial data)
    #[arg(long)]
    pub deturck: bool,

    /// Drop the lower-order torsion-squared terms
    #[arg(long = "no-lot")]
    pub no_lot: bool,

    /// Perturbation amplitude of the initial structure
    #[arg(long)]
    pub eps: Option<f64>,

    /// Sample count (covectors, pairs, or directions, by command)
    #[arg(long = "xi-samples")]
    pub xi_samples: Option<usize>,

    /// Main tolerance override (per-command default otherwise)
    #[arg(long)]
    pub tol: Option<f64>,

    /// Report path (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Report format
    #[arg(long, value_enum)]
    pub format: Option<Format>,

    /// key=value config file providing defaults for the flags above
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Fully resolved experiment parameters.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub command: Command,
    pub seed: u64,
    pub grid_n: usize,
    pub active_dims: usize,
    pub dt: f64,
    pub steps: usize,
    pub coeff_a: f64,
    pub coeff_b: f64,
    pub coeff_c: f64,
    pub deturck: bool,
    pub include_lot: bool,
    pub eps: f64,
    pub modes: usize,
    pub xi_samples: usize,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Format,
}

pub fn usage_error(msg: String) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidInput, msg)
}

fn parse_config(path: &PathBuf) -> Result<HashMap<String, String>, std::io::Error> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage_error(format!("config line {}: expected key=value", lineno + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn get<T: std::str::FromStr>(
    cli: Option<T>,
    cfg: &HashMap<String, String>,
    key: &str,
    default: T,
) -> Result<T, std::io::Error> {
    if let Some(v) = cli {
        return Ok(v);
    }
    match cfg.get(key) {
        Some(raw) => raw
            .parse()
            .map_err(|_| usage_error(format!("config key '{key}': cannot parse '{raw}'"))),
        None => Ok(default),
    }
}

fn get_flag(
    cli: bool,
    cfg: &HashMap<String, String>,
    key: &str,
) -> Result<bool, std::io::Error> {
    if cli {
        return Ok(true);
    }
    match cfg.get(key) {
        Some(raw) => raw
            .parse()
            .map_err(|_| usage_error(format!("config key '{key}': expected true/false"))),
        None => Ok(false),
    }
}

impl Cli {
    pub fn resolve(self) -> Result<ExperimentSpec, std::io::Error> {
        let cfg = match &self.config {
            Some(path) => parse_config(path)?,
            None => HashMap::new(),
        };
        let spec = ExperimentSpec {
            command: self.command,
            seed: get(self.seed, &cfg, "seed", 0)?,
            grid_n: get(self.grid_n, &cfg, "grid-n", 64)?,
            active_dims: get(self.active_dims, &cfg, "active-dims", 1)?,
            dt: get(self.dt, &cfg, "dt", 0.0)?,
            steps: get(self.steps, &cfg, "steps", 200)?,
            coeff_a: get(self.coeff_a, &cfg, "coeff-a", 1.0)?,
            coeff_b: get(self.coeff_b, &cfg, "coeff-b", 2.0)?,
            coeff_c: get(self.coeff_c, &cfg, "coeff-c", 2.0)?,
            deturck: get_flag(self.deturck, &cfg, "deturck")?,
            include_lot: !get_flag(self.no_lot, &cfg, "no-lot")?,
            eps: get(self.eps, &cfg, "eps", 1e-2)?,
            modes: get(None, &cfg, "modes", 2)?,
            xi_samples: get(
                self.xi_samples,
                &cfg,
                "xi-samples",
                default_samples(self.command),
            )?,
            tol: match self.tol {
                Some(t) => Some(t),
                None => cfg
                    .get("tol")
                    .map(|raw| {
                        raw.parse()
                            .map_err(|_| usage_error(format!("config key 'tol': bad value '{raw}'")))
                    })
                    .transpose()?,
            },
            out: self.out.or_else(|| cfg.get("out").map(PathBuf::from)),
            format: match self.format {
                Some(f) => f,
                None => match cfg.get("format").map(|s| s.as_str()) {
                    Some("csv") => Format::Csv,
                    Some("json") | None => Format::Json,
                    Some(other) => {
                        return Err(usage_error(format!("config format '{other}' unknown")))
                    }
                },
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn default_samples(command: Command) -> usize {
    match command {
        Command::Symbol => 1000,
        Command::Decompose => 100,
        Command::Variation => 10,
        _ => 20,
    }
}

impl ExperimentSpec {
    fn validate(&self) -> Result<(), std::io::Error> {
        if !(1..=2).contains(&self.active_dims) {
            return Err(usage_error(format!(
                "active-dims must be 1 or 2, got {}",
                self.active_dims
            )));
        }
        if self.grid_n < 4 {
            return Err(usage_error(format!("grid-n too small: {}", self.grid_n)));
        }
        if self.dt < 0.0 {
            return Err(usage_error("dt must be nonnegative".into()));
        }
        if self.eps < 0.0 {
            return Err(usage_error("eps must be nonnegative".into()));
        }
        if self.xi_samples == 0 {
            return Err(usage_error("xi-samples must be positive".into()));
        }
        if let Some(t) = self.tol {
            if !(t > 0.0) {
                return Err(usage_error("tol must be positive".into()));
            }
        }
        Ok(())
    }
}
