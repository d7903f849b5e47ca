//! Flat `key = value` run configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiments::{ExperimentConfig, FluxName, ProfileName};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Run,
    Convergence,
    Check,
}

/// Per-check tolerance overrides; `None` keeps the built-in value.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tolerances {
    pub entropy: Option<f64>,
    pub bounds: Option<f64>,
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub experiment: ExperimentConfig,
    /// Resolution for `run` and `check`.
    pub n: usize,
    /// Entropy check stride in steps; 0 disables it.
    pub check_every: usize,
    pub seed: u64,
    pub verbosity: u8,
    pub tolerances: Tolerances,
}

impl RunConfig {
    pub fn out_dir(&self) -> &Path {
        &self.experiment.out_dir
    }
}

/// Values given on the command line. They take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub profile: Option<String>,
    pub n: Option<usize>,
    pub n_ref: Option<usize>,
    pub t_end: Option<f64>,
    pub flux: Option<String>,
    pub cfl: Option<f64>,
    pub out: Option<PathBuf>,
    pub check_every: Option<usize>,
    pub seed: Option<u64>,
}

const KNOWN_KEYS: &[&str] = &[
    "profile",
    "N",
    "N_list",
    "N_ref",
    "T",
    "flux",
    "model",
    "lf_alpha",
    "cfl_safety",
    "snapshot_times",
    "out",
    "check_every",
    "seed",
    "verbosity",
    "tol_entropy",
    "tol_bounds",
    "tol_mean",
];

/// Parses `key = value` lines. `#` starts a comment; values may be double-quoted.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        if map.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
        }
    }
    let unknown: Vec<&str> = map
        .keys()
        .map(String::as_str)
        .filter(|k| !KNOWN_KEYS.contains(k))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
    }
    Ok(map)
}

fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_list<V: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<V>>
where
    V::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

/// Reads the optional config file and applies CLI overrides; `OHFLUX_OUT` is the
/// output fallback when neither sets `out`.
pub fn parse_config(path: Option<&Path>, overrides: &Overrides, command: Command) -> Result<RunConfig> {
    let env_out = std::env::var_os("OHFLUX_OUT").map(PathBuf::from);
    parse_config_with_env(path, overrides, command, env_out)
}

pub fn parse_config_with_env(
    path: Option<&Path>,
    overrides: &Overrides,
    command: Command,
    env_out: Option<PathBuf>,
) -> Result<RunConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    resolve(&parse_key_values(&text)?, overrides, command, env_out)
}

fn resolve(
    file: &BTreeMap<String, String>,
    cli: &Overrides,
    command: Command,
    env_out: Option<PathBuf>,
) -> Result<RunConfig> {
    let get = |k: &str| file.get(k).map(String::as_str);

    let profile = match (cli.profile.as_deref(), get("profile"), command) {
        (Some(p), _, _) | (None, Some(p), _) => ProfileName::parse(p)?,
        (None, None, Command::Check) => ProfileName::Cosine,
        (None, None, _) => return Err(Error::Config("missing required key `profile`".into())),
    };
    let t_end = match (cli.t_end, get("T"), command) {
        (Some(t), _, _) => t,
        (None, Some(t), _) => parse_value("T", t)?,
        (None, None, Command::Check) => 1.0,
        (None, None, _) => return Err(Error::Config("missing required key `T`".into())),
    };
    let default_n = if command == Command::Check { 64 } else { 128 };
    let n = match (cli.n, get("N")) {
        (Some(n), _) => n,
        (None, Some(v)) => parse_value("N", v)?,
        (None, None) => default_n,
    };
    let n_list = match get("N_list") {
        Some(v) => parse_list("N_list", v)?,
        None => ExperimentConfig::table_defaults(profile).n_list,
    };
    let n_ref = match (cli.n_ref, get("N_ref")) {
        (Some(v), _) => v,
        (None, Some(v)) => parse_value("N_ref", v)?,
        (None, None) => 8192,
    };
    let flux = FluxName::parse(cli.flux.as_deref().or(get("flux")).unwrap_or("eo"))?;
    let model = get("model").unwrap_or("oh_builtin").to_string();
    crate::experiments::model_by_name(&model)?;
    let lf_alpha = get("lf_alpha").map(|v| parse_value("lf_alpha", v)).transpose()?;
    let cfl_safety = match (cli.cfl, get("cfl_safety")) {
        (Some(c), _) => c,
        (None, Some(v)) => parse_value("cfl_safety", v)?,
        (None, None) => 0.9,
    };
    let snapshot_times = get("snapshot_times")
        .map(|v| parse_list("snapshot_times", v))
        .transpose()?
        .unwrap_or_default();
    let out_dir = cli
        .out
        .clone()
        .or_else(|| get("out").map(PathBuf::from))
        .or(env_out)
        .unwrap_or_else(|| PathBuf::from("out"));
    let default_stride = if command == Command::Check { 1 } else { 10 };
    let check_every = match (cli.check_every, get("check_every")) {
        (Some(v), _) => v,
        (None, Some(v)) => parse_value("check_every", v)?,
        (None, None) => default_stride,
    };
    let seed = match (cli.seed, get("seed")) {
        (Some(v), _) => v,
        (None, Some(v)) => parse_value("seed", v)?,
        (None, None) => 0,
    };
    let verbosity = get("verbosity")
        .map(|v| parse_value("verbosity", v))
        .transpose()?
        .unwrap_or(1);
    let tolerances = Tolerances {
        entropy: get("tol_entropy").map(|v| parse_value("tol_entropy", v)).transpose()?,
        bounds: get("tol_bounds").map(|v| parse_value("tol_bounds", v)).transpose()?,
        mean: get("tol_mean").map(|v| parse_value("tol_mean", v)).transpose()?,
    };
    for (name, tol) in [
        ("tol_entropy", tolerances.entropy),
        ("tol_bounds", tolerances.bounds),
        ("tol_mean", tolerances.mean),
    ] {
        if let Some(t) = tol {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("`{name}` must be nonnegative, got {t}")));
            }
        }
    }
    if n < 2 {
        return Err(Error::Config(format!("`N` must be at least 2, got {n}")));
    }

    let experiment = ExperimentConfig {
        profile,
        n_list,
        n_ref,
        t_end,
        flux,
        model,
        lf_alpha,
        cfl_safety,
        snapshot_times,
        out_dir,
    };
    experiment.validate().map_err(|e| Error::Config(e.to_string()))?;
    if experiment.snapshot_times.iter().any(|&t| !(0.0..=t_end).contains(&t)) {
        return Err(Error::Config(format!("snapshot_times must lie in [0, {t_end}]")));
    }
    Ok(RunConfig {
        command,
        experiment,
        n,
        check_every,
        seed,
        verbosity,
        tolerances,
    })
}
