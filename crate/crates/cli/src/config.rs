//! Run configuration: documented defaults, a flat `key = value` file format
//! and command-line overrides.

use std::fmt;
use std::str::FromStr;

use tvfactor::dataio::{Sex, ZeroPolicy, DEFAULT_AGE_CAP};
use tvfactor::factor_classic::{FactorCount, DEFAULT_CUTOFF};
use tvfactor::forecast::{BoundaryFactors, Method, DEFAULT_LEVEL};
use tvfactor::kernels::KernelFamily;
use tvfactor::sim::{DgpKind, TABLE_TRAIN_LENGTHS};
use tvfactor::timeseries::{ArimaGrid, DEFAULT_LAMBDA_FRACTIONS};

#[derive(Debug)]
pub enum ConfigError {
    /// Bad invocation, configuration or missing input; exit status 2.
    Usage(String),
    /// Anything that fails while running; exit status 1.
    Failed(String),
}

impl ConfigError {
    pub fn exit_code(&self) -> u8 {
        match self {
            ConfigError::Usage(_) => 2,
            ConfigError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Usage(m) | ConfigError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<tvfactor::Error> for ConfigError {
    fn from(e: tvfactor::Error) -> Self {
        match e {
            tvfactor::Error::Argument(m) => ConfigError::Usage(m),
            other => ConfigError::Failed(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Hmd,
    Csv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "hmd" => Ok(Format::Hmd),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format '{other}' (expected hmd or csv)")),
        }
    }
}

/// Every setting of a run. Defaults are listed in [`RunConfig::default`] and
/// in the README.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Option<String>,
    pub format: Format,
    pub sex: Sex,
    pub age_cap: u32,
    pub zero_policy: ZeroPolicy,
    /// Treat the log rates as already centred (age effect fixed at zero).
    pub centered_input: bool,
    pub split_year: Option<i32>,
    pub method: Method,
    /// Defaults to the holdout length, or 10 without a holdout.
    pub horizon: Option<usize>,
    pub level: f64,
    pub seed: u64,
    pub out: String,
    pub threads: Option<usize>,
    pub factors: FactorCount,
    pub kernel: KernelFamily,
    /// Fraction of the sample length; rule of thumb when absent.
    pub bandwidth: Option<f64>,
    pub boundary_correction: bool,
    pub grid: ArimaGrid,
    pub lambda: Option<f64>,
    pub lambda_grid: Vec<f64>,
    pub validation: Option<usize>,
    pub boundary_factors: BoundaryFactors,
    pub window: usize,
    pub reps: usize,
    pub sim_n: usize,
    pub sim_t: usize,
    pub train_lengths: Vec<usize>,
    pub dgps: Vec<DgpKind>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            format: Format::Csv,
            sex: Sex::Total,
            age_cap: DEFAULT_AGE_CAP,
            zero_policy: ZeroPolicy::Reject,
            centered_input: false,
            split_year: None,
            method: Method::Naive,
            horizon: None,
            level: DEFAULT_LEVEL,
            seed: 1,
            out: "out".into(),
            threads: None,
            factors: FactorCount::Cutoff(DEFAULT_CUTOFF),
            kernel: KernelFamily::Epanechnikov,
            bandwidth: None,
            boundary_correction: true,
            grid: ArimaGrid::default(),
            lambda: None,
            lambda_grid: DEFAULT_LAMBDA_FRACTIONS.to_vec(),
            validation: None,
            boundary_factors: BoundaryFactors::Forecast,
            window: 40,
            reps: 100,
            sim_n: 100,
            sim_t: 100,
            train_lengths: TABLE_TRAIN_LENGTHS.to_vec(),
            dgps: DgpKind::ALL.to_vec(),
        }
    }
}

/// Values given on the command line.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub input: Option<String>,
    pub format: Option<String>,
    pub sex: Option<String>,
    pub age_cap: Option<u32>,
    pub split_year: Option<i32>,
    pub method: Option<String>,
    pub horizon: Option<usize>,
    pub k: Option<usize>,
    pub level: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub threads: Option<usize>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| ConfigError::Usage(format!("invalid value '{value}' for '{key}': {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    let items = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<Vec<T>, _>>()?;
    if items.is_empty() {
        return Err(ConfigError::Usage(format!("'{key}' needs at least one value")));
    }
    Ok(items)
}

fn parse_factors(value: &str) -> Result<FactorCount, ConfigError> {
    match value.strip_prefix("cutoff:") {
        Some(c) => Ok(FactorCount::Cutoff(parse("factors", c)?)),
        None => Ok(FactorCount::Fixed(parse("factors", value)?)),
    }
}

fn parse_method(value: &str, k: Option<usize>) -> Result<Method, ConfigError> {
    match (value.to_ascii_lowercase().as_str(), k) {
        ("hybrid", Some(k)) => Ok(Method::Hybrid(k)),
        ("hybrid", None) => Err(ConfigError::Usage(
            "method 'hybrid' needs a boundary: use hybrid:k or --k".into(),
        )),
        _ => value.parse::<Method>().map_err(|e| ConfigError::Usage(e.to_string())),
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut pending_method: Option<String> = None;
        let mut pending_k: Option<usize> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError::Usage(format!("config line {}: expected key = value", idx + 1))
            })?;
            let key = key.trim().replace('-', "_");
            let value = value.trim();
            match key.as_str() {
                "input" => cfg.input = Some(value.to_string()),
                "format" => cfg.format = parse(&key, value)?,
                "sex" => cfg.sex = parse(&key, value)?,
                "age_cap" => cfg.age_cap = parse(&key, value)?,
                "zero_policy" => cfg.zero_policy = parse(&key, value)?,
                "centered_input" => cfg.centered_input = parse(&key, value)?,
                "split_year" => cfg.split_year = Some(parse(&key, value)?),
                "method" => pending_method = Some(value.to_string()),
                "k" => pending_k = Some(parse(&key, value)?),
                "horizon" => cfg.horizon = Some(parse(&key, value)?),
                "level" => cfg.level = parse(&key, value)?,
                "seed" => cfg.seed = parse(&key, value)?,
                "out" => cfg.out = value.to_string(),
                "threads" => cfg.threads = Some(parse(&key, value)?),
                "factors" => cfg.factors = parse_factors(value)?,
                "kernel" => cfg.kernel = parse(&key, value)?,
                "bandwidth" => cfg.bandwidth = Some(parse(&key, value)?),
                "boundary_correction" => cfg.boundary_correction = parse(&key, value)?,
                "max_p" => cfg.grid.max_p = parse(&key, value)?,
                "max_d" => cfg.grid.max_d = parse(&key, value)?,
                "max_q" => cfg.grid.max_q = parse(&key, value)?,
                "lambda" => cfg.lambda = Some(parse(&key, value)?),
                "lambda_grid" => cfg.lambda_grid = parse_list(&key, value)?,
                "validation" => cfg.validation = Some(parse(&key, value)?),
                "boundary_factors" => cfg.boundary_factors = parse(&key, value)?,
                "window" => cfg.window = parse(&key, value)?,
                "reps" => cfg.reps = parse(&key, value)?,
                "sim_n" => cfg.sim_n = parse(&key, value)?,
                "sim_t" => cfg.sim_t = parse(&key, value)?,
                "train_lengths" => cfg.train_lengths = parse_list(&key, value)?,
                "dgps" => cfg.dgps = parse_list(&key, value)?,
                other => {
                    return Err(ConfigError::Usage(format!(
                        "config line {}: unknown key '{other}'",
                        idx + 1
                    )))
                }
            }
        }
        if pending_method.is_some() || pending_k.is_some() {
            let m = pending_method.unwrap_or_else(|| "hybrid".into());
            cfg.method = parse_method(&m, pending_k)?;
        }
        Ok(cfg)
    }

    /// Applies command-line values on top of the file values.
    pub fn apply(&mut self, o: Overrides) -> Result<(), ConfigError> {
        if let Some(v) = o.input {
            self.input = Some(v);
        }
        if let Some(v) = o.format {
            self.format = parse("format", &v)?;
        }
        if let Some(v) = o.sex {
            self.sex = parse("sex", &v)?;
        }
        if let Some(v) = o.age_cap {
            self.age_cap = v;
        }
        if let Some(v) = o.split_year {
            self.split_year = Some(v);
        }
        match (o.method, o.k) {
            (Some(m), k) => self.method = parse_method(&m, k)?,
            (None, Some(k)) => self.method = Method::Hybrid(k),
            (None, None) => {}
        }
        if let Some(v) = o.horizon {
            self.horizon = Some(v);
        }
        if let Some(v) = o.level {
            self.level = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.out {
            self.out = v;
        }
        if let Some(v) = o.threads {
            self.threads = Some(v);
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(ConfigError::Usage(format!("level must lie in (0, 1), got {}", self.level)));
        }
        Ok(())
    }
}
