//! Simulated panels with one random-walk factor and constant, abruptly
//! changing or smoothly changing loadings, and the Monte Carlo comparison of
//! forecast methods on them.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataio::MortalityPanel;
use crate::error::{Error, Result};
use crate::factor_classic::{fit_classic_centered, FactorCount};
use crate::factor_tv::fit_tv_centered;
use crate::forecast::{forecast_classic, squared_error_metrics, ForecastOptions, Method, TvForecaster};
use crate::fmt17;

/// Identity of the random number generator behind every simulated panel.
pub const GENERATOR: &str = "ChaCha20 (rand_chacha 0.3), per-replication seed = splitmix64 mix of (master seed, DGP, replication)";

/// Innovation standard deviation of the random-walk factor.
pub const FACTOR_SIGMA: f64 = 0.8;

/// Train lengths of the reference comparison with `N = T = 100`.
pub const TABLE_TRAIN_LENGTHS: [usize; 6] = [70, 75, 80, 85, 90, 95];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DgpKind {
    /// Loadings constant over time.
    Dgp1,
    /// Loadings jump by ±1 after the midpoint.
    Dgp2,
    /// Logistic loadings drifting smoothly over time.
    Dgp3,
}

impl DgpKind {
    pub const ALL: [DgpKind; 3] = [DgpKind::Dgp1, DgpKind::Dgp2, DgpKind::Dgp3];

    pub fn noise_sigma(self) -> f64 {
        match self {
            DgpKind::Dgp1 | DgpKind::Dgp3 => 0.1,
            DgpKind::Dgp2 => 0.03,
        }
    }

    fn index(self) -> u64 {
        match self {
            DgpKind::Dgp1 => 1,
            DgpKind::Dgp2 => 2,
            DgpKind::Dgp3 => 3,
        }
    }
}

impl fmt::Display for DgpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dgp{}", self.index())
    }
}

impl FromStr for DgpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dgp1" | "1" => Ok(DgpKind::Dgp1),
            "dgp2" | "2" => Ok(DgpKind::Dgp2),
            "dgp3" | "3" => Ok(DgpKind::Dgp3),
            other => Err(Error::Argument(format!("unknown DGP '{other}'"))),
        }
    }
}

impl Serialize for DgpKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub n: usize,
    pub t: usize,
    pub seed: u64,
    pub factor_sigma: f64,
    pub noise_sigma: f64,
}

impl DgpSpec {
    pub fn new(kind: DgpKind, n: usize, t: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            t,
            seed,
            factor_sigma: FACTOR_SIGMA,
            noise_sigma: kind.noise_sigma(),
        }
    }
}

/// A simulated centred panel with the loadings and factor that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    /// `N x T` observations.
    pub x: DMatrix<f64>,
    /// `N x T` loadings, each column summing to one.
    pub loadings: DMatrix<f64>,
    /// Factor rescaled so that `loadings[:, t] * factor[t]` equals the raw product.
    pub factor: DVector<f64>,
}

impl SimData {
    pub fn panel(&self, label: &str) -> Result<MortalityPanel> {
        MortalityPanel::from_matrix(self.x.clone(), label)
    }
}

/// Raw (unnormalised) DGP 3 loading of age `i` at time `t`, both 1-based.
pub fn logistic_loading(i: usize, t: usize, n: usize, total: usize) -> f64 {
    1.0 / (1.0 + (6.0 * i as f64 / n as f64 + 2.0 - 12.0 * t as f64 / total as f64).exp())
}

pub fn generate(spec: &DgpSpec) -> Result<SimData> {
    let DgpSpec { kind, n, t, .. } = *spec;
    if n == 0 || t == 0 {
        return Err(Error::Argument("N and T must be positive".into()));
    }
    if kind == DgpKind::Dgp2 && (n % 2 != 0 || t % 2 != 0) {
        return Err(Error::Argument(format!("DGP 2 needs even N and T, got N={n}, T={t}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let raw = match kind {
        DgpKind::Dgp1 => {
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            DMatrix::from_fn(n, t, |i, _| b[i])
        }
        DgpKind::Dgp2 => {
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(1.1..1.9)).collect();
            DMatrix::from_fn(n, t, |i, j| {
                if j < t / 2 {
                    b[i]
                } else if i < n / 2 {
                    b[i] + 1.0
                } else {
                    b[i] - 1.0
                }
            })
        }
        DgpKind::Dgp3 => DMatrix::from_fn(n, t, |i, j| logistic_loading(i + 1, j + 1, n, t)),
    };
    let step = Normal::new(0.0, spec.factor_sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let mut level = 0.0;
    let raw_factor: Vec<f64> = (0..t)
        .map(|_| {
            level += step.sample(&mut rng);
            level
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let eps: Vec<f64> = (0..n * t).map(|_| noise.sample(&mut rng)).collect();

    let sums: Vec<f64> = raw.column_iter().map(|c| c.sum()).collect();
    let loadings = DMatrix::from_fn(n, t, |i, j| raw[(i, j)] / sums[j]);
    let factor = DVector::from_fn(t, |j, _| raw_factor[j] * sums[j]);
    let x = DMatrix::from_fn(n, t, |i, j| loadings[(i, j)] * factor[j] + eps[j * n + i]);
    Ok(SimData { x, loadings, factor })
}

/// A simulated panel on the log-rate scale: the DGP observations plus an age
/// profile rising linearly from -7 to -2, with ages `0..N` and consecutive
/// years from `first_year`.
pub fn sample_panel(kind: DgpKind, n: usize, t: usize, seed: u64, first_year: i32) -> Result<MortalityPanel> {
    let data = generate(&DgpSpec::new(kind, n, t, seed))?;
    let log_rates = DMatrix::from_fn(n, t, |i, j| -7.0 + 5.0 * i as f64 / n as f64 + data.x[(i, j)]);
    MortalityPanel::new(
        (0..n as u32).collect(),
        (0..t as i32).map(|j| first_year + j).collect(),
        log_rates,
        kind.to_string(),
    )
}

/// Stateless 64-bit mixer used to derive replication seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn replication_seed(master: u64, dgp: DgpKind, rep: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ dgp.index()) ^ rep as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub dgps: Vec<DgpKind>,
    pub n: usize,
    pub t: usize,
    pub train_lengths: Vec<usize>,
    pub reps: usize,
    pub master_seed: u64,
    pub level: f64,
}

impl McConfig {
    /// `N = T = 100`, train lengths 70..95 by 5, 100 replications.
    pub fn table(master_seed: u64) -> Self {
        Self {
            dgps: DgpKind::ALL.to_vec(),
            n: 100,
            t: 100,
            train_lengths: TABLE_TRAIN_LENGTHS.to_vec(),
            reps: 100,
            master_seed,
            level: crate::forecast::DEFAULT_LEVEL,
        }
    }
}

/// Methods compared, in report row order.
pub const MC_METHODS: [Method; 3] = [Method::Local, Method::Naive, Method::Classic];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McCell {
    pub dgp: DgpKind,
    pub method: Method,
    pub train_length: usize,
    pub mean_mspe: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRaw {
    pub dgp: DgpKind,
    pub rep: usize,
    pub seed: u64,
    pub train_length: usize,
    pub method: Method,
    pub mspe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McFailure {
    pub dgp: DgpKind,
    pub rep: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub generator: String,
    pub master_seed: u64,
    pub n: usize,
    pub t: usize,
    pub reps: usize,
    pub train_lengths: Vec<usize>,
    pub cells: Vec<McCell>,
    pub failures: Vec<McFailure>,
    pub raw: Vec<McRaw>,
}

impl McReport {
    pub fn mean(&self, dgp: DgpKind, method: Method, train_length: usize) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.dgp == dgp && c.method == method && c.train_length == train_length)
            .map(|c| c.mean_mspe)
    }

    /// Rows DGP x method, columns train lengths.
    pub fn to_table_csv(&self) -> String {
        let mut out = String::from("dgp,method");
        for k in &self.train_lengths {
            out.push_str(&format!(",{k}"));
        }
        out.push('\n');
        let mut dgps: Vec<DgpKind> = self.cells.iter().map(|c| c.dgp).collect();
        dgps.dedup();
        for dgp in dgps {
            for method in MC_METHODS {
                out.push_str(&format!("{dgp},{method}"));
                for &k in &self.train_lengths {
                    let v = self.mean(dgp, method, k).unwrap_or(f64::NAN);
                    out.push(',');
                    out.push_str(&fmt17(v));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// MSPE of each method (in [`MC_METHODS`] order) for one panel and train length.
pub fn evaluate_split(x: &DMatrix<f64>, train_length: usize, level: f64) -> Result<[f64; 3]> {
    let (n, t) = x.shape();
    if train_length < 3 || train_length >= t {
        return Err(Error::Argument(format!(
            "train length {train_length} must lie in 3..{t}"
        )));
    }
    let train = x.columns(0, train_length).into_owned();
    let test = x.columns(train_length, t - train_length).into_owned();
    let zero = DVector::zeros(n);
    let mut opts = ForecastOptions::new(t - train_length);
    opts.level = level;
    let classic = fit_classic_centered(&train, zero.clone(), FactorCount::Fixed(1))?;
    let tv = fit_tv_centered(&train, zero, None, FactorCount::Fixed(1))?;
    let classic_fc = forecast_classic(&classic, &opts)?;
    let mut tv_fc = TvForecaster::new(&tv, opts)?;
    let local = tv_fc.forecast(Method::Local)?;
    let naive = tv_fc.forecast(Method::Naive)?;
    Ok([
        squared_error_metrics(&local.predicted, &test)?.overall,
        squared_error_metrics(&naive.predicted, &test)?.overall,
        squared_error_metrics(&classic_fc.predicted, &test)?.overall,
    ])
}

/// Runs every (DGP, replication) in parallel. A replication that fails at any
/// train length is dropped for its DGP; more than 5% dropped is an error.
pub fn run_mc(config: &McConfig) -> Result<McReport> {
    if config.reps == 0 {
        return Err(Error::Argument("at least one replication is required".into()));
    }
    let jobs: Vec<(DgpKind, usize)> = config
        .dgps
        .iter()
        .flat_map(|&d| (0..config.reps).map(move |r| (d, r)))
        .collect();
    let results: Vec<(DgpKind, usize, u64, Result<Vec<[f64; 3]>>)> = jobs
        .par_iter()
        .map(|&(dgp, rep)| {
            let seed = replication_seed(config.master_seed, dgp, rep);
            let out = generate(&DgpSpec::new(dgp, config.n, config.t, seed)).and_then(|data| {
                config
                    .train_lengths
                    .iter()
                    .map(|&k| evaluate_split(&data.x, k, config.level))
                    .collect::<Result<Vec<_>>>()
            });
            (dgp, rep, seed, out)
        })
        .collect();

    let mut raw = Vec::new();
    let mut failures = Vec::new();
    for (dgp, rep, seed, out) in results {
        match out {
            Ok(rows) => {
                for (k, mspes) in config.train_lengths.iter().zip(rows) {
                    for (method, mspe) in MC_METHODS.iter().zip(mspes) {
                        raw.push(McRaw {
                            dgp,
                            rep,
                            seed,
                            train_length: *k,
                            method: *method,
                            mspe,
                        });
                    }
                }
            }
            Err(e) => {
                log::warn!("{dgp} replication {rep} failed: {e}");
                failures.push(McFailure {
                    dgp,
                    rep,
                    message: e.to_string(),
                });
            }
        }
    }
    for &dgp in &config.dgps {
        let failed = failures.iter().filter(|f| f.dgp == dgp).count();
        if failed * 20 > config.reps {
            return Err(Error::Estimation(format!(
                "{failed} of {} replications failed for {dgp}",
                config.reps
            )));
        }
    }
    let mut cells = Vec::new();
    for &dgp in &config.dgps {
        for method in MC_METHODS {
            for &k in &config.train_lengths {
                let values: Vec<f64> = raw
                    .iter()
                    .filter(|r| r.dgp == dgp && r.method == method && r.train_length == k)
                    .map(|r| r.mspe)
                    .collect();
                let mean_mspe = values.iter().sum::<f64>() / values.len() as f64;
                if !mean_mspe.is_finite() {
                    return Err(Error::Estimation(format!("non-finite mean MSPE for {dgp}, {method}, k={k}")));
                }
                cells.push(McCell {
                    dgp,
                    method,
                    train_length: k,
                    mean_mspe,
                    replications: values.len(),
                });
            }
        }
    }
    Ok(McReport {
        generator: GENERATOR.to_string(),
        master_seed: config.master_seed,
        n: config.n,
        t: config.t,
        reps: config.reps,
        train_lengths: config.train_lengths.clone(),
        cells,
        failures,
        raw,
    })
}

/// A panel whose loadings move along a straight line through the training
/// period and `k_star` validation periods, then stay frozen. The factor is a
/// noiseless linear trend and the observations carry small Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFixture {
    pub train: MortalityPanel,
    pub validation: MortalityPanel,
    pub k_star: usize,
    pub loadings: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFixtureSpec {
    pub n: usize,
    pub train_length: usize,
    pub validation_length: usize,
    pub k_star: usize,
    /// Total change of each loading per period, as a fraction of `1/N`.
    pub slope: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl BoundaryFixtureSpec {
    pub fn new(k_star: usize, seed: u64) -> Self {
        Self {
            n: 30,
            train_length: 60,
            validation_length: 20,
            k_star,
            slope: 0.02,
            noise_sigma: 0.01,
            seed,
        }
    }
}

pub fn boundary_fixture(spec: &BoundaryFixtureSpec) -> Result<BoundaryFixture> {
    let BoundaryFixtureSpec {
        n,
        train_length,
        validation_length,
        k_star,
        ..
    } = *spec;
    if k_star > validation_length || n < 2 {
        return Err(Error::Argument("k_star must not exceed the validation length".into()));
    }
    let t = train_length + validation_length;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    // per-age direction of change, centred so every period sums to one
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let dir: Vec<f64> = raw.iter().map(|d| (d - mean) * spec.slope / n as f64).collect();
    let base = 1.0 / n as f64;
    let stop = train_length + k_star;
    let loadings = DMatrix::from_fn(n, t, |i, j| {
        let tt = (j + 1).min(stop) as f64 - train_length as f64;
        base + dir[i] * tt
    });
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let x = DMatrix::from_fn(n, t, |i, j| {
        let k = 20.0 - 2.0 * (j + 1) as f64;
        loadings[(i, j)] * k * n as f64 + noise.sample(&mut rng)
    });
    let panel = MortalityPanel::from_matrix(x, "boundary")?;
    let train = panel.slice_years(0, train_length)?;
    let validation = panel.slice_years(train_length, t)?;
    Ok(BoundaryFixture {
        train,
        validation,
        k_star,
        loadings,
    })
}
