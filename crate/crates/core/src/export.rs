//! CSV and JSON renderings of fits, forecasts and diagnostics. Numbers in CSV
//! output carry 17 significant digits.

use std::fmt::Write;

use serde::Serialize;
use serde_json::{json, Value};

use crate::factor_classic::{ClassicFit, WindowLoadings};
use crate::factor_tv::TvFit;
use crate::fmt17;
use crate::forecast::{BoundaryEstimate, MortalityForecast};
use crate::timeseries::{ArimaModel, FactorForecast};

fn check_len(what: &str, got: usize, want: usize) {
    assert_eq!(got, want, "{what}: expected {want} labels, got {got}");
}

/// `age,a_x`.
pub fn age_effect_csv(ages: &[u32], a_x: &nalgebra::DVector<f64>) -> String {
    check_len("ages", ages.len(), a_x.len());
    let mut s = String::from("age,a_x\n");
    for (age, v) in ages.iter().zip(a_x.iter()) {
        let _ = writeln!(s, "{age},{}", fmt17(*v));
    }
    s
}

/// `age,factor,loading` for constant loadings.
pub fn classic_loadings_csv(ages: &[u32], fit: &ClassicFit) -> String {
    check_len("ages", ages.len(), fit.loadings.nrows());
    let mut s = String::from("age,factor,loading\n");
    for j in 0..fit.n_factors {
        for (i, age) in ages.iter().enumerate() {
            let _ = writeln!(s, "{age},{},{}", j + 1, fmt17(fit.loadings[(i, j)]));
        }
    }
    s
}

/// `year,factor,value` from a `T x R` factor matrix.
pub fn factors_csv(years: &[i32], factors: &nalgebra::DMatrix<f64>) -> String {
    check_len("years", years.len(), factors.nrows());
    let mut s = String::from("year,factor,value\n");
    for j in 0..factors.ncols() {
        for (t, year) in years.iter().enumerate() {
            let _ = writeln!(s, "{year},{},{}", j + 1, fmt17(factors[(t, j)]));
        }
    }
    s
}

/// `year,age,factor,loading` for time-varying loadings.
pub fn tv_loadings_csv(years: &[i32], ages: &[u32], fit: &TvFit) -> String {
    check_len("years", years.len(), fit.n_years());
    check_len("ages", ages.len(), fit.n_ages());
    let mut s = String::from("year,age,factor,loading\n");
    for (t, year) in years.iter().enumerate() {
        for j in 0..fit.n_factors {
            for (i, age) in ages.iter().enumerate() {
                let _ = writeln!(s, "{year},{age},{},{}", j + 1, fmt17(fit.loadings[t][(i, j)]));
            }
        }
    }
    s
}

/// `year,age,predicted_log_mx,lower,upper`; `first_year` labels step one.
pub fn forecast_csv(ages: &[u32], first_year: i32, f: &MortalityForecast) -> String {
    check_len("ages", ages.len(), f.predicted.nrows());
    let half = f.half_widths();
    let mut s = String::from("year,age,predicted_log_mx,lower,upper\n");
    for h in 0..f.horizon {
        let year = first_year + h as i32;
        for (i, age) in ages.iter().enumerate() {
            let p = f.predicted[(i, h)];
            let w = half[(i, h)];
            let _ = writeln!(s, "{year},{age},{},{},{}", fmt17(p), fmt17(p - w), fmt17(p + w));
        }
    }
    s
}

/// `year,age,factor,loading` of the loadings each forecast step used.
pub fn loadings_used_csv(ages: &[u32], first_year: i32, f: &MortalityForecast) -> String {
    let mut s = String::from("year,age,factor,loading\n");
    for h in 0..f.horizon {
        let year = first_year + h as i32;
        for (j, l) in f.loadings_used.iter().enumerate() {
            check_len("ages", ages.len(), l.nrows());
            let c = if l.ncols() == 1 { 0 } else { h };
            for (i, age) in ages.iter().enumerate() {
                let _ = writeln!(s, "{year},{age},{},{}", j + 1, fmt17(l[(i, c)]));
            }
        }
    }
    s
}

/// `h,point,lower,upper`.
pub fn factor_forecast_csv(f: &FactorForecast) -> String {
    let mut s = String::from("h,point,lower,upper\n");
    for h in 0..f.horizon {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            h + 1,
            fmt17(f.point[h]),
            fmt17(f.lower[h]),
            fmt17(f.upper[h])
        );
    }
    s
}

/// Order, coefficients, standard errors and fit statistics.
pub fn arima_summary(m: &ArimaModel) -> Value {
    let mut names: Vec<String> = (1..=m.p).map(|i| format!("ar{i}")).collect();
    names.extend((1..=m.q).map(|i| format!("ma{i}")));
    let mut values: Vec<f64> = m.ar.iter().chain(&m.ma).copied().collect();
    if m.drift {
        names.push(if m.d == 0 { "mean".into() } else { "drift".into() });
        values.push(m.drift_value);
    }
    let coefficients: Vec<Value> = names
        .iter()
        .zip(values.iter().zip(m.stderr.iter().chain(std::iter::repeat(&f64::NAN))))
        .map(|(n, (v, se))| json!({"name": n, "value": finite(*v), "stderr": finite(*se)}))
        .collect();
    json!({
        "order": [m.p, m.d, m.q],
        "drift": m.drift,
        "coefficients": coefficients,
        "sigma2": finite(m.sigma2),
        "loglik": finite(m.loglik),
        "aic": finite(m.aic),
        "n_used": m.n_used,
    })
}

/// JSON has no infinities or NaN; those become null.
fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// `k,ssr`.
pub fn boundary_csv(b: &BoundaryEstimate) -> String {
    let mut s = String::from("k,ssr\n");
    for (k, v) in b.ssr_curve.iter().enumerate() {
        let _ = writeln!(s, "{k},{}", fmt17(*v));
    }
    s
}

/// `start_year,end_year,age,factor,loading`.
pub fn rolling_csv(ages: &[u32], windows: &[WindowLoadings]) -> String {
    let mut s = String::from("start_year,end_year,age,factor,loading\n");
    for w in windows {
        check_len("ages", ages.len(), w.loadings.nrows());
        for j in 0..w.loadings.ncols() {
            for (i, age) in ages.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{age},{},{}",
                    w.start_year,
                    w.end_year,
                    j + 1,
                    fmt17(w.loadings[(i, j)])
                );
            }
        }
    }
    s
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable value");
    s.push('\n');
    s
}
