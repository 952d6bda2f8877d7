//! Mortality data ingestion: HMD `Mx_1x1` tables and long CSV files are parsed
//! into raw `(year, age, mx)` records, which are then assembled into a
//! validated [`MortalityPanel`] of log central death rates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fmt17;

/// Default upper age kept when reading mortality tables.
pub const DEFAULT_AGE_CAP: u32 = 90;

/// One observation of a central death rate. `mx == None` marks a missing cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub year: i32,
    pub age: u32,
    pub mx: Option<f64>,
}

/// Column of an HMD table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sex {
    Female,
    Male,
    #[default]
    Total,
}

impl Sex {
    fn column(self) -> usize {
        match self {
            Sex::Female => 2,
            Sex::Male => 3,
            Sex::Total => 4,
        }
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Sex::Female),
            "male" | "m" => Ok(Sex::Male),
            "total" | "t" => Ok(Sex::Total),
            other => Err(Error::Argument(format!("unknown sex column '{other}'"))),
        }
    }
}

/// How zero, negative or missing death rates are handled when building a panel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ZeroPolicy {
    /// Any non-positive or missing cell is an error.
    #[default]
    Reject,
    /// Impute by linear interpolation in log space between the nearest valid
    /// observations of the same age (constant continuation at the edges).
    Interpolate,
    /// Replace `mx <= 0` by the given floor. Missing cells are still an error.
    Floor(f64),
}

impl ZeroPolicy {
    pub const DEFAULT_FLOOR: f64 = 1e-6;
}

impl FromStr for ZeroPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "reject" => Ok(ZeroPolicy::Reject),
            "interpolate" => Ok(ZeroPolicy::Interpolate),
            "floor" => Ok(ZeroPolicy::Floor(Self::DEFAULT_FLOOR)),
            _ => {
                if let Some(eps) = s.strip_prefix("floor:") {
                    let eps: f64 = eps
                        .parse()
                        .map_err(|_| Error::Argument(format!("bad floor value '{eps}'")))?;
                    if eps > 0.0 && eps.is_finite() {
                        return Ok(ZeroPolicy::Floor(eps));
                    }
                }
                Err(Error::Argument(format!("unknown zero policy '{s}'")))
            }
        }
    }
}

fn parse_mx(token: &str, line: usize) -> Result<Option<f64>> {
    match token {
        "." | "" | "NA" | "na" | "NaN" => Ok(None),
        _ => token.parse::<f64>().map(Some).map_err(|_| Error::Parse {
            line,
            msg: format!("invalid rate '{token}'"),
        }),
    }
}

fn parse_age(token: &str, line: usize) -> Result<u32> {
    token
        .trim_end_matches('+')
        .parse::<u32>()
        .map_err(|_| Error::Parse {
            line,
            msg: format!("invalid age '{token}'"),
        })
}

/// Parses a whitespace-delimited HMD `Mx_1x1` table (`Year Age Female Male Total`).
///
/// Leading title lines are skipped up to the `Year Age ...` header when one is
/// present. Ages above `age_cap` are dropped and `110+` is read as 110.
pub fn parse_hmd_table(text: &str, age_cap: u32, sex: Sex) -> Result<Vec<Record>> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines
        .iter()
        .position(|l| {
            let mut it = l.split_whitespace();
            matches!((it.next(), it.next()), (Some(y), Some(a)) if y.eq_ignore_ascii_case("year") && a.eq_ignore_ascii_case("age"))
        })
        .map(|i| i + 1)
        .unwrap_or(0);

    let mut out = Vec::new();
    let mut seen_years: BTreeSet<i32> = BTreeSet::new();
    let mut current: Option<(i32, u32)> = None;
    for (idx, raw) in lines.iter().enumerate().skip(start) {
        let line = idx + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 5 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 5 columns, found {}", tokens.len()),
            });
        }
        let year: i32 = tokens[0].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid year '{}'", tokens[0]),
        })?;
        let age = parse_age(tokens[1], line)?;
        for t in &tokens[2..] {
            parse_mx(t, line)?;
        }
        match current {
            Some((y, _)) if year < y => {
                return Err(Error::Structure(format!(
                    "year {year} on line {line} follows year {y}"
                )))
            }
            Some((y, a)) if year == y && age <= a => {
                return Err(Error::Structure(format!(
                    "age {age} on line {line} does not increase within year {year}"
                )))
            }
            Some((y, _)) if year != y && seen_years.contains(&year) => {
                return Err(Error::Structure(format!(
                    "year {year} on line {line} reappears after its block ended"
                )))
            }
            _ => {}
        }
        seen_years.insert(year);
        current = Some((year, age));
        if age > age_cap {
            continue;
        }
        out.push(Record {
            year,
            age,
            mx: parse_mx(tokens[sex.column()], line)?,
        });
    }
    Ok(out)
}

/// Parses a long CSV with header `year,age,mx`.
pub fn parse_csv_long(text: &str) -> Result<Vec<Record>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty input".into(),
    })?;
    let cols: Vec<String> = header.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
    if cols != ["year", "age", "mx"] {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header 'year,age,mx', found '{}'", header.trim()),
        });
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let year: i32 = fields[0].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid year '{}'", fields[0]),
        })?;
        let age = parse_age(fields[1], line)?;
        let mx = parse_mx(fields[2], line)?;
        if let Some(v) = mx {
            if v < 0.0 {
                return Err(Error::Domain(format!(
                    "negative mx {v} at (year {year}, age {age}) on line {line}"
                )));
            }
        }
        if !seen.insert((year, age)) {
            return Err(Error::Data(format!(
                "duplicate observation for (year {year}, age {age}) on line {line}"
            )));
        }
        out.push(Record { year, age, mx });
    }
    Ok(out)
}

/// An `N x T` panel of log central death rates with per-age time means.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalityPanel {
    ages: Vec<u32>,
    years: Vec<i32>,
    log_rates: DMatrix<f64>,
    a_x: DVector<f64>,
    label: String,
}

impl MortalityPanel {
    /// Builds a panel from log rates (rows = ages, columns = years) and
    /// computes the age means.
    pub fn new(
        ages: Vec<u32>,
        years: Vec<i32>,
        log_rates: DMatrix<f64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        if ages.len() < 2 {
            return Err(Error::Argument(format!("need at least 2 ages, got {}", ages.len())));
        }
        if years.len() < 3 {
            return Err(Error::Argument(format!("need at least 3 years, got {}", years.len())));
        }
        if log_rates.nrows() != ages.len() || log_rates.ncols() != years.len() {
            return Err(Error::Argument(format!(
                "log rate matrix is {}x{}, expected {}x{}",
                log_rates.nrows(),
                log_rates.ncols(),
                ages.len(),
                years.len()
            )));
        }
        if ages.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Argument("ages must be strictly ascending".into()));
        }
        if years.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::Argument("years must be consecutive and ascending".into()));
        }
        if let Some(i) = log_rates.iter().position(|v| !v.is_finite()) {
            let (r, c) = (i % ages.len(), i / ages.len());
            return Err(Error::Domain(format!(
                "non-finite log rate at (year {}, age {})",
                years[c], ages[r]
            )));
        }
        let a_x = row_means(&log_rates);
        Ok(Self {
            ages,
            years,
            log_rates,
            a_x,
            label: label.into(),
        })
    }

    /// Panel indexed by `1..=N` ages and `1..=T` years, as used for synthetic data.
    pub fn from_matrix(log_rates: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        let ages = (0..log_rates.nrows() as u32).collect();
        let years = (1..=log_rates.ncols() as i32).collect();
        Self::new(ages, years, log_rates, label)
    }

    pub fn ages(&self) -> &[u32] {
        &self.ages
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn log_rates(&self) -> &DMatrix<f64> {
        &self.log_rates
    }

    pub fn a_x(&self) -> &DVector<f64> {
        &self.a_x
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    /// Log rates minus the panel's own age means.
    pub fn centered(&self) -> DMatrix<f64> {
        self.centered_by(&self.a_x)
    }

    /// Log rates minus externally supplied age offsets (e.g. the training means).
    pub fn centered_by(&self, a_x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.log_rates.clone();
        for (i, mut row) in m.row_iter_mut().enumerate() {
            row.add_scalar_mut(-a_x[i]);
        }
        m
    }

    /// Sub-panel over the contiguous year columns `start..end`, with its own age means.
    pub fn slice_years(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_years() {
            return Err(Error::Argument(format!(
                "year slice {start}..{end} out of range for {} years",
                self.n_years()
            )));
        }
        Self::new(
            self.ages.clone(),
            self.years[start..end].to_vec(),
            self.log_rates.columns(start, end - start).into_owned(),
            self.label.clone(),
        )
    }

    /// Long CSV `year,age,mx` of the exponentiated log rates.
    pub fn to_csv_long(&self) -> String {
        let mut s = String::from("year,age,mx\n");
        for (j, year) in self.years.iter().enumerate() {
            for (i, age) in self.ages.iter().enumerate() {
                let _ = writeln!(s, "{year},{age},{}", fmt17(self.log_rates[(i, j)].exp()));
            }
        }
        s
    }

    /// Matrix CSV of log rates: header `age\year,<years...>`, one row per age.
    pub fn to_csv_matrix(&self) -> String {
        let mut s = String::from("age\\year");
        for y in &self.years {
            let _ = write!(s, ",{y}");
        }
        s.push('\n');
        for (i, age) in self.ages.iter().enumerate() {
            let _ = write!(s, "{age}");
            for j in 0..self.n_years() {
                let _ = write!(s, ",{}", fmt17(self.log_rates[(i, j)]));
            }
            s.push('\n');
        }
        s
    }
}

pub(crate) fn row_means(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum() / m.ncols() as f64))
}

/// Assembles parsed records into a complete age-by-year panel of log rates.
pub fn build_panel(records: &[Record], policy: ZeroPolicy, label: &str) -> Result<MortalityPanel> {
    if records.is_empty() {
        return Err(Error::Data("no records".into()));
    }
    let mut cells: BTreeMap<(u32, i32), Option<f64>> = BTreeMap::new();
    for r in records {
        if cells.insert((r.age, r.year), r.mx).is_some() {
            return Err(Error::Data(format!(
                "duplicate observation for (year {}, age {})",
                r.year, r.age
            )));
        }
    }
    let ages: Vec<u32> = records.iter().map(|r| r.age).collect::<BTreeSet<_>>().into_iter().collect();
    let y0 = records.iter().map(|r| r.year).min().unwrap_or_default();
    let y1 = records.iter().map(|r| r.year).max().unwrap_or_default();
    let years: Vec<i32> = (y0..=y1).collect();

    // log value per cell, None = needs handling
    let mut grid: Vec<Vec<Option<f64>>> = Vec::with_capacity(ages.len());
    let mut holes = Vec::new();
    for &age in &ages {
        let mut row = Vec::with_capacity(years.len());
        for &year in &years {
            let mx = cells.get(&(age, year)).copied().flatten();
            let value = match (mx, policy) {
                (Some(v), _) if v > 0.0 && v.is_finite() => Some(v.ln()),
                (Some(v), ZeroPolicy::Floor(eps)) if v.is_finite() => Some(eps.ln()),
                _ => None,
            };
            if value.is_none() {
                holes.push((year, age));
            }
            row.push(value);
        }
        grid.push(row);
    }

    if !holes.is_empty() && !matches!(policy, ZeroPolicy::Interpolate) {
        return Err(Error::Incomplete { holes });
    }

    let mut log_rates = DMatrix::zeros(ages.len(), years.len());
    let mut unfillable = Vec::new();
    for (i, row) in grid.iter().enumerate() {
        let filled = interpolate_row(row);
        match filled {
            Some(vals) => {
                for (j, v) in vals.into_iter().enumerate() {
                    log_rates[(i, j)] = v;
                }
            }
            None => unfillable.extend(years.iter().map(|&y| (y, ages[i]))),
        }
    }
    if !unfillable.is_empty() {
        return Err(Error::Incomplete { holes: unfillable });
    }
    MortalityPanel::new(ages, years, log_rates, label)
}

/// Fills gaps linearly between the nearest known neighbours; edge gaps take
/// the nearest known value. Returns `None` when the row has no known value.
fn interpolate_row(row: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<(usize, f64)> = row
        .iter()
        .enumerate()
        .filter_map(|(j, v)| v.map(|v| (j, v)))
        .collect();
    if known.is_empty() {
        return None;
    }
    let out = (0..row.len())
        .map(|j| {
            if let Some(v) = row[j] {
                return v;
            }
            let right = known.iter().position(|&(k, _)| k > j);
            match right {
                Some(0) => known[0].1,
                None => known[known.len() - 1].1,
                Some(p) => {
                    let (j0, v0) = known[p - 1];
                    let (j1, v1) = known[p];
                    v0 + (v1 - v0) * (j - j0) as f64 / (j1 - j0) as f64
                }
            }
        })
        .collect();
    Some(out)
}

/// Training and holdout sub-panels split after `split_year`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSplit {
    pub train: MortalityPanel,
    pub holdout: MortalityPanel,
    pub split_year: i32,
}

/// Splits a panel into years `..=split_year` and `split_year+1..`; each part
/// recomputes its own age means.
pub fn split_panel(panel: &MortalityPanel, split_year: i32) -> Result<PanelSplit> {
    let years = panel.years();
    let first = years[0];
    let last = years[years.len() - 1];
    if split_year < first || split_year >= last {
        return Err(Error::Argument(format!(
            "split year {split_year} must lie in [{first}, {})",
            last
        )));
    }
    let cut = (split_year - first + 1) as usize;
    // sub-panels need at least 3 years for their own validity; a shorter
    // holdout is still useful for evaluation, so build it without that check
    let train = panel.slice_years(0, cut)?;
    let holdout = holdout_slice(panel, cut)?;
    Ok(PanelSplit {
        train,
        holdout,
        split_year,
    })
}

fn holdout_slice(panel: &MortalityPanel, cut: usize) -> Result<MortalityPanel> {
    let t = panel.n_years();
    let log_rates = panel.log_rates.columns(cut, t - cut).into_owned();
    let a_x = row_means(&log_rates);
    Ok(MortalityPanel {
        ages: panel.ages.clone(),
        years: panel.years[cut..].to_vec(),
        log_rates,
        a_x,
        label: panel.label.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HMD: &str = "United States of America, Death rates (period 1x1)\n\
        \n  Year          Age             Female            Male           Total\n\
        1933  0  0.055  0.069  0.062\n\
        1933  95  0.3  0.31  .\n\
        1933  110+  0.5  0.6  0.55\n";

    #[test]
    fn hmd_row_extraction_and_cap() {
        let recs = parse_hmd_table(HMD, 90, Sex::Total).unwrap();
        assert_eq!(
            recs,
            vec![Record {
                year: 1933,
                age: 0,
                mx: Some(0.062)
            }]
        );
        let all = parse_hmd_table(HMD, 110, Sex::Female).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(all[2].age, 110);
        assert_eq!(all[0].mx, Some(0.055));
    }

    #[test]
    fn hmd_missing_marker() {
        let recs = parse_hmd_table(HMD, 110, Sex::Total).unwrap();
        assert_eq!(recs[1].age, 95);
        assert_eq!(recs[1].mx, None);
    }

    #[test]
    fn hmd_malformed_row_reports_line() {
        let text = "Year Age Female Male Total\n1933 0 0.1 0.1\n";
        match parse_hmd_table(text, 90, Sex::Total) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let text = "Year Age Female Male Total\n1933 0 0.1 x 0.1\n";
        assert!(matches!(parse_hmd_table(text, 90, Sex::Total), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn hmd_non_monotone_years() {
        let text = "Year Age Female Male Total\n1934 0 .1 .1 .1\n1933 0 .1 .1 .1\n";
        assert!(matches!(parse_hmd_table(text, 90, Sex::Total), Err(Error::Structure(_))));
        let text = "Year Age Female Male Total\n1933 1 .1 .1 .1\n1933 0 .1 .1 .1\n";
        assert!(matches!(parse_hmd_table(text, 90, Sex::Total), Err(Error::Structure(_))));
    }

    #[test]
    fn csv_long_basic_and_errors() {
        let recs = parse_csv_long("year,age,mx\n2000,0,0.007").unwrap();
        assert_eq!(
            recs,
            vec![Record {
                year: 2000,
                age: 0,
                mx: Some(0.007)
            }]
        );
        let err = parse_csv_long("year,age,mx\n2000,0,0.1\n2000,0,0.2\n").unwrap_err();
        match err {
            Error::Data(msg) => assert!(msg.contains("year 2000, age 0"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_csv_long("year,age,mx\n2000,0,-0.1"),
            Err(Error::Domain(_))
        ));
    }

    fn grid(values: &[&[f64]]) -> Vec<Record> {
        let mut out = Vec::new();
        for (i, row) in values.iter().enumerate() {
            for (j, &mx) in row.iter().enumerate() {
                out.push(Record {
                    year: 2000 + j as i32,
                    age: i as u32,
                    mx: Some(mx),
                });
            }
        }
        out
    }

    #[test]
    fn constant_e_grid_gives_unit_logs() {
        let e = std::f64::consts::E;
        let p = build_panel(&grid(&[&[e, e, e], &[e, e, e]]), ZeroPolicy::Reject, "x").unwrap();
        assert!(p.log_rates().iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert!(p.a_x().iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn zero_interpolated_in_log_space() {
        // age 0: ln values 1, ?, 3 -> 2 by hand
        let e = std::f64::consts::E;
        let recs = grid(&[&[e, 0.0, e.powi(3)], &[0.1, 0.1, 0.1]]);
        let p = build_panel(&recs, ZeroPolicy::Interpolate, "x").unwrap();
        assert!((p.log_rates()[(0, 1)] - 2.0).abs() < 1e-12);
        assert!((p.a_x()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rejected_or_floored() {
        let recs = grid(&[&[0.1, 0.0, 0.1], &[0.1, 0.1, 0.1]]);
        match build_panel(&recs, ZeroPolicy::Reject, "x") {
            Err(Error::Incomplete { holes }) => assert_eq!(holes, vec![(2001, 0)]),
            other => panic!("unexpected {other:?}"),
        }
        let p = build_panel(&recs, ZeroPolicy::Floor(1e-6), "x").unwrap();
        assert!((p.log_rates()[(0, 1)] - 1e-6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn missing_year_is_a_hole() {
        let mut recs = grid(&[&[0.1, 0.1, 0.1], &[0.1, 0.1, 0.1]]);
        recs.retain(|r| !(r.year == 2001 && r.age == 1));
        assert!(matches!(build_panel(&recs, ZeroPolicy::Reject, "x"), Err(Error::Incomplete { .. })));
        let p = build_panel(&recs, ZeroPolicy::Interpolate, "x").unwrap();
        assert!((p.log_rates()[(1, 1)] - 0.1f64.ln()).abs() < 1e-12);
    }

    fn us_like() -> MortalityPanel {
        let years: Vec<i32> = (1933..=2017).collect();
        let m = DMatrix::from_fn(3, years.len(), |i, j| -(i as f64) - 0.01 * j as f64);
        MortalityPanel::new(vec![0, 1, 2], years, m, "us").unwrap()
    }

    #[test]
    fn split_us_layout() {
        let s = split_panel(&us_like(), 1992).unwrap();
        assert_eq!(s.train.n_years(), 60);
        assert_eq!(s.train.years()[0], 1933);
        assert_eq!(s.holdout.n_years(), 25);
        assert_eq!(s.holdout.years()[0], 1993);
        assert_eq!(s.holdout.years()[24], 2017);
    }

    #[test]
    fn split_edges() {
        let s = split_panel(&us_like(), 2016).unwrap();
        assert_eq!(s.holdout.n_years(), 1);
        assert!(matches!(split_panel(&us_like(), 2017), Err(Error::Argument(_))));
        assert!(matches!(split_panel(&us_like(), 1900), Err(Error::Argument(_))));
    }

    #[test]
    fn panel_rejects_bad_shapes() {
        let m = DMatrix::zeros(2, 3);
        assert!(MortalityPanel::new(vec![0, 1], vec![1, 3, 4], m.clone(), "").is_err());
        assert!(MortalityPanel::new(vec![1, 0], vec![1, 2, 3], m.clone(), "").is_err());
        let mut bad = m.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(MortalityPanel::new(vec![0, 1], vec![1, 2, 3], bad, "").is_err());
    }
}
