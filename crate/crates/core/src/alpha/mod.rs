//! The alpha expression language: parsing, evaluation over a panel, and the
//! standardized factor matrix fed to the models.
//!
//! Expressions are written in a small infix grammar over panel fields, e.g.
//!
//! ```text
//! reversal_5: -1 * (close / delay(close, 5) - 1)
//! volume_corr: rank(correlation(rank(close), rank(volume), 10))
//! ```
//!
//! A library file holds one `name: expression` per line with `#` comments.
//! [`evaluate_library`] turns a library into a [`FactorMatrix`]: a
//! date x ticker x factor tensor, optionally z-scored per (date, factor)
//! cross-section and imputed with 0 where missing.

mod ast;
mod eval;
mod lex;
mod parse;

pub use ast::{BinOp, CrossFn, Expr, FieldRef, TsFn, TsPairFn, UnaryFn};
pub use eval::evaluate;
pub use parse::parse;

use std::io;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use thiserror::Error;

use crate::panel::{Grid, MarketPanel};

#[derive(Debug, Error)]
pub enum AlphaError {
    #[error("syntax error at byte {offset}: found {found}, expected {expected}")]
    Syntax {
        offset: usize,
        found: String,
        expected: String,
    },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { offset: usize, name: String },
    #[error("unknown field `{name}` at byte {offset}")]
    UnknownField { offset: usize, name: String },
    #[error("`{name}` takes {want} argument(s), got {got} (at byte {offset})")]
    Arity {
        offset: usize,
        name: String,
        want: usize,
        got: usize,
    },
    #[error("window at byte {offset} must be an integer literal >= 1")]
    Window { offset: usize },
    #[error("line {line}: expected `name: expression`")]
    LineFormat { line: usize },
    #[error("line {line}: duplicate alpha name `{name}`")]
    DuplicateName { line: usize, name: String },
    // The cause is embedded in the Display text rather than exposed through
    // `Error::source`; chain-walking printers would otherwise show it twice.
    #[error("alpha `{name}` (line {line}): {cause}")]
    InAlpha {
        name: String,
        line: usize,
        cause: Box<AlphaError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A named, parsed alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaDef {
    pub name: String,
    pub expr: Expr,
}

/// Parses library text: one `name: expression` per line, `#` starts a
/// comment, blank lines ignored. Errors carry the alpha name and line.
pub fn parse_library(text: &str) -> Result<Vec<AlphaDef>, AlphaError> {
    let mut defs: Vec<AlphaDef> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((name, body)) = content.split_once(':') else {
            return Err(AlphaError::LineFormat { line });
        };
        let name = name.trim();
        let valid_name = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.');
        if !valid_name {
            return Err(AlphaError::LineFormat { line });
        }
        if defs.iter().any(|d| d.name == name) {
            return Err(AlphaError::DuplicateName {
                line,
                name: name.to_string(),
            });
        }
        let expr = parse(body).map_err(|e| AlphaError::InAlpha {
            name: name.to_string(),
            line,
            cause: Box::new(e),
        })?;
        defs.push(AlphaDef {
            name: name.to_string(),
            expr,
        });
    }
    Ok(defs)
}

pub fn load_library(path: &Path) -> Result<Vec<AlphaDef>, AlphaError> {
    parse_library(&std::fs::read_to_string(path)?)
}

/// Stacked factor values, aligned with the source panel.
///
/// Layout is (date, ticker, factor) row-major, so `sample(t, j)` is the
/// contiguous model-input row for one stock-day. When built standardized,
/// values are per-(date, factor) z-scores with missing cells imputed to 0;
/// `observed` distinguishes real zeros from imputed ones.
#[derive(Debug, Clone)]
pub struct FactorMatrix {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    factor_names: Vec<String>,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl FactorMatrix {
    /// Assembles a matrix from raw parts, for synthetic feature sets and
    /// perturbation experiments. Library evaluation uses `evaluate_library`.
    pub fn from_parts(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        factor_names: Vec<String>,
        values: Vec<f64>,
        observed: Vec<bool>,
    ) -> Self {
        let want = dates.len() * tickers.len() * factor_names.len();
        assert_eq!(values.len(), want, "factor values length");
        assert_eq!(observed.len(), want, "observed mask length");
        Self {
            dates,
            tickers,
            factor_names,
            values,
            observed,
        }
    }

    /// Raw value buffer in (date, ticker, factor) row-major order.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_factors(&self) -> usize {
        self.factor_names.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn factor_names(&self) -> &[String] {
        &self.factor_names
    }

    #[inline]
    fn base(&self, date: usize, ticker: usize) -> usize {
        (date * self.tickers.len() + ticker) * self.factor_names.len()
    }

    pub fn get(&self, date: usize, ticker: usize, factor: usize) -> f64 {
        self.values[self.base(date, ticker) + factor]
    }

    pub fn observed(&self, date: usize, ticker: usize, factor: usize) -> bool {
        self.observed[self.base(date, ticker) + factor]
    }

    /// The factor row for one stock-day.
    pub fn sample(&self, date: usize, ticker: usize) -> &[f64] {
        let b = self.base(date, ticker);
        &self.values[b..b + self.factor_names.len()]
    }

    /// Long-format export: one row per (date, ticker, factor); cells that
    /// were missing before imputation are written empty.
    pub fn write_long_csv<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["date", "ticker", "factor", "value"])?;
        for (t, date) in self.dates.iter().enumerate() {
            for (j, ticker) in self.tickers.iter().enumerate() {
                for (f, name) in self.factor_names.iter().enumerate() {
                    let cell = if self.observed(t, j, f) {
                        self.get(t, j, f).to_string()
                    } else {
                        String::new()
                    };
                    out.write_record([&date.to_string(), ticker, name, &cell])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Evaluates every alpha over the panel and stacks the results.
///
/// With `standardize`, each (date, factor) cross-section is z-scored over
/// its non-missing tickers using the population deviation, so surviving
/// cross-sections have mean 0 and deviation exactly 1; constant or
/// single-point cross-sections become all zeros. Missing cells are then
/// imputed to 0 (the cross-sectional mean).
///
/// Factors evaluate in parallel; outputs are ordered as given.
pub fn evaluate_library(
    defs: &[AlphaDef],
    panel: &MarketPanel,
    standardize: bool,
) -> FactorMatrix {
    let grids: Vec<Grid> = defs
        .par_iter()
        .map(|d| evaluate(&d.expr, panel))
        .collect();

    let (nd, nt, nf) = (panel.n_dates(), panel.n_tickers(), defs.len());
    let mut values = vec![0.0; nd * nt * nf];
    let mut observed = vec![false; nd * nt * nf];

    let mut column = vec![0.0; nt];
    for (f, grid) in grids.iter().enumerate() {
        for t in 0..nd {
            let row = grid.date_row(t);
            if standardize {
                column.copy_from_slice(row);
                zscore_in_place(&mut column);
            }
            for j in 0..nt {
                let raw = row[j];
                let idx = (t * nt + j) * nf + f;
                observed[idx] = !raw.is_nan();
                values[idx] = if standardize {
                    if column[j].is_nan() {
                        0.0
                    } else {
                        column[j]
                    }
                } else {
                    raw
                };
            }
        }
    }

    FactorMatrix {
        dates: panel.dates().to_vec(),
        tickers: panel.tickers().to_vec(),
        factor_names: defs.iter().map(|d| d.name.clone()).collect(),
        values,
        observed,
    }
}

/// Z-scores the non-missing entries with the population deviation.
/// Numerically constant cross-sections map to zero: after two-pass
/// centering a constant column can leave deviations of a few ulps, and
/// dividing by such a deviation would fabricate +-1 scores.
fn zscore_in_place(xs: &mut [f64]) {
    let mut n = 0usize;
    let mut mean = 0.0;
    for &v in xs.iter() {
        if !v.is_nan() {
            n += 1;
            mean += v;
        }
    }
    if n == 0 {
        return;
    }
    mean /= n as f64;
    let mut ss = 0.0;
    for &v in xs.iter() {
        if !v.is_nan() {
            ss += (v - mean) * (v - mean);
        }
    }
    let sd = (ss / n as f64).sqrt();
    if sd <= 1e-12 * (1.0 + mean.abs()) {
        for v in xs.iter_mut() {
            if !v.is_nan() {
                *v = 0.0;
            }
        }
    } else {
        for v in xs.iter_mut() {
            if !v.is_nan() {
                *v = (*v - mean) / sd;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{generate_synthetic, RegimeConfig};

    fn demo_library() -> Vec<AlphaDef> {
        parse_library(
            "# starter pair\n\
             rev_2: -1 * (close / delay(close, 2) - 1)\n\
             vol_rank: rank(volume)  # trailing comment\n",
        )
        .unwrap()
    }

    #[test]
    fn library_text_parses_names_and_skips_comments() {
        let defs = demo_library();
        assert_eq!(defs.len(), 2);
        assert_eq!(defs[0].name, "rev_2");
        assert_eq!(defs[1].name, "vol_rank");
    }

    #[test]
    fn library_errors_name_the_alpha_and_line() {
        let err = parse_library("ok: close\nbad: rank(close\n").unwrap_err();
        match err {
            AlphaError::InAlpha { name, line, .. } => {
                assert_eq!(name, "bad");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_library("x: close\nx: open\n").unwrap_err(),
            AlphaError::DuplicateName { line: 2, .. }
        ));
        assert!(matches!(
            parse_library("just an expression\n").unwrap_err(),
            AlphaError::LineFormat { line: 1 }
        ));
    }

    #[test]
    fn matrix_shape_matches_library_and_panel() {
        let panel = generate_synthetic(5, 30, 11, &RegimeConfig::default()).unwrap();
        let m = evaluate_library(&demo_library(), &panel, false);
        assert_eq!(m.n_dates(), 30);
        assert_eq!(m.n_tickers(), 5);
        assert_eq!(m.n_factors(), 2);
        assert_eq!(m.sample(3, 2).len(), 2);
        // raw evaluation keeps missing as NaN: first two dates of rev_2
        assert!(m.get(0, 0, 0).is_nan());
        assert!(!m.observed(1, 0, 0));
        assert!(m.observed(2, 0, 0));
    }

    #[test]
    fn standardized_cross_sections_have_zero_mean_unit_deviation() {
        let panel = generate_synthetic(40, 45, 5, &RegimeConfig::default()).unwrap();
        let m = evaluate_library(&demo_library(), &panel, true);
        for f in 0..m.n_factors() {
            for t in 3..m.n_dates() {
                let (mut n, mut sum, mut ss) = (0.0, 0.0, 0.0);
                for j in 0..m.n_tickers() {
                    if m.observed(t, j, f) {
                        n += 1.0;
                        sum += m.get(t, j, f);
                    }
                }
                assert!(n > 1.0);
                let mean = sum / n;
                for j in 0..m.n_tickers() {
                    if m.observed(t, j, f) {
                        let d = m.get(t, j, f) - mean;
                        ss += d * d;
                    }
                }
                assert!(mean.abs() < 1e-8, "factor {f} date {t} mean {mean}");
                assert!(
                    ((ss / n).sqrt() - 1.0).abs() < 1e-8,
                    "factor {f} date {t}"
                );
            }
        }
    }

    #[test]
    fn constant_factor_standardizes_to_zero() {
        let panel = generate_synthetic(6, 30, 2, &RegimeConfig::default()).unwrap();
        let defs = parse_library("flat: close / close\n").unwrap();
        let m = evaluate_library(&defs, &panel, true);
        for t in 0..m.n_dates() {
            for j in 0..m.n_tickers() {
                assert_eq!(m.get(t, j, 0), 0.0);
            }
        }
    }

    #[test]
    fn imputed_cells_are_zero_and_flagged() {
        let panel = generate_synthetic(6, 30, 9, &RegimeConfig::default()).unwrap();
        let defs = parse_library("lagged: rank(delta(close, 3))\n").unwrap();
        let m = evaluate_library(&defs, &panel, true);
        for t in 0..3 {
            for j in 0..m.n_tickers() {
                assert!(!m.observed(t, j, 0));
                assert_eq!(m.get(t, j, 0), 0.0);
            }
        }
    }

    #[test]
    fn long_csv_has_header_and_empty_missing_cells() {
        let panel = generate_synthetic(3, 30, 4, &RegimeConfig::default()).unwrap();
        let defs = parse_library("d1: delta(close, 1)\n").unwrap();
        let m = evaluate_library(&defs, &panel, false);
        let mut buf = Vec::new();
        m.write_long_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("date,ticker,factor,value"));
        let first = lines.next().unwrap();
        assert!(first.ends_with(",d1,"), "day-one cell should be empty: {first}");
        assert_eq!(text.lines().count(), 1 + 3 * 30);
    }
}
