//! Daily market panels: ingestion, synthesis, returns and label math.
//!
//! A panel is a date x ticker table of per-stock fields. Missing cells are
//! represented by NaN and propagate through all derived quantities; nothing
//! is ever silently zero-filled.

mod csv_io;
mod labels;
mod synthetic;

pub use csv_io::{load_panel, save_panel, ColumnMap};
pub use labels::{
    decompose, excess_returns, market_return, Benchmark, LabelSet, ReturnDecomposition, Weighting,
};
pub use synthetic::{generate_synthetic, RegimeConfig};

use chrono::NaiveDate;
use thiserror::Error;

/// Minimum overlapping observations required to fit a per-ticker beta.
pub const MIN_BETA_OBS: usize = 30;

/// Tolerance for a user-supplied returns column against close-to-close
/// returns before the cell is rewritten.
const RETURNS_CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    MalformedRow { line: u64, msg: String },
    #[error("required column '{0}' not found in header")]
    MissingColumn(String),
    #[error("line {line}: duplicate row for ({date}, {ticker})")]
    DuplicateRow {
        line: u64,
        date: NaiveDate,
        ticker: String,
    },
    #[error("panel has no rows")]
    Empty,
    #[error("invalid generator config: {0}")]
    BadConfig(String),
    #[error("no ticker has a return at date index {0}")]
    AllMissing(usize),
    #[error("label horizon {horizon} must be >= 1 and < number of dates ({n_dates})")]
    BadHorizon { horizon: usize, n_dates: usize },
    #[error("risk-free series has {got} entries, panel has {want} dates")]
    RiskFreeLength { got: usize, want: usize },
}

/// Date x ticker matrix of reals; NaN marks a missing cell.
#[derive(Debug, Clone)]
pub struct Grid {
    n_dates: usize,
    n_tickers: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn missing(n_dates: usize, n_tickers: usize) -> Self {
        Self {
            n_dates,
            n_tickers,
            data: vec![f64::NAN; n_dates * n_tickers],
        }
    }

    pub fn n_dates(&self) -> usize {
        self.n_dates
    }

    pub fn n_tickers(&self) -> usize {
        self.n_tickers
    }

    #[inline]
    pub fn get(&self, date: usize, ticker: usize) -> f64 {
        debug_assert!(date < self.n_dates && ticker < self.n_tickers);
        self.data[date * self.n_tickers + ticker]
    }

    #[inline]
    pub fn set(&mut self, date: usize, ticker: usize, v: f64) {
        debug_assert!(date < self.n_dates && ticker < self.n_tickers);
        self.data[date * self.n_tickers + ticker] = v;
    }

    /// Row slice for one date, over all tickers.
    #[inline]
    pub fn date_row(&self, date: usize) -> &[f64] {
        &self.data[date * self.n_tickers..(date + 1) * self.n_tickers]
    }

    pub fn from_data(n_dates: usize, n_tickers: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n_dates * n_tickers, "grid data length");
        Self {
            n_dates,
            n_tickers,
            data,
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Cell-for-cell equality where NaN == NaN. For round-trip tests.
    pub fn same_cells(&self, other: &Grid) -> bool {
        self.n_dates == other.n_dates
            && self.n_tickers == other.n_tickers
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| (a.is_nan() && b.is_nan()) || a == b)
    }
}

/// The per-stock daily fields a panel carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PanelField {
    Open,
    High,
    Low,
    Close,
    Volume,
    Vwap,
    Returns,
    Cap,
}

impl PanelField {
    pub const ALL: [PanelField; 8] = [
        PanelField::Open,
        PanelField::High,
        PanelField::Low,
        PanelField::Close,
        PanelField::Volume,
        PanelField::Vwap,
        PanelField::Returns,
        PanelField::Cap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PanelField::Open => "open",
            PanelField::High => "high",
            PanelField::Low => "low",
            PanelField::Close => "close",
            PanelField::Volume => "volume",
            PanelField::Vwap => "vwap",
            PanelField::Returns => "returns",
            PanelField::Cap => "cap",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        PanelField::ALL.iter().copied().find(|f| f.name() == name)
    }
}

/// Immutable daily market panel. Construct through [`PanelBuilder`],
/// [`load_panel`] or [`generate_synthetic`]; all three enforce the field
/// invariants (OHLC ordering, non-negative volume, positive cap,
/// close-consistent returns).
#[derive(Debug, Clone)]
pub struct MarketPanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    fields: [Grid; 8],
    industry: Vec<Option<u32>>,
}

impl MarketPanel {
    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn field(&self, field: PanelField) -> &Grid {
        &self.fields[field as usize]
    }

    /// Per-ticker industry group id; None when the input carried no group.
    pub fn industry(&self) -> &[Option<u32>] {
        &self.industry
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }
}

/// Accumulates raw cells and enforces panel invariants on `finish`.
pub struct PanelBuilder {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    fields: [Grid; 8],
    industry: Vec<Option<u32>>,
}

impl PanelBuilder {
    /// `dates` must be strictly increasing and `tickers` free of duplicates;
    /// callers produce both by sorting, so violations are programming errors.
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>) -> Self {
        assert!(
            dates.windows(2).all(|w| w[0] < w[1]),
            "dates must be strictly increasing"
        );
        let mut seen = std::collections::HashSet::new();
        assert!(
            tickers.iter().all(|t| seen.insert(t.clone())),
            "duplicate ticker"
        );
        let (nd, nt) = (dates.len(), tickers.len());
        Self {
            dates,
            tickers,
            fields: std::array::from_fn(|_| Grid::missing(nd, nt)),
            industry: vec![None; nt],
        }
    }

    pub fn set(&mut self, field: PanelField, date: usize, ticker: usize, v: f64) {
        self.fields[field as usize].set(date, ticker, v);
    }

    pub fn set_industry(&mut self, ticker: usize, group: u32) {
        self.industry[ticker] = Some(group);
    }

    /// Applies field policy and returns the finished panel:
    /// OHLC-inconsistent cells are cleared with a warning, negative volume
    /// and non-positive cap are cleared, vwap defaults to (high+low+close)/3,
    /// and returns are recomputed from closes wherever both closes exist.
    pub fn finish(mut self) -> Result<MarketPanel, PanelError> {
        if self.dates.is_empty() || self.tickers.is_empty() {
            return Err(PanelError::Empty);
        }
        let (nd, nt) = (self.dates.len(), self.tickers.len());

        for t in 0..nd {
            for j in 0..nt {
                let o = self.fields[PanelField::Open as usize].get(t, j);
                let h = self.fields[PanelField::High as usize].get(t, j);
                let l = self.fields[PanelField::Low as usize].get(t, j);
                let c = self.fields[PanelField::Close as usize].get(t, j);
                if o.is_finite() && h.is_finite() && l.is_finite() && c.is_finite() {
                    let hi = o.max(c);
                    let lo = o.min(c);
                    if h < hi || l > lo {
                        log::warn!(
                            "OHLC inconsistency for {} on {}: o={} h={} l={} c={}; cells set missing",
                            self.tickers[j], self.dates[t], o, h, l, c
                        );
                        for f in [PanelField::Open, PanelField::High, PanelField::Low, PanelField::Close] {
                            self.fields[f as usize].set(t, j, f64::NAN);
                        }
                    }
                }
                let v = self.fields[PanelField::Volume as usize].get(t, j);
                if v.is_finite() && v < 0.0 {
                    log::warn!(
                        "negative volume for {} on {}; cell set missing",
                        self.tickers[j],
                        self.dates[t]
                    );
                    self.fields[PanelField::Volume as usize].set(t, j, f64::NAN);
                }
                let cap = self.fields[PanelField::Cap as usize].get(t, j);
                if cap.is_finite() && cap <= 0.0 {
                    log::warn!(
                        "non-positive cap for {} on {}; cell set missing",
                        self.tickers[j],
                        self.dates[t]
                    );
                    self.fields[PanelField::Cap as usize].set(t, j, f64::NAN);
                }
            }
        }

        // vwap default from the enforced OHLC cells
        for t in 0..nd {
            for j in 0..nt {
                let w = self.fields[PanelField::Vwap as usize].get(t, j);
                if w.is_nan() {
                    let h = self.fields[PanelField::High as usize].get(t, j);
                    let l = self.fields[PanelField::Low as usize].get(t, j);
                    let c = self.fields[PanelField::Close as usize].get(t, j);
                    if h.is_finite() && l.is_finite() && c.is_finite() {
                        self.fields[PanelField::Vwap as usize].set(t, j, (h + l + c) / 3.0);
                    }
                }
            }
        }

        // returns: recompute from closes wherever both closes exist, keep
        // user-provided values only where closes are unavailable
        for j in 0..nt {
            for t in 1..nd {
                let c0 = self.fields[PanelField::Close as usize].get(t - 1, j);
                let c1 = self.fields[PanelField::Close as usize].get(t, j);
                if c0.is_finite() && c1.is_finite() && c0 != 0.0 {
                    let computed = c1 / c0 - 1.0;
                    let given = self.fields[PanelField::Returns as usize].get(t, j);
                    if given.is_finite() && (given - computed).abs() > RETURNS_CONSISTENCY_TOL {
                        log::warn!(
                            "returns for {} on {} ({}) disagree with close-to-close ({}); recomputed",
                            self.tickers[j], self.dates[t], given, computed
                        );
                    }
                    self.fields[PanelField::Returns as usize].set(t, j, computed);
                }
            }
        }

        Ok(MarketPanel {
            dates: self.dates,
            tickers: self.tickers,
            fields: self.fields,
            industry: self.industry,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn two_by_three() -> PanelBuilder {
        PanelBuilder::new(
            vec![d("2021-01-04"), d("2021-01-05"), d("2021-01-06")],
            vec!["AAA".into(), "BBB".into()],
        )
    }

    #[test]
    fn returns_recomputed_from_closes() {
        let mut b = two_by_three();
        for (t, c) in [(0, 10.0), (1, 11.0), (2, 9.9)] {
            b.set(PanelField::Close, t, 0, c);
        }
        let p = b.finish().unwrap();
        let r = p.field(PanelField::Returns);
        assert!(r.get(0, 0).is_nan());
        assert!((r.get(1, 0) - 0.1).abs() < 1e-12);
        assert!((r.get(2, 0) - (9.9 / 11.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn ohlc_violation_clears_cells() {
        let mut b = two_by_three();
        b.set(PanelField::Open, 0, 0, 10.0);
        b.set(PanelField::High, 0, 0, 9.0); // high below open
        b.set(PanelField::Low, 0, 0, 8.0);
        b.set(PanelField::Close, 0, 0, 9.5);
        let p = b.finish().unwrap();
        for f in [PanelField::Open, PanelField::High, PanelField::Low, PanelField::Close] {
            assert!(p.field(f).get(0, 0).is_nan());
        }
    }

    #[test]
    fn vwap_defaults_to_typical_price() {
        let mut b = two_by_three();
        b.set(PanelField::Open, 0, 1, 10.0);
        b.set(PanelField::High, 0, 1, 12.0);
        b.set(PanelField::Low, 0, 1, 9.0);
        b.set(PanelField::Close, 0, 1, 11.0);
        let p = b.finish().unwrap();
        assert!((p.field(PanelField::Vwap).get(0, 1) - (12.0 + 9.0 + 11.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_given_returns_are_replaced() {
        let mut b = two_by_three();
        b.set(PanelField::Close, 0, 0, 10.0);
        b.set(PanelField::Close, 1, 0, 10.5);
        b.set(PanelField::Returns, 1, 0, 0.9);
        let p = b.finish().unwrap();
        assert!((p.field(PanelField::Returns).get(1, 0) - 0.05).abs() < 1e-12);
    }
}
