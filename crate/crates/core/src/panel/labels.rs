//! Market returns, excess-return labels and the alpha/beta decomposition.

use chrono::NaiveDate;

use super::{Grid, MarketPanel, PanelError, PanelField, MIN_BETA_OBS};

/// Cross-sectional weighting for the market-return proxy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Equal,
    Cap,
}

/// Benchmark against which a stock's forward return is measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Benchmark {
    /// Compounded cross-sectional market mean over the horizon.
    MarketMean,
    /// CAPM residual: beta is fit by OLS of (r_i - r_f) on (r_m - r_f)
    /// using only dates with index < `fit_dates`, so labels never leak
    /// information from the evaluation window into the fit.
    BetaAdjusted { fit_dates: usize },
}

/// Forward excess returns and their binary sign labels.
///
/// `label` is 1 where excess > 0, 0 where excess <= 0, NaN where any input
/// is missing. The last `horizon` date rows are always missing: their
/// forward window extends past the panel.
#[derive(Debug, Clone)]
pub struct LabelSet {
    pub horizon: usize,
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub excess: Grid,
    pub label: Grid,
}

impl LabelSet {
    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }
}

/// Per-ticker CAPM split of returns into alpha and beta components.
#[derive(Debug, Clone)]
pub struct ReturnDecomposition {
    /// OLS beta per ticker; NaN where the ticker was skipped.
    pub beta: Vec<f64>,
    pub alpha_return: Grid,
    pub beta_return: Grid,
    /// Equal-weighted market return per date; NaN where undefined.
    pub market_return: Vec<f64>,
}

/// Weighted cross-sectional mean of returns at date index `t` over
/// non-missing tickers. Cap weighting additionally requires a cap cell.
pub fn market_return(
    panel: &MarketPanel,
    t: usize,
    weighting: Weighting,
) -> Result<f64, PanelError> {
    let v = market_return_cell(panel, t, weighting);
    if v.is_nan() {
        Err(PanelError::AllMissing(t))
    } else {
        Ok(v)
    }
}

fn market_return_cell(panel: &MarketPanel, t: usize, weighting: Weighting) -> f64 {
    let returns = panel.field(PanelField::Returns);
    let caps = panel.field(PanelField::Cap);
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..panel.n_tickers() {
        let r = returns.get(t, j);
        if r.is_nan() {
            continue;
        }
        let w = match weighting {
            Weighting::Equal => 1.0,
            Weighting::Cap => {
                let c = caps.get(t, j);
                if c.is_nan() {
                    continue;
                }
                c
            }
        };
        num += w * r;
        den += w;
    }
    if den > 0.0 {
        num / den
    } else {
        f64::NAN
    }
}

fn market_series(panel: &MarketPanel, weighting: Weighting) -> Vec<f64> {
    (0..panel.n_dates())
        .map(|t| market_return_cell(panel, t, weighting))
        .collect()
}

fn check_risk_free(rf: Option<&[f64]>, n_dates: usize) -> Result<Vec<f64>, PanelError> {
    match rf {
        Some(series) if series.len() != n_dates => Err(PanelError::RiskFreeLength {
            got: series.len(),
            want: n_dates,
        }),
        Some(series) => Ok(series.to_vec()),
        None => Ok(vec![0.0; n_dates]),
    }
}

/// Compounds a daily series over the window (t+1 ..= t+horizon); NaN if any
/// day in the window is missing.
fn compound_forward(daily: impl Fn(usize) -> f64, t: usize, horizon: usize) -> f64 {
    let mut acc = 1.0;
    for s in t + 1..=t + horizon {
        let r = daily(s);
        if r.is_nan() {
            return f64::NAN;
        }
        acc *= 1.0 + r;
    }
    acc - 1.0
}

/// Forward excess returns over `horizon` trading days and their sign labels.
///
/// `MarketMean`: excess = compounded stock return minus compounded market
/// return over the next `horizon` days. `BetaAdjusted`: the daily CAPM alpha
/// return (r_i - r_f) - beta (r_m - r_f) is compounded over the same window.
pub fn excess_returns(
    panel: &MarketPanel,
    horizon: usize,
    risk_free: Option<&[f64]>,
    benchmark: Benchmark,
    weighting: Weighting,
) -> Result<LabelSet, PanelError> {
    let nd = panel.n_dates();
    let nt = panel.n_tickers();
    if horizon == 0 || horizon >= nd {
        return Err(PanelError::BadHorizon {
            horizon,
            n_dates: nd,
        });
    }
    let rf = check_risk_free(risk_free, nd)?;
    let market = market_series(panel, weighting);
    let returns = panel.field(PanelField::Returns);

    let mut excess = Grid::missing(nd, nt);
    match benchmark {
        Benchmark::MarketMean => {
            for t in 0..nd - horizon {
                let mkt = compound_forward(|s| market[s], t, horizon);
                if mkt.is_nan() {
                    continue;
                }
                for j in 0..nt {
                    let stock = compound_forward(|s| returns.get(s, j), t, horizon);
                    if !stock.is_nan() {
                        excess.set(t, j, stock - mkt);
                    }
                }
            }
        }
        Benchmark::BetaAdjusted { fit_dates } => {
            let betas = fit_betas(panel, &market, &rf, fit_dates.min(nd));
            for j in 0..nt {
                let beta = betas[j];
                if beta.is_nan() {
                    continue;
                }
                let alpha_daily = |s: usize| {
                    let r = returns.get(s, j);
                    let m = market[s];
                    if r.is_nan() || m.is_nan() {
                        f64::NAN
                    } else {
                        (r - rf[s]) - beta * (m - rf[s])
                    }
                };
                for t in 0..nd - horizon {
                    let e = compound_forward(alpha_daily, t, horizon);
                    if !e.is_nan() {
                        excess.set(t, j, e);
                    }
                }
            }
        }
    }

    let mut label = Grid::missing(nd, nt);
    for t in 0..nd {
        for j in 0..nt {
            let e = excess.get(t, j);
            if !e.is_nan() {
                label.set(t, j, if e > 0.0 { 1.0 } else { 0.0 });
            }
        }
    }

    Ok(LabelSet {
        horizon,
        dates: panel.dates().to_vec(),
        tickers: panel.tickers().to_vec(),
        excess,
        label,
    })
}

/// OLS slope of (r_i - r_f) on (r_m - r_f) over dates < fit_dates.
/// Tickers with fewer than MIN_BETA_OBS overlapping observations are
/// skipped with a warning (beta = NaN).
fn fit_betas(panel: &MarketPanel, market: &[f64], rf: &[f64], fit_dates: usize) -> Vec<f64> {
    let returns = panel.field(PanelField::Returns);
    (0..panel.n_tickers())
        .map(|j| {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for t in 0..fit_dates {
                let r = returns.get(t, j);
                let m = market[t];
                if r.is_nan() || m.is_nan() {
                    continue;
                }
                xs.push(m - rf[t]);
                ys.push(r - rf[t]);
            }
            if xs.len() < MIN_BETA_OBS {
                log::warn!(
                    "ticker {} skipped: {} overlapping observations (< {})",
                    panel.tickers()[j],
                    xs.len(),
                    MIN_BETA_OBS
                );
                return f64::NAN;
            }
            ols_slope(&xs, &ys).unwrap_or_else(|| {
                log::warn!(
                    "ticker {} skipped: zero market variance in fit window",
                    panel.tickers()[j]
                );
                f64::NAN
            })
        })
        .collect()
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// Splits every ticker's return series into CAPM alpha and beta components
/// against the equal-weighted market. The reconstruction
/// alpha + beta-return = r_i - r_f holds cell-for-cell by construction.
pub fn decompose(
    panel: &MarketPanel,
    risk_free: Option<&[f64]>,
) -> Result<ReturnDecomposition, PanelError> {
    let nd = panel.n_dates();
    let nt = panel.n_tickers();
    let rf = check_risk_free(risk_free, nd)?;
    let market = market_series(panel, Weighting::Equal);
    let betas = fit_betas(panel, &market, &rf, nd);
    let returns = panel.field(PanelField::Returns);

    let mut alpha_return = Grid::missing(nd, nt);
    let mut beta_return = Grid::missing(nd, nt);
    for j in 0..nt {
        let beta = betas[j];
        if beta.is_nan() {
            continue;
        }
        for t in 0..nd {
            let r = returns.get(t, j);
            let m = market[t];
            if r.is_nan() || m.is_nan() {
                continue;
            }
            let rb = beta * (m - rf[t]);
            beta_return.set(t, j, rb);
            alpha_return.set(t, j, (r - rf[t]) - rb);
        }
    }

    Ok(ReturnDecomposition {
        beta: betas,
        alpha_return,
        beta_return,
        market_return: market,
    })
}
