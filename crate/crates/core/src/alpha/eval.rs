//! Expression evaluation over a panel. Semantics:
//!
//! * Missing cells (NaN) propagate through every operator.
//! * Any non-finite arithmetic result (division by zero, log of a
//!   non-positive, overflowing powers) becomes missing rather than inf.
//! * Rolling operators use strictly trailing windows that include today; a
//!   window containing any missing value is missing, and the first d-1 dates
//!   are missing. delay/delta are shifts, defined whenever both endpoints
//!   exist.
//! * Cross-sectional operators act per date over non-missing tickers.
//!
//! Evaluation is total: no valid AST can fail at runtime.

use crate::panel::{Grid, MarketPanel, PanelField};

use super::ast::{BinOp, CrossFn, Expr, FieldRef, TsFn, TsPairFn, UnaryFn};

/// Replaces inf/-inf results with NaN so "missing" is the only sentinel.
#[inline]
fn guard(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

#[inline]
fn sign_of(v: f64) -> f64 {
    if v.is_nan() {
        f64::NAN
    } else if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn evaluate(expr: &Expr, panel: &MarketPanel) -> Grid {
    let (nd, nt) = (panel.n_dates(), panel.n_tickers());
    match expr {
        Expr::Const(c) => Grid::from_data(nd, nt, vec![*c; nd * nt]),
        Expr::Field(FieldRef::Panel(f)) => panel.field(*f).clone(),
        Expr::Field(FieldRef::Adv(n)) => {
            let close = panel.field(PanelField::Close).data();
            let volume = panel.field(PanelField::Volume).data();
            let dollar: Vec<f64> = close.iter().zip(volume).map(|(c, v)| c * v).collect();
            let dollar = Grid::from_data(nd, nt, dollar);
            rolling1(&dollar, *n, |w| w.iter().sum::<f64>() / w.len() as f64)
        }
        Expr::Unary(f, x) => {
            let mut g = evaluate(x, panel);
            let op: fn(f64) -> f64 = match f {
                UnaryFn::Neg => |v| -v,
                UnaryFn::Log => |v| guard(v.ln()),
                UnaryFn::Abs => f64::abs,
                UnaryFn::Sign => sign_of,
            };
            for v in g.data_mut() {
                *v = op(*v);
            }
            g
        }
        Expr::Binary(op, a, b) => {
            let ga = evaluate(a, panel);
            let gb = evaluate(b, panel);
            pointwise(&ga, &gb, *op)
        }
        Expr::SignedPower(x, a) => {
            let gx = evaluate(x, panel);
            let ga = evaluate(a, panel);
            let data = gx
                .data()
                .iter()
                .zip(ga.data())
                .map(|(&v, &p)| guard(sign_of(v) * v.abs().powf(p)))
                .collect();
            Grid::from_data(nd, nt, data)
        }
        Expr::Cross(CrossFn::Rank, x) => cross_rank(&evaluate(x, panel)),
        Expr::Cross(CrossFn::Scale, x) => cross_scale(&evaluate(x, panel)),
        Expr::IndNeutralize(x) => ind_neutralize(&evaluate(x, panel), panel.industry()),
        Expr::Ts(f, x, d) => {
            let g = evaluate(x, panel);
            let d = *d;
            match f {
                TsFn::Delay => shift(&g, d, |_, prior| prior),
                TsFn::Delta => shift(&g, d, |today, prior| today - prior),
                TsFn::Min => rolling1(&g, d, |w| w.iter().copied().fold(f64::INFINITY, f64::min)),
                TsFn::Max => rolling1(&g, d, |w| {
                    w.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                }),
                TsFn::ArgMin => rolling1(&g, d, |w| arg_extreme(w, |a, b| a < b)),
                TsFn::ArgMax => rolling1(&g, d, |w| arg_extreme(w, |a, b| a > b)),
                TsFn::Rank => rolling1(&g, d, trailing_rank),
                TsFn::Sum => rolling1(&g, d, |w| w.iter().sum()),
                TsFn::Product => rolling1(&g, d, |w| w.iter().product()),
                TsFn::Stddev => rolling1(&g, d, sample_stddev),
                TsFn::DecayLinear => rolling1(&g, d, decay_linear),
            }
        }
        Expr::TsPair(f, x, y, d) => {
            let gx = evaluate(x, panel);
            let gy = evaluate(y, panel);
            match f {
                TsPairFn::Correlation => rolling2(&gx, &gy, *d, pearson),
                TsPairFn::Covariance => rolling2(&gx, &gy, *d, sample_cov),
            }
        }
        Expr::Ternary(c, a, b) => {
            let gc = evaluate(c, panel);
            let ga = evaluate(a, panel);
            let gb = evaluate(b, panel);
            let data = gc
                .data()
                .iter()
                .zip(ga.data().iter().zip(gb.data()))
                .map(|(&c, (&a, &b))| {
                    if c.is_nan() {
                        f64::NAN
                    } else if c != 0.0 {
                        a
                    } else {
                        b
                    }
                })
                .collect();
            Grid::from_data(nd, nt, data)
        }
    }
}

fn pointwise(a: &Grid, b: &Grid, op: BinOp) -> Grid {
    let f: fn(f64, f64) -> f64 = match op {
        BinOp::Add => |a, b| guard(a + b),
        BinOp::Sub => |a, b| guard(a - b),
        BinOp::Mul => |a, b| guard(a * b),
        BinOp::Div => |a, b| guard(a / b),
        BinOp::Pow => |a, b| guard(a.powf(b)),
        BinOp::Lt => |a, b| cmp(a, b, |a, b| a < b),
        BinOp::Le => |a, b| cmp(a, b, |a, b| a <= b),
        BinOp::Gt => |a, b| cmp(a, b, |a, b| a > b),
        BinOp::Ge => |a, b| cmp(a, b, |a, b| a >= b),
        BinOp::Eq => |a, b| cmp(a, b, |a, b| a == b),
        BinOp::Ne => |a, b| cmp(a, b, |a, b| a != b),
    };
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Grid::from_data(a.n_dates(), a.n_tickers(), data)
}

/// Comparisons yield 1/0, with missing operands propagating rather than
/// comparing false.
fn cmp(a: f64, b: f64, f: impl Fn(f64, f64) -> bool) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        f(a, b) as u8 as f64
    }
}

/// Cross-sectional fractional rank in (0, 1], average ties, per date.
fn cross_rank(g: &Grid) -> Grid {
    let (nd, nt) = (g.n_dates(), g.n_tickers());
    let mut out = Grid::missing(nd, nt);
    let mut order: Vec<usize> = Vec::with_capacity(nt);
    for t in 0..nd {
        let row = g.date_row(t);
        order.clear();
        order.extend((0..nt).filter(|&j| !row[j].is_nan()));
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
        let n = order.len() as f64;
        let mut i = 0;
        while i < order.len() {
            let mut k = i + 1;
            while k < order.len() && row[order[k]] == row[order[i]] {
                k += 1;
            }
            // 1-based positions i+1 ..= k averaged over the tie run.
            let avg = (i + 1 + k) as f64 / 2.0;
            for &j in &order[i..k] {
                out.set(t, j, avg / n);
            }
            i = k;
        }
    }
    out
}

/// Rescales each date so the absolute values sum to 1. A cross-section whose
/// absolute sum is zero has no defined scaling and goes missing.
fn cross_scale(g: &Grid) -> Grid {
    let (nd, nt) = (g.n_dates(), g.n_tickers());
    let mut out = Grid::missing(nd, nt);
    for t in 0..nd {
        let row = g.date_row(t);
        let denom: f64 = row.iter().filter(|v| !v.is_nan()).map(|v| v.abs()).sum();
        for j in 0..nt {
            out.set(t, j, guard(row[j] / denom));
        }
    }
    out
}

/// Subtracts the per-(date, industry group) mean. Tickers without a group
/// assignment cannot be neutralized and go missing.
fn ind_neutralize(g: &Grid, industry: &[Option<u32>]) -> Grid {
    let (nd, nt) = (g.n_dates(), g.n_tickers());
    let max_group = industry.iter().flatten().max().map_or(0, |&m| m as usize + 1);
    let mut out = Grid::missing(nd, nt);
    let mut sum = vec![0.0; max_group];
    let mut count = vec![0usize; max_group];
    for t in 0..nd {
        sum.fill(0.0);
        count.fill(0);
        let row = g.date_row(t);
        for j in 0..nt {
            if let Some(gid) = industry[j] {
                if !row[j].is_nan() {
                    sum[gid as usize] += row[j];
                    count[gid as usize] += 1;
                }
            }
        }
        for j in 0..nt {
            if let Some(gid) = industry[j] {
                if !row[j].is_nan() {
                    out.set(t, j, row[j] - sum[gid as usize] / count[gid as usize] as f64);
                }
            }
        }
    }
    out
}

/// Shift-style operators: defined when today and the value d days prior both
/// exist, so the first d dates are missing.
fn shift(g: &Grid, d: usize, f: impl Fn(f64, f64) -> f64) -> Grid {
    let (nd, nt) = (g.n_dates(), g.n_tickers());
    let mut out = Grid::missing(nd, nt);
    for t in d..nd {
        for j in 0..nt {
            let today = g.get(t, j);
            let prior = g.get(t - d, j);
            if !today.is_nan() && !prior.is_nan() {
                out.set(t, j, guard(f(today, prior)));
            }
        }
    }
    out
}

/// Applies `f` to each complete trailing window of length d, oldest value
/// first. Windows with any missing value stay missing.
fn rolling1(g: &Grid, d: usize, f: impl Fn(&[f64]) -> f64) -> Grid {
    let (nd, nt) = (g.n_dates(), g.n_tickers());
    let mut out = Grid::missing(nd, nt);
    if d == 0 || d > nd {
        return out;
    }
    let mut w = vec![0.0; d];
    for j in 0..nt {
        't: for t in (d - 1)..nd {
            for (i, slot) in w.iter_mut().enumerate() {
                let v = g.get(t + 1 - d + i, j);
                if v.is_nan() {
                    continue 't;
                }
                *slot = v;
            }
            out.set(t, j, guard(f(&w)));
        }
    }
    out
}

fn rolling2(x: &Grid, y: &Grid, d: usize, f: impl Fn(&[f64], &[f64]) -> f64) -> Grid {
    let (nd, nt) = (x.n_dates(), x.n_tickers());
    let mut out = Grid::missing(nd, nt);
    if d == 0 || d > nd {
        return out;
    }
    let (mut wx, mut wy) = (vec![0.0; d], vec![0.0; d]);
    for j in 0..nt {
        't: for t in (d - 1)..nd {
            for i in 0..d {
                let a = x.get(t + 1 - d + i, j);
                let b = y.get(t + 1 - d + i, j);
                if a.is_nan() || b.is_nan() {
                    continue 't;
                }
                wx[i] = a;
                wy[i] = b;
            }
            out.set(t, j, guard(f(&wx, &wy)));
        }
    }
    out
}

/// 1-based position of the first extreme value, counted from the oldest end
/// of the window.
fn arg_extreme(w: &[f64], better: impl Fn(f64, f64) -> bool) -> f64 {
    let mut best = 0;
    for (i, &v) in w.iter().enumerate().skip(1) {
        if better(v, w[best]) {
            best = i;
        }
    }
    (best + 1) as f64
}

/// Fractional rank of today (the last window element) among the window,
/// average ties, in (0, 1].
fn trailing_rank(w: &[f64]) -> f64 {
    let today = w[w.len() - 1];
    let mut less = 0usize;
    let mut equal = 0usize;
    for &v in w {
        if v < today {
            less += 1;
        } else if v == today {
            equal += 1;
        }
    }
    (less as f64 + (equal as f64 + 1.0) / 2.0) / w.len() as f64
}

fn sample_stddev(w: &[f64]) -> f64 {
    let n = w.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = w.iter().sum::<f64>() / n as f64;
    let ss: f64 = w.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Weighted mean with weights d, d-1, ..., 1 from newest to oldest.
fn decay_linear(w: &[f64]) -> f64 {
    let d = w.len();
    let denom = (d * (d + 1)) as f64 / 2.0;
    let mut acc = 0.0;
    for (i, &v) in w.iter().enumerate() {
        acc += (i + 1) as f64 * v;
    }
    acc / denom
}

fn sample_cov(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        acc += (x[i] - mx) * (y[i] - my);
    }
    acc / (n - 1) as f64
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx * syy).sqrt()
}
