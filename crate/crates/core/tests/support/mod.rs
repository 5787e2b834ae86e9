//! Shared fixtures for integration tests: a naive reference evaluator for
//! alpha expressions, random panels with missing-data holes, and an
//! expression corpus touching every operator.
//!
//! The reference evaluator is deliberately written from the operator
//! definitions, not from the production code: windows are materialized as
//! vectors, ranks are computed by counting (production sorts) or sorting
//! (production counts), and moments use Welford updates (production uses
//! two-pass sums).

#![allow(dead_code)]

use alphagate::alpha::{BinOp, CrossFn, Expr, FieldRef, TsFn, TsPairFn, UnaryFn};
use alphagate::panel::{
    generate_synthetic, Grid, MarketPanel, PanelBuilder, PanelField, RegimeConfig,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

pub type Sheet = Vec<Vec<f64>>;

fn nan_sheet(nd: usize, nt: usize) -> Sheet {
    vec![vec![f64::NAN; nt]; nd]
}

fn finite_or_nan(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

/// Reference evaluation of `expr` over `panel`, date-major.
pub fn oracle_eval(expr: &Expr, panel: &MarketPanel) -> Sheet {
    let (nd, nt) = (panel.n_dates(), panel.n_tickers());
    match expr {
        Expr::Const(c) => vec![vec![*c; nt]; nd],
        Expr::Field(FieldRef::Panel(f)) => {
            let g = panel.field(*f);
            (0..nd)
                .map(|t| (0..nt).map(|j| g.get(t, j)).collect())
                .collect()
        }
        Expr::Field(FieldRef::Adv(n)) => {
            let c = panel.field(PanelField::Close);
            let v = panel.field(PanelField::Volume);
            let dollar: Sheet = (0..nd)
                .map(|t| (0..nt).map(|j| c.get(t, j) * v.get(t, j)).collect())
                .collect();
            window_apply(&dollar, *n, |w| {
                let mut s = 0.0;
                for &x in w {
                    s += x;
                }
                s / w.len() as f64
            })
        }
        Expr::Unary(f, x) => {
            let g = oracle_eval(x, panel);
            map_cells(&g, |v| match f {
                UnaryFn::Neg => -v,
                UnaryFn::Log => finite_or_nan(v.ln()),
                UnaryFn::Abs => v.abs(),
                UnaryFn::Sign => {
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
            })
        }
        Expr::Binary(op, a, b) => {
            let ga = oracle_eval(a, panel);
            let gb = oracle_eval(b, panel);
            zip_cells(&ga, &gb, |x, y| {
                if matches!(
                    op,
                    BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne
                ) && (x.is_nan() || y.is_nan())
                {
                    return f64::NAN;
                }
                let v = match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => x.powf(y),
                    BinOp::Lt => (x < y) as u8 as f64,
                    BinOp::Le => (x <= y) as u8 as f64,
                    BinOp::Gt => (x > y) as u8 as f64,
                    BinOp::Ge => (x >= y) as u8 as f64,
                    BinOp::Eq => (x == y) as u8 as f64,
                    BinOp::Ne => (x != y) as u8 as f64,
                };
                finite_or_nan(v)
            })
        }
        Expr::SignedPower(x, a) => {
            let gx = oracle_eval(x, panel);
            let ga = oracle_eval(a, panel);
            zip_cells(&gx, &ga, |v, p| {
                let s = if v.is_nan() {
                    f64::NAN
                } else if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                finite_or_nan(s * v.abs().powf(p))
            })
        }
        Expr::Cross(CrossFn::Rank, x) => {
            let g = oracle_eval(x, panel);
            let mut out = nan_sheet(nd, nt);
            for t in 0..nd {
                let n = g[t].iter().filter(|v| !v.is_nan()).count() as f64;
                for j in 0..nt {
                    let v = g[t][j];
                    if v.is_nan() {
                        continue;
                    }
                    let less = g[t].iter().filter(|&&u| !u.is_nan() && u < v).count();
                    let equal = g[t].iter().filter(|&&u| u == v).count();
                    out[t][j] = (less as f64 + (equal as f64 + 1.0) / 2.0) / n;
                }
            }
            out
        }
        Expr::Cross(CrossFn::Scale, x) => {
            let g = oracle_eval(x, panel);
            let mut out = nan_sheet(nd, nt);
            for t in 0..nd {
                let denom: f64 = g[t].iter().filter(|v| !v.is_nan()).map(|v| v.abs()).sum();
                for j in 0..nt {
                    out[t][j] = finite_or_nan(g[t][j] / denom);
                }
            }
            out
        }
        Expr::IndNeutralize(x) => {
            let g = oracle_eval(x, panel);
            let groups = panel.industry();
            let mut out = nan_sheet(nd, nt);
            for t in 0..nd {
                for j in 0..nt {
                    let (Some(gid), v) = (groups[j], g[t][j]) else {
                        continue;
                    };
                    if v.is_nan() {
                        continue;
                    }
                    let peers: Vec<f64> = (0..nt)
                        .filter(|&k| groups[k] == Some(gid) && !g[t][k].is_nan())
                        .map(|k| g[t][k])
                        .collect();
                    let mean = peers.iter().sum::<f64>() / peers.len() as f64;
                    out[t][j] = v - mean;
                }
            }
            out
        }
        Expr::Ts(f, x, d) => {
            let g = oracle_eval(x, panel);
            let d = *d;
            match f {
                TsFn::Delay => shifted(&g, d, |_, prior| prior),
                TsFn::Delta => shifted(&g, d, |today, prior| today - prior),
                TsFn::Min => window_apply(&g, d, |w| {
                    let mut m = w[0];
                    for &v in w {
                        if v < m {
                            m = v;
                        }
                    }
                    m
                }),
                TsFn::Max => window_apply(&g, d, |w| {
                    let mut m = w[0];
                    for &v in w {
                        if v > m {
                            m = v;
                        }
                    }
                    m
                }),
                TsFn::ArgMin => window_apply(&g, d, |w| {
                    let mut best = 0;
                    for i in 1..w.len() {
                        if w[i] < w[best] {
                            best = i;
                        }
                    }
                    (best + 1) as f64
                }),
                TsFn::ArgMax => window_apply(&g, d, |w| {
                    let mut best = 0;
                    for i in 1..w.len() {
                        if w[i] > w[best] {
                            best = i;
                        }
                    }
                    (best + 1) as f64
                }),
                TsFn::Rank => window_apply(&g, d, |w| {
                    let today = *w.last().unwrap();
                    let mut sorted = w.to_vec();
                    sorted.sort_by(f64::total_cmp);
                    let below = sorted.partition_point(|&v| v < today);
                    let upto = sorted.partition_point(|&v| v <= today);
                    ((below + 1 + upto) as f64 / 2.0) / w.len() as f64
                }),
                TsFn::Sum => window_apply(&g, d, |w| w.iter().sum()),
                TsFn::Product => window_apply(&g, d, |w| w.iter().product()),
                TsFn::Stddev => window_apply(&g, d, welford_stddev),
                TsFn::DecayLinear => window_apply(&g, d, |w| {
                    let weights: Vec<f64> = (1..=w.len()).map(|i| i as f64).collect();
                    let total: f64 = weights.iter().sum();
                    let mut acc = 0.0;
                    for (v, wt) in w.iter().zip(&weights) {
                        acc += v * wt;
                    }
                    acc / total
                }),
            }
        }
        Expr::TsPair(f, x, y, d) => {
            let gx = oracle_eval(x, panel);
            let gy = oracle_eval(y, panel);
            window_apply2(&gx, &gy, *d, |wx, wy| match f {
                TsPairFn::Correlation => welford_corr(wx, wy),
                TsPairFn::Covariance => welford_cov(wx, wy),
            })
        }
        Expr::Ternary(c, a, b) => {
            let gc = oracle_eval(c, panel);
            let ga = oracle_eval(a, panel);
            let gb = oracle_eval(b, panel);
            let mut out = nan_sheet(nd, nt);
            for t in 0..nd {
                for j in 0..nt {
                    let c = gc[t][j];
                    out[t][j] = if c.is_nan() {
                        f64::NAN
                    } else if c != 0.0 {
                        ga[t][j]
                    } else {
                        gb[t][j]
                    };
                }
            }
            out
        }
    }
}

fn map_cells(g: &Sheet, f: impl Fn(f64) -> f64) -> Sheet {
    g.iter()
        .map(|row| row.iter().map(|&v| f(v)).collect())
        .collect()
}

fn zip_cells(a: &Sheet, b: &Sheet, f: impl Fn(f64, f64) -> f64) -> Sheet {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(&x, &y)| f(x, y)).collect())
        .collect()
}

fn shifted(g: &Sheet, d: usize, f: impl Fn(f64, f64) -> f64) -> Sheet {
    let (nd, nt) = (g.len(), g[0].len());
    let mut out = nan_sheet(nd, nt);
    for t in 0..nd {
        if t < d {
            continue;
        }
        for j in 0..nt {
            let (today, prior) = (g[t][j], g[t - d][j]);
            if !today.is_nan() && !prior.is_nan() {
                out[t][j] = finite_or_nan(f(today, prior));
            }
        }
    }
    out
}

fn window_apply(g: &Sheet, d: usize, f: impl Fn(&[f64]) -> f64) -> Sheet {
    let (nd, nt) = (g.len(), g[0].len());
    let mut out = nan_sheet(nd, nt);
    for t in 0..nd {
        if t + 1 < d {
            continue;
        }
        for j in 0..nt {
            let w: Vec<f64> = (t + 1 - d..=t).map(|s| g[s][j]).collect();
            if w.iter().any(|v| v.is_nan()) {
                continue;
            }
            out[t][j] = finite_or_nan(f(&w));
        }
    }
    out
}

fn window_apply2(x: &Sheet, y: &Sheet, d: usize, f: impl Fn(&[f64], &[f64]) -> f64) -> Sheet {
    let (nd, nt) = (x.len(), x[0].len());
    let mut out = nan_sheet(nd, nt);
    for t in 0..nd {
        if t + 1 < d {
            continue;
        }
        for j in 0..nt {
            let wx: Vec<f64> = (t + 1 - d..=t).map(|s| x[s][j]).collect();
            let wy: Vec<f64> = (t + 1 - d..=t).map(|s| y[s][j]).collect();
            if wx.iter().chain(wy.iter()).any(|v| v.is_nan()) {
                continue;
            }
            out[t][j] = finite_or_nan(f(&wx, &wy));
        }
    }
    out
}

fn welford_stddev(w: &[f64]) -> f64 {
    if w.len() < 2 {
        return f64::NAN;
    }
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &v) in w.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    (m2 / (w.len() - 1) as f64).sqrt()
}

fn welford_cov(x: &[f64], y: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let (mut mx, mut my, mut c) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let n = (i + 1) as f64;
        let dx = x[i] - mx;
        mx += dx / n;
        my += (y[i] - my) / n;
        c += dx * (y[i] - my);
    }
    c / (x.len() - 1) as f64
}

fn welford_corr(x: &[f64], y: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let (mut mx, mut my, mut m2x, mut m2y, mut c) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let n = (i + 1) as f64;
        let dx = x[i] - mx;
        let dy = y[i] - my;
        mx += dx / n;
        my += dy / n;
        m2x += dx * (x[i] - mx);
        m2y += dy * (y[i] - my);
        c += dx * (y[i] - my);
    }
    c / (m2x * m2y).sqrt()
}

/// Expressions covering every operator, field, and syntactic form.
pub const EXPRESSION_CORPUS: &[&str] = &[
    "close",
    "open / vwap - 1",
    "high - low",
    "cap / adv20",
    "-delta(close, 3)",
    "delay(vwap, 5)",
    "rank(close)",
    "rank(rank(volume))",
    "scale(returns)",
    "signedpower(delta(close, 1), 2)",
    "log(volume)",
    "abs(returns) + 1e-4",
    "sign(delta(close, 2))",
    "ts_min(low, 5)",
    "ts_max(high, 5)",
    "ts_argmin(close, 7)",
    "ts_argmax(close, 7)",
    "ts_rank(volume, 9)",
    "ts_sum(returns, 6)",
    "ts_product(1 + returns, 4)",
    "ts_stddev(returns, 10)",
    "correlation(close, volume, 8)",
    "covariance(rank(close), rank(volume), 6)",
    "decay_linear(returns, 7)",
    "indneutralize(returns, industry)",
    "close > open ? rank(volume) : -rank(volume)",
    "close ^ 0.5",
    "2 ^ rank(close)",
    "volume >= adv10 ? 1 : 0",
    "close == delay(close, 1)",
    "low < high",
    "(close <= delay(close, 1)) * scale(high - low)",
    // rank nests only over computations both evaluators produce bitwise
    // (sums, ranks, decay weights); ranking the output of a variance-style
    // op would amplify last-ulp differences into tie flips.
    "rank(ts_sum(rank(open) - rank(adv15), 5))",
    "rank(decay_linear(vwap, 6))",
    "ts_stddev(close, 5) != 0 ? delta(vwap, 2) / ts_stddev(close, 5) : 0",
    "decay_linear(indneutralize(rank(returns), industry), 4)",
];

/// Synthetic panel with holes punched in it: whole stock-days go missing,
/// some volumes go missing independently, and with holes present a couple of
/// tickers lose their industry assignment.
pub fn random_panel(seed: u64) -> MarketPanel {
    let n_tickers = 5 + (seed % 4) as usize * 10;
    let n_dates = 40 + (seed % 3) as usize * 15;
    let missing_frac = [0.0, 0.04, 0.12][(seed % 5) as usize % 3];
    let base = generate_synthetic(n_tickers, n_dates, seed, &RegimeConfig::default()).unwrap();
    if missing_frac == 0.0 {
        return base;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let mut b = PanelBuilder::new(base.dates().to_vec(), base.tickers().to_vec());
    for j in 0..n_tickers {
        if let Some(g) = base.industry()[j] {
            if rng.random::<f64>() > 0.1 {
                b.set_industry(j, g);
            }
        }
    }
    for t in 0..n_dates {
        for j in 0..n_tickers {
            if rng.random::<f64>() < missing_frac {
                continue;
            }
            let volume_hole = rng.random::<f64>() < missing_frac / 2.0;
            for f in PanelField::ALL {
                if f == PanelField::Returns || (f == PanelField::Volume && volume_hole) {
                    continue;
                }
                b.set(f, t, j, base.field(f).get(t, j));
            }
        }
    }
    b.finish().unwrap()
}

/// NaN-respecting comparison with tolerance scaled by magnitude.
pub fn cells_agree(a: f64, b: f64, tol: f64) -> bool {
    if a.is_nan() || b.is_nan() {
        return a.is_nan() && b.is_nan();
    }
    (a - b).abs() <= tol * f64::max(1.0, f64::max(a.abs(), b.abs()))
}

/// Compares a production grid against a reference sheet; returns the first
/// mismatch rendered as a message.
pub fn compare_grid(name: &str, got: &Grid, want: &Sheet, tol: f64) -> Result<(), String> {
    for t in 0..got.n_dates() {
        for j in 0..got.n_tickers() {
            let (g, w) = (got.get(t, j), want[t][j]);
            if !cells_agree(g, w, tol) {
                return Err(format!(
                    "`{name}` differs at (date {t}, ticker {j}): got {g}, reference {w}"
                ));
            }
        }
    }
    Ok(())
}

/// Reference AUC by direct Mann-Whitney pair counting: every
/// (positive, negative) pair contributes 1 if the positive outscores the
/// negative, 0.5 on a tie. O(n²), independent of the production sort.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Central finite differences of a scalar function at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Largest per-element relative error, with a floor on the denominator so
/// finite-difference noise on near-zero gradients does not dominate.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / f64::max(1e-3, f64::max(a.abs(), n.abs())))
        .fold(0.0, f64::max)
}

/// Fixed random projection turning a tensor-valued forward pass into a
/// scalar loss: L = sum(c .* y). The matching upstream gradient is `c`.
pub fn projection(rows: usize, cols: usize, rng: &mut impl Rng) -> alphagate::Tensor2 {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    alphagate::Tensor2::from_vec(rows, cols, data)
}

pub fn weighted_sum(y: &alphagate::Tensor2, c: &alphagate::Tensor2) -> f64 {
    y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
}

/// Permutes panel tickers (with their data and industry) by `perm`, where
/// `perm[new_index] = old_index`.
pub fn permute_tickers(panel: &MarketPanel, perm: &[usize]) -> MarketPanel {
    let tickers: Vec<String> = perm.iter().map(|&o| panel.tickers()[o].clone()).collect();
    let mut b = PanelBuilder::new(panel.dates().to_vec(), tickers);
    for (new_j, &old_j) in perm.iter().enumerate() {
        if let Some(g) = panel.industry()[old_j] {
            b.set_industry(new_j, g);
        }
        for f in PanelField::ALL {
            for t in 0..panel.n_dates() {
                let v = panel.field(f).get(t, old_j);
                if !v.is_nan() {
                    b.set(f, t, new_j, v);
                }
            }
        }
    }
    b.finish().unwrap()
}
