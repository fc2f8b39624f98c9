//! Optimal injections and trading strategies along scenarios, and Monte
//! Carlo P&L distributions.
//!
//! Everything here is computed forward along one path at a time: the shadow
//! price and the optimal measure are path-dependent even on a recombining
//! lattice, so whole-tree strategies would be exponential in the horizon.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dual::{backward_sweep, shadow_path, ShadowPath, ValueSurface};
use crate::error::{Error, Result};
use crate::market::{portfolio_cost, NodeId, Portfolio, ScenarioPath, TreeModel};
use crate::payoff::{aggregate_claim, DisutilityProfile, PaymentStream};
use crate::pricing::lambda_from_k;
use crate::pwl::ApproxSettings;

/// Relative tolerance on the node systems and the terminal position.
const SOLVE_TOL: f64 = 1e-6;

/// Optimal cash injections along one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionPath {
    /// `x̂_t` for `t = 0..=T`; exactly zero off the injection set.
    pub injections: Vec<f64>,
    pub log_lambda: f64,
    pub shadow: ShadowPath,
}

impl InjectionPath {
    pub fn lambda(&self) -> f64 {
        self.log_lambda.exp()
    }

    /// Cash gain `−Σ_{t∈I} x̂_t`.
    pub fn pnl(&self) -> f64 {
        -self.injections.iter().sum::<f64>()
    }

    /// `Σ_t v_t(x̂_t)`.
    pub fn disutility(&self, profile: &DisutilityProfile) -> f64 {
        self.injections.iter().enumerate().map(|(t, &x)| profile.disutility(t, x)).sum()
    }
}

/// Backward sweep for the liability stream `u`, i.e. with `X = −Σu`.
pub fn strategy_surface(
    model: &TreeModel,
    u: &PaymentStream,
    profile: &DisutilityProfile,
    settings: &ApproxSettings,
) -> Result<ValueSurface> {
    let x = aggregate_claim(model, u)?.neg();
    backward_sweep(model, &x, profile, settings)
}

/// `a ln(q/p)` with the convention `0·ln 0 = 0`.
fn entropy_term(a: f64, q: f64, p: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * (q / p).ln()
    }
}

/// Injections `x̂_t = (ln λ̂ − ln α_t + Σ_{s≤t} ln(q̂_s/p_s))/α_t` on `I`.
pub fn injection_path(
    surface: &ValueSurface,
    model: &TreeModel,
    scenario: &ScenarioPath,
    profile: &DisutilityProfile,
) -> Result<InjectionPath> {
    profile.check_horizon(model)?;
    let shadow = shadow_path(surface, model, scenario)?;
    Ok(injections_from_shadow(shadow, profile))
}

fn injections_from_shadow(shadow: ShadowPath, profile: &DisutilityProfile) -> InjectionPath {
    let log_lambda = (profile.log_alpha_sum() - shadow.k) / profile.tail(0);
    let mut injections = vec![0.0; shadow.prices.len()];
    let mut log_density = 0.0;
    for (t, x) in injections.iter_mut().enumerate() {
        if t > 0 {
            log_density += (shadow.realized_q[t - 1] / shadow.realized_p[t - 1]).ln();
        }
        if let Some(alpha) = profile.alpha(t) {
            *x = (log_lambda - alpha.ln() + log_density) / alpha;
        }
    }
    InjectionPath { injections, log_lambda, shadow }
}

/// Residuals of the strategy construction along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyDiagnostics {
    /// Largest residual of the per-node linear systems.
    pub node_residual: f64,
    /// `Δw^b_t + Δw^s_t Ŝ_t − a_t ln(q̂_t/p_t)` (at `t = 0`: `w_0·(1, Ŝ_0) + J_0(Ŝ_0)`).
    pub self_financing: Vec<f64>,
    /// Cost of the trade at the bid/ask minus its cost at the shadow price.
    pub spread_cost: Vec<f64>,
    /// Size of `ŷ_T` before it is set to zero.
    pub terminal_residual: f64,
}

impl StrategyDiagnostics {
    pub fn max_self_financing(&self) -> f64 {
        self.self_financing.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn max_spread_cost(&self) -> f64 {
        self.spread_cost.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// An optimal trading strategy along one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct TradePath {
    pub nodes: Vec<usize>,
    pub shadow_prices: Vec<f64>,
    pub bid: Vec<f64>,
    pub ask: Vec<f64>,
    pub injections: InjectionPath,
    /// Auxiliary process `w_t` for `t = 0..=T` (`w_{−1} = 0`).
    pub w: Vec<Portfolio>,
    /// Positions `ŷ_t` for `t = 0..=T` (`ŷ_{−1} = 0`, `ŷ_T = 0`).
    pub positions: Vec<Portfolio>,
    /// Liabilities `u_t` along the path.
    pub liabilities: Vec<Portfolio>,
    /// Portfolio bought at each date, `Δŷ_t + u_t`.
    pub trades: Vec<Portfolio>,
    /// Cash actually spent, `φ_t(Δŷ_t + u_t)`.
    pub realized_injections: Vec<f64>,
    pub diagnostics: StrategyDiagnostics,
}

impl TradePath {
    /// Realized injections settled on the injection set: cash flows at dates
    /// outside `I` are carried in the (riskless, discounted) bank account to
    /// the next date in `I`. Returns the settled injections and the amount
    /// left over after the last injection date.
    pub fn settled_injections(&self, profile: &DisutilityProfile) -> (Vec<f64>, f64) {
        let mut carry = 0.0;
        let mut settled = vec![0.0; self.realized_injections.len()];
        for (t, &x) in self.realized_injections.iter().enumerate() {
            carry += x;
            if profile.contains(t) {
                settled[t] = carry;
                carry = 0.0;
            }
        }
        (settled, carry)
    }

    /// `Σ_t v_t` of the settled injections. A leftover of at most
    /// `feasibility` after the last injection date is ignored.
    pub fn realized_disutility(&self, profile: &DisutilityProfile, feasibility: f64) -> f64 {
        let (settled, leftover) = self.settled_injections(profile);
        if leftover > feasibility {
            return f64::INFINITY;
        }
        settled.iter().enumerate().map(|(t, &x)| profile.disutility(t, x)).sum()
    }

    /// Largest positive cash injection at dates outside the injection set,
    /// before settlement.
    pub fn max_forbidden_injection(&self, profile: &DisutilityProfile) -> f64 {
        self.realized_injections
            .iter()
            .enumerate()
            .filter(|(t, _)| !profile.contains(*t))
            .fold(0.0, |m, (_, &x)| m.max(x))
    }

    /// Checks the shadow self-financing and trade-at-spread identities.
    pub fn verify(&self, tol: f64) -> Result<()> {
        let d = &self.diagnostics;
        for (t, r) in d.self_financing.iter().enumerate() {
            if r.abs() > tol {
                return Err(Error::Numeric(format!(
                    "shadow self-financing residual {r:e} at {}",
                    NodeId::new(t, self.nodes[t])
                )));
            }
        }
        for (t, c) in d.spread_cost.iter().enumerate() {
            if c.abs() > tol {
                return Err(Error::Infeasible {
                    node: NodeId::new(t, self.nodes[t]),
                    detail: format!(
                        "trade of {} shares at shadow price {} inside [{}, {}]",
                        self.trades[t].shares, self.shadow_prices[t], self.bid[t], self.ask[t]
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Least-squares solution of `w^b + w^s x_ν = r_ν`, or `None` if all
/// `x_ν` coincide.
fn solve_node_system(xs: &[f64], rs: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let rm = rs.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let scale = 1.0 + xm.abs();
    if sxx.sqrt() <= 1e-10 * scale {
        return None;
    }
    let sxr: f64 = xs.iter().zip(rs).map(|(x, r)| (x - xm) * (r - rm)).sum();
    let ws = sxr / sxx;
    Some((rm - ws * xm, ws))
}

/// Builds the optimal trading strategy for the liability `u` along
/// `scenario`. `surface` must have been built with `X = −Σu`.
pub fn trade_path(
    surface: &ValueSurface,
    model: &TreeModel,
    scenario: &ScenarioPath,
    u: &PaymentStream,
    profile: &DisutilityProfile,
) -> Result<TradePath> {
    let inj = injection_path(surface, model, scenario, profile)?;
    let horizon = model.horizon();
    let shadow = &inj.shadow;
    let s = &shadow.prices;
    let liabilities = u.along(&scenario.nodes);
    let total_u = liabilities.iter().fold(Portfolio::ZERO, |acc, &p| acc + p);

    let mut w = Vec::with_capacity(horizon + 1);
    let mut node_residual: f64 = 0.0;
    let mut prev = Portfolio::ZERO;
    for (t, step) in shadow.steps.iter().enumerate() {
        let a = step.entropy_weight;
        let active: Vec<usize> = (0..step.q.len()).filter(|&k| step.q[k] > 0.0).collect();
        let xs: Vec<f64> = active.iter().map(|&k| step.next_prices[k]).collect();
        let rs: Vec<f64> = active
            .iter()
            .map(|&k| -step.next_values[k] - entropy_term(a, step.q[k], step.priors[k]))
            .collect();
        let wt = match solve_node_system(&xs, &rs) {
            Some((wb, ws)) => Portfolio::new(wb, ws),
            None => {
                // degenerate successors: keep the stock position unchanged
                let ws = prev.shares;
                let wb = rs.iter().zip(&xs).map(|(r, x)| r - ws * x).sum::<f64>() / xs.len() as f64;
                Portfolio::new(wb, ws)
            }
        };
        let scale = 1.0 + rs.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let res = xs
            .iter()
            .zip(&rs)
            .fold(0.0f64, |m, (x, r)| m.max((wt.cash + wt.shares * x - r).abs()));
        if res > SOLVE_TOL * scale {
            return Err(Error::Numeric(format!(
                "node system residual {res:e} at {}",
                NodeId::new(t, scenario.nodes[t])
            )));
        }
        node_residual = node_residual.max(res);
        w.push(wt);
        prev = wt;
    }
    w.push(total_u);

    let mut positions = Vec::with_capacity(horizon + 1);
    let mut self_financing = Vec::with_capacity(horizon + 1);
    let mut y = Portfolio::ZERO;
    let mut w_prev = Portfolio::ZERO;
    for t in 0..=horizon {
        let dw = w[t] - w_prev;
        let x = inj.injections[t];
        let ut = liabilities[t];
        let (cash_term, sf) = if t == 0 {
            (shadow.k, dw.value_at(s[0]) + shadow.k)
        } else {
            let e = entropy_term(
                profile.tail(t),
                shadow.realized_q[t - 1],
                shadow.realized_p[t - 1],
            );
            (-e, dw.value_at(s[t]) - e)
        };
        y = Portfolio::new(y.cash + dw.cash + x - ut.cash + cash_term, y.shares + dw.shares - ut.shares);
        positions.push(y);
        self_financing.push(sf);
        w_prev = w[t];
    }
    let last = positions[horizon];
    let terminal_residual = last.cash.abs().max(last.shares.abs());
    let scale = 1.0 + shadow.k.abs() + total_u.cash.abs() + total_u.shares.abs() * s[horizon].abs();
    if terminal_residual > SOLVE_TOL * scale {
        return Err(Error::Numeric(format!("terminal position residual {terminal_residual:e}")));
    }
    positions[horizon] = Portfolio::ZERO;

    let mut bid = Vec::with_capacity(horizon + 1);
    let mut ask = Vec::with_capacity(horizon + 1);
    let mut trades = Vec::with_capacity(horizon + 1);
    let mut realized = Vec::with_capacity(horizon + 1);
    let mut spread_cost = Vec::with_capacity(horizon + 1);
    let mut y_prev = Portfolio::ZERO;
    for t in 0..=horizon {
        let node = model.node(scenario.node_id(t));
        let trade = positions[t] - y_prev + liabilities[t];
        let cost = portfolio_cost(node.bid, node.ask, trade);
        bid.push(node.bid);
        ask.push(node.ask);
        spread_cost.push(cost - trade.value_at(s[t]));
        realized.push(cost);
        trades.push(trade);
        y_prev = positions[t];
    }

    Ok(TradePath {
        nodes: scenario.nodes.clone(),
        shadow_prices: s.clone(),
        bid,
        ask,
        injections: inj,
        w,
        positions,
        liabilities,
        trades,
        realized_injections: realized,
        diagnostics: StrategyDiagnostics {
            node_residual,
            self_financing,
            spread_cost,
            terminal_residual,
        },
    })
}

/// Exhaustive check of the strategies over every path of a small tree.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyAudit {
    pub paths: usize,
    /// `V(u)` from `K`.
    pub value: f64,
    /// `E[Σ_t v_t(x̂_t)]`.
    pub injection_disutility: f64,
    /// `E[Σ_t v_t(φ_t(Δŷ_t + u_t))]`.
    pub realized_disutility: f64,
    pub max_self_financing: f64,
    pub max_spread_cost: f64,
    pub max_terminal_residual: f64,
    pub max_node_residual: f64,
    /// Largest positive injection off the injection set, before settlement.
    pub max_forbidden_injection: f64,
    /// Largest cash shortfall left after the last injection date.
    pub max_leftover: f64,
}

/// Runs [`trade_path`] on every path of `model`. Shortfalls of at most
/// `feasibility` after the last injection date are ignored and reported.
pub fn audit_strategies(
    surface: &ValueSurface,
    model: &TreeModel,
    u: &PaymentStream,
    profile: &DisutilityProfile,
    feasibility: f64,
) -> Result<StrategyAudit> {
    let paths = model.all_paths();
    let results: Vec<(f64, TradePath)> = paths
        .par_iter()
        .map(|(path, prob)| Ok((*prob, trade_path(surface, model, path, u, profile)?)))
        .collect::<Result<_>>()?;
    let k = results.first().map(|(_, tp)| tp.injections.shadow.k).unwrap_or(0.0);
    let mut audit = StrategyAudit {
        paths: results.len(),
        value: lambda_from_k(profile, k).value,
        injection_disutility: 0.0,
        realized_disutility: 0.0,
        max_self_financing: 0.0,
        max_spread_cost: 0.0,
        max_terminal_residual: 0.0,
        max_node_residual: 0.0,
        max_forbidden_injection: 0.0,
        max_leftover: 0.0,
    };
    for (prob, tp) in &results {
        audit.injection_disutility += prob * tp.injections.disutility(profile);
        audit.realized_disutility += prob * tp.realized_disutility(profile, feasibility);
        let d = &tp.diagnostics;
        audit.max_self_financing = audit.max_self_financing.max(d.max_self_financing());
        audit.max_spread_cost = audit.max_spread_cost.max(d.max_spread_cost());
        audit.max_terminal_residual = audit.max_terminal_residual.max(d.terminal_residual);
        audit.max_node_residual = audit.max_node_residual.max(d.node_residual);
        audit.max_forbidden_injection =
            audit.max_forbidden_injection.max(tp.max_forbidden_injection(profile));
        audit.max_leftover = audit.max_leftover.max(tp.settled_injections(profile).1);
    }
    Ok(audit)
}

/// Equal-width histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(samples: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if samples.is_empty() {
            return Histogram { edges: vec![0.0; bins + 1], counts: vec![0; bins] };
        }
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &x in samples {
            let i = (((x - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Histogram { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub const DEFAULT_BINS: usize = 40;
pub const QUANTILE_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Distribution of the optimal P&L `−Σ_{t∈I} x̂_t` over simulated scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct PnLSummary {
    pub seed: u64,
    pub scenarios: usize,
    /// Per-scenario P&L in scenario order.
    pub samples: Vec<f64>,
    pub mean: f64,
    pub std_error: f64,
    /// `(level, value)` at [`QUANTILE_LEVELS`].
    pub quantiles: Vec<(f64, f64)>,
    pub histogram: Histogram,
    /// Sample mean of `Σ_{t∈I} (Λ̂_t − 1) ln Λ̂_t / α_t`, an estimate of the
    /// (nonnegative) profit from trading against the real-world measure.
    pub profit_term: f64,
    /// Sample mean and standard error of `Σ_t v_t(x̂_t)`.
    pub disutility_mean: f64,
    pub disutility_std_error: f64,
    /// `V(u)`.
    pub value: f64,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], level: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = level * (sorted.len() - 1) as f64;
    let i = h.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (h - i as f64) * (sorted[j] - sorted[i])
}

/// Draws a path under the real-world measure. The generator is seeded from
/// `seed` and the scenario index selects an independent stream.
pub fn draw_scenario(model: &TreeModel, seed: u64, index: u64) -> ScenarioPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut nodes = vec![0usize];
    for t in 0..model.horizon() {
        let node = model.node(NodeId::new(t, nodes[t]));
        let r: f64 = rng.gen();
        let mut acc = 0.0;
        let mut child = node.succ.last().expect("non-terminal node").child;
        for e in &node.succ {
            acc += e.prob;
            if r < acc {
                child = e.child;
                break;
            }
        }
        nodes.push(child);
    }
    ScenarioPath { nodes }
}

/// Simulates the optimal P&L with a fresh backward sweep.
pub fn simulate_pnl(
    model: &TreeModel,
    u: &PaymentStream,
    profile: &DisutilityProfile,
    settings: &ApproxSettings,
    n_scenarios: usize,
    seed: u64,
) -> Result<PnLSummary> {
    let surface = strategy_surface(model, u, profile, settings)?;
    simulate_with_surface(&surface, model, profile, n_scenarios, seed)
}

pub fn simulate_with_surface(
    surface: &ValueSurface,
    model: &TreeModel,
    profile: &DisutilityProfile,
    n_scenarios: usize,
    seed: u64,
) -> Result<PnLSummary> {
    if n_scenarios == 0 {
        return Err(Error::InvalidInput("number of scenarios must be positive".into()));
    }
    profile.check_horizon(model)?;
    let rows: Vec<(f64, f64, f64)> = (0..n_scenarios as u64)
        .into_par_iter()
        .map(|i| {
            let path = draw_scenario(model, seed, i);
            let inj = injection_path(surface, model, &path, profile)?;
            let profit: f64 = profile
                .times()
                .into_iter()
                .map(|t| {
                    let l = inj.shadow.density[t];
                    (l - 1.0) * l.ln() / profile.alpha(t).unwrap()
                })
                .sum();
            Ok((inj.pnl(), profit, inj.disutility(profile)))
        })
        .collect::<Result<_>>()?;
    let samples: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let profits: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let disutilities: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let (mean, std_error) = mean_and_se(&samples);
    let (disutility_mean, disutility_std_error) = mean_and_se(&disutilities);
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let quantiles = QUANTILE_LEVELS.iter().map(|&l| (l, quantile(&sorted, l))).collect();
    let (_, k) = crate::dual::k_value(surface, model)?;
    Ok(PnLSummary {
        seed,
        scenarios: n_scenarios,
        histogram: Histogram::new(&samples, DEFAULT_BINS),
        mean,
        std_error,
        quantiles,
        profit_term: profits.iter().sum::<f64>() / n_scenarios as f64,
        disutility_mean,
        disutility_std_error,
        value: lambda_from_k(profile, k).value,
        samples,
    })
}
