//! Backward value surface, `K(X)`, and forward shadow prices.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market::{NodeId, ScenarioPath, TreeModel};
use crate::payoff::{AggregateClaim, DisutilityProfile};
use crate::pwl::{hull_lower, hull_upper, hull_value, ApproxSettings, HullChild, Method, PwlConvex};

/// Approximations of `J_t` at every node, built backwards from `J_T`.
#[derive(Debug, Clone)]
pub struct ValueSurface {
    settings: ApproxSettings,
    /// `a_t` for `t = 0..=T+1`.
    tails: Vec<f64>,
    functions: Vec<Vec<PwlConvex>>,
}

impl ValueSurface {
    pub fn method(&self) -> Method {
        self.settings.method
    }

    pub fn settings(&self) -> &ApproxSettings {
        &self.settings
    }

    pub fn horizon(&self) -> usize {
        self.functions.len() - 1
    }

    pub fn function(&self, node: NodeId) -> &PwlConvex {
        &self.functions[node.t][node.idx]
    }

    pub fn level(&self, t: usize) -> &[PwlConvex] {
        &self.functions[t]
    }

    /// Entropy weight `a_t`.
    pub fn tail(&self, t: usize) -> f64 {
        self.tails.get(t).copied().unwrap_or(0.0)
    }

    fn check_model(&self, model: &TreeModel) -> Result<()> {
        let same = model.horizon() == self.horizon()
            && (0..=model.horizon()).all(|t| model.level(t).len() == self.functions[t].len());
        if same {
            Ok(())
        } else {
            Err(Error::InvalidInput("value surface was built on a different model".into()))
        }
    }

    fn children<'a>(&'a self, model: &TreeModel, node: NodeId) -> Vec<HullChild<'a>> {
        model
            .node(node)
            .succ
            .iter()
            .map(|e| HullChild { f: &self.functions[node.t + 1][e.child], p: e.prob })
            .collect()
    }
}

/// Builds `J_t` for all nodes: `J_T(x) = X^b + x X^s` on the terminal spread,
/// then each `J_t` approximates the entropy-penalised hull of its successors
/// with weight `a_{t+1}`, restricted to the node's spread.
pub fn backward_sweep(
    model: &TreeModel,
    claim: &AggregateClaim,
    profile: &DisutilityProfile,
    settings: &ApproxSettings,
) -> Result<ValueSurface> {
    settings.validate()?;
    profile.check_horizon(model)?;
    let horizon = model.horizon();
    if claim.values.len() != model.level(horizon).len() {
        return Err(Error::InvalidInput(format!(
            "claim has {} terminal values but the model has {} terminal nodes",
            claim.values.len(),
            model.level(horizon).len()
        )));
    }
    let tails: Vec<f64> = (0..=horizon + 1).map(|t| profile.tail(t)).collect();
    let mut functions: Vec<Vec<PwlConvex>> = vec![Vec::new(); horizon + 1];
    functions[horizon] = model
        .level(horizon)
        .iter()
        .zip(&claim.values)
        .map(|(n, x)| PwlConvex::affine(n.bid, n.ask, x.cash, x.shares))
        .collect();
    for t in (0..horizon).rev() {
        let a = tails[t + 1];
        let next = &functions[t + 1];
        let level: Result<Vec<PwlConvex>> = model
            .level(t)
            .par_iter()
            .enumerate()
            .map(|(idx, node)| {
                let children: Vec<HullChild> = node
                    .succ
                    .iter()
                    .map(|e| HullChild { f: &next[e.child], p: e.prob })
                    .collect();
                let f = match settings.method {
                    Method::Upper => hull_upper(&children, a, node.bid, node.ask, settings),
                    Method::Lower => hull_lower(&children, a, node.bid, node.ask, settings),
                };
                f.map_err(|e| match e {
                    Error::Domain { .. } => Error::EmptyDomain { node: NodeId::new(t, idx) },
                    other => other,
                })
            })
            .collect();
        functions[t] = level?;
    }
    Ok(ValueSurface { settings: *settings, tails, functions })
}

/// `(Ŝ_0, K)` with `K = min J_0` over the root spread.
pub fn k_value(surface: &ValueSurface, model: &TreeModel) -> Result<(f64, f64)> {
    surface.check_model(model)?;
    let root = model.root();
    surface.function(NodeId::ROOT).min_on_interval(root.bid, root.ask)
}

/// Optimal successor weights and shadow prices at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowStep {
    pub node: NodeId,
    /// Shadow price at the node.
    pub price: f64,
    /// Successor indices in the next level, in the node's successor order.
    pub successors: Vec<usize>,
    pub priors: Vec<f64>,
    pub q: Vec<f64>,
    /// Shadow prices `Ŝ^ν_{t+1}` of the successors.
    pub next_prices: Vec<f64>,
    /// `J^ν_{t+1}(Ŝ^ν_{t+1})` at each successor.
    pub next_values: Vec<f64>,
    /// Dual variable of the hull at `price`.
    pub theta: f64,
    /// Constant `β` with `J^ν(Ŝ^ν) + a ln(q^ν/p^ν) = θ Ŝ^ν + β` on active successors.
    pub intercept: f64,
    /// Hull value at `price` (optimal one-step objective).
    pub value: f64,
    pub entropy_weight: f64,
    /// `|Σ q Ŝ^ν − Ŝ|`.
    pub martingale_error: f64,
}

/// Re-solves the hull at `price` over the node's successors.
pub fn shadow_step(
    surface: &ValueSurface,
    model: &TreeModel,
    node: NodeId,
    price: f64,
) -> Result<ShadowStep> {
    surface.check_model(model)?;
    if node.t >= model.horizon() {
        return Err(Error::InvalidInput(format!("node {node} is terminal")));
    }
    let f = surface.function(node);
    let tol = 1e-9 * (1.0 + price.abs());
    if !(price >= f.lo() - tol && price <= f.hi() + tol) {
        return Err(Error::Domain { x: price, lo: f.lo(), hi: f.hi() });
    }
    let price = price.clamp(f.lo(), f.hi());
    let children = surface.children(model, node);
    let a = surface.tail(node.t + 1);
    let sol = hull_value(&children, a, price, surface.settings())?;
    let successors: Vec<usize> = model.node(node).succ.iter().map(|e| e.child).collect();
    let priors: Vec<f64> = model.node(node).succ.iter().map(|e| e.prob).collect();
    let next_values: Vec<f64> =
        children.iter().zip(&sol.x).map(|(c, &x)| c.f.eval_snapped(x)).collect();
    Ok(ShadowStep {
        node,
        price,
        successors,
        priors,
        q: sol.q,
        next_prices: sol.x,
        next_values,
        theta: sol.theta,
        intercept: sol.intercept,
        value: sol.value,
        entropy_weight: a,
        martingale_error: sol.residual,
    })
}

/// Shadow prices, weights and density along one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowPath {
    pub nodes: Vec<usize>,
    /// `Ŝ_t` for `t = 0..=T`.
    pub prices: Vec<f64>,
    /// Solved step at each `t < T`.
    pub steps: Vec<ShadowStep>,
    /// Realised transition weight `q̂_t` for `t = 1..=T` (index `t−1`).
    pub realized_q: Vec<f64>,
    /// Realised prior `p_t` for `t = 1..=T` (index `t−1`).
    pub realized_p: Vec<f64>,
    /// `Λ̂_t = Π_{s≤t} q̂_s/p_s`, with `Λ̂_0 = 1`.
    pub density: Vec<f64>,
    /// `K = J_0(Ŝ_0)`.
    pub k: f64,
}

/// Iterates [`shadow_step`] from the root minimiser along `scenario`.
pub fn shadow_path(
    surface: &ValueSurface,
    model: &TreeModel,
    scenario: &ScenarioPath,
) -> Result<ShadowPath> {
    scenario.validate(model)?;
    let (s0, k) = k_value(surface, model)?;
    let horizon = model.horizon();
    let mut prices = vec![s0];
    let mut steps = Vec::with_capacity(horizon);
    let mut realized_q = Vec::with_capacity(horizon);
    let mut realized_p = Vec::with_capacity(horizon);
    let mut density = vec![1.0];
    for t in 0..horizon {
        let step = shadow_step(surface, model, scenario.node_id(t), prices[t])?;
        let pos = step
            .successors
            .iter()
            .position(|&c| c == scenario.nodes[t + 1])
            .expect("validated scenario");
        let (q, p) = (step.q[pos], step.priors[pos]);
        prices.push(step.next_prices[pos]);
        realized_q.push(q);
        realized_p.push(p);
        density.push(density[t] * q / p);
        steps.push(step);
    }
    Ok(ShadowPath { nodes: scenario.nodes.clone(), prices, steps, realized_q, realized_p, density, k })
}

/// Per-node transition weights (aligned with each node's successor list) and
/// a price selection, describing a pair `(Q, S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingalePair {
    pub weights: Vec<Vec<Vec<f64>>>,
    pub prices: Vec<Vec<f64>>,
}

/// Weighted relative entropy plus terminal expectation for a given pair:
/// `Σ_t a_{t+1} E_Q[Σ_ν q ln(q/p)] + E_Q[X^b + X^s S_T]`.
pub fn entropy_h(
    model: &TreeModel,
    pair: &MartingalePair,
    profile: &DisutilityProfile,
    claim: &AggregateClaim,
    tol: f64,
) -> Result<f64> {
    profile.check_horizon(model)?;
    let horizon = model.horizon();
    let mut reach: Vec<f64> = vec![1.0];
    let mut total = 0.0;
    for t in 0..=horizon {
        for (i, node) in model.level(t).iter().enumerate() {
            let s = pair.prices[t][i];
            let ptol = tol * (1.0 + s.abs());
            if s < node.bid - ptol || s > node.ask + ptol {
                return Err(Error::InvalidInput(format!(
                    "price {s} at node {} lies outside the spread",
                    NodeId::new(t, i)
                )));
            }
        }
        if t == horizon {
            break;
        }
        let a = profile.tail(t + 1);
        let mut next = vec![0.0; model.level(t + 1).len()];
        for (i, node) in model.level(t).iter().enumerate() {
            let w = &pair.weights[t][i];
            if w.len() != node.succ.len() || w.iter().any(|&q| q < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "bad transition weights at node {}",
                    NodeId::new(t, i)
                )));
            }
            let sum: f64 = w.iter().sum();
            let mean: f64 = node.succ.iter().zip(w).map(|(e, q)| q * pair.prices[t + 1][e.child]).sum();
            let s = pair.prices[t][i];
            if (sum - 1.0).abs() > tol || (mean - s).abs() > tol * (1.0 + s.abs()) {
                return Err(Error::InvalidInput(format!(
                    "pair is not a martingale at node {} (mean {mean}, price {s})",
                    NodeId::new(t, i)
                )));
            }
            let ent: f64 = node
                .succ
                .iter()
                .zip(w)
                .map(|(e, &q)| if q > 0.0 { q * (q / e.prob).ln() } else { 0.0 })
                .sum();
            total += reach[i] * a * ent;
            for (e, &q) in node.succ.iter().zip(w) {
                next[e.child] += reach[i] * q;
            }
        }
        reach = next;
    }
    let terminal: f64 = reach
        .iter()
        .zip(&claim.values)
        .zip(&pair.prices[horizon])
        .map(|((r, x), s)| r * (x.cash + x.shares * s))
        .sum();
    Ok(total + terminal)
}
