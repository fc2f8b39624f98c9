//! Payment streams, option constructors, and the disutility profile.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::market::{NodeId, Portfolio, TreeModel};

/// Adapted portfolio-valued payments `c_t = (c^b_t, c^s_t)` keyed by node.
/// Nodes that are absent pay nothing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PaymentStream {
    entries: BTreeMap<NodeId, Portfolio>,
}

impl PaymentStream {
    pub fn zero() -> Self {
        PaymentStream::default()
    }

    /// Cash amount `delta` paid at the root.
    pub fn cash_at_root(delta: f64) -> Self {
        let mut s = PaymentStream::zero();
        s.add(NodeId::ROOT, Portfolio::cash(delta));
        s
    }

    /// Cash amount (in model units) paid at every node of time `t`.
    pub fn cash_at_time(model: &TreeModel, t: usize, amount: f64) -> Self {
        let mut s = PaymentStream::zero();
        for idx in 0..model.level(t).len() {
            s.add(NodeId::new(t, idx), Portfolio::cash(amount));
        }
        s
    }

    pub fn get(&self, node: NodeId) -> Portfolio {
        self.entries.get(&node).copied().unwrap_or_default()
    }

    pub fn set(&mut self, node: NodeId, value: Portfolio) {
        if value.is_zero() {
            self.entries.remove(&node);
        } else {
            self.entries.insert(node, value);
        }
    }

    pub fn add(&mut self, node: NodeId, value: Portfolio) {
        let v = self.get(node) + value;
        self.set(node, v);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &Portfolio)> {
        self.entries.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = PaymentStream::zero();
        for (&k, v) in &self.entries {
            out.set(k, v.scale(s));
        }
        out
    }

    pub fn plus(&self, other: &PaymentStream) -> Self {
        let mut out = self.clone();
        for (&k, &v) in &other.entries {
            out.add(k, v);
        }
        out
    }

    pub fn minus(&self, other: &PaymentStream) -> Self {
        self.plus(&other.scaled(-1.0))
    }

    /// Subtracts cash `delta` at the root.
    pub fn shift_cash(&self, delta: f64) -> Self {
        let mut out = self.clone();
        out.add(NodeId::ROOT, Portfolio::cash(-delta));
        out
    }

    /// Checks that every entry refers to an existing node of `model`.
    pub fn validate(&self, model: &TreeModel) -> Result<()> {
        for (id, v) in &self.entries {
            if id.t > model.horizon() || id.idx >= model.level(id.t).len() {
                return Err(Error::InvalidInput(format!("payment at missing node {id}")));
            }
            if !(v.cash.is_finite() && v.shares.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite payment at node {id}")));
            }
        }
        Ok(())
    }

    /// Transfers a stream defined on a lattice onto its expanded path tree.
    pub fn lift_to_paths(&self, origin: &[Vec<usize>]) -> Self {
        let mut out = PaymentStream::zero();
        for (t, level) in origin.iter().enumerate() {
            for (idx, &src) in level.iter().enumerate() {
                let v = self.get(NodeId::new(t, src));
                out.set(NodeId::new(t, idx), v);
            }
        }
        out
    }

    /// Payments along a scenario path, one per time.
    pub fn along(&self, nodes: &[usize]) -> Vec<Portfolio> {
        nodes.iter().enumerate().map(|(t, &i)| self.get(NodeId::new(t, i))).collect()
    }
}

/// Terminal claim `X = Σ_t c_t`, one portfolio per terminal node.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateClaim {
    pub values: Vec<Portfolio>,
}

impl AggregateClaim {
    pub fn zero(model: &TreeModel) -> Self {
        AggregateClaim { values: vec![Portfolio::ZERO; model.level(model.horizon()).len()] }
    }

    pub fn neg(&self) -> Self {
        AggregateClaim { values: self.values.iter().map(|&v| -v).collect() }
    }

    pub fn plus(&self, other: &AggregateClaim) -> Self {
        AggregateClaim {
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn plus_cash(&self, delta: f64) -> Self {
        AggregateClaim {
            values: self.values.iter().map(|&v| v + Portfolio::cash(delta)).collect(),
        }
    }
}

/// Sums each stream along the paths to the terminal nodes. On a tree in which
/// some node is reachable along several paths, the partial sums must agree
/// across those paths; otherwise the stream needs the expanded path tree.
pub fn aggregate_claim(model: &TreeModel, stream: &PaymentStream) -> Result<AggregateClaim> {
    stream.validate(model)?;
    let mut acc: Vec<Option<Portfolio>> = vec![None; 1];
    acc[0] = Some(stream.get(NodeId::ROOT));
    for t in 0..model.horizon() {
        let mut next: Vec<Option<Portfolio>> = vec![None; model.level(t + 1).len()];
        for (i, node) in model.level(t).iter().enumerate() {
            let here = acc[i].expect("every node is reachable");
            for e in &node.succ {
                let v = here + stream.get(NodeId::new(t + 1, e.child));
                match next[e.child] {
                    None => next[e.child] = Some(v),
                    Some(prev) => {
                        let scale = 1.0 + prev.cash.abs().max(prev.shares.abs());
                        if (prev.cash - v.cash).abs() > 1e-12 * scale
                            || (prev.shares - v.shares).abs() > 1e-12 * scale
                        {
                            return Err(Error::InvalidInput(format!(
                                "payment stream is path-dependent at node {}; \
                                 use the path-tree mode",
                                NodeId::new(t + 1, e.child)
                            )));
                        }
                    }
                }
            }
        }
        acc = next;
    }
    Ok(AggregateClaim { values: acc.into_iter().map(|v| v.unwrap_or_default()).collect() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionKind {
    Call,
    Put,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Settlement {
    Cash,
    Physical,
}

/// European option on the stock, exercised when in the money at `expiry`
/// with respect to the (discounted) mid price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionSpec {
    pub kind: OptionKind,
    pub settlement: Settlement,
    /// Strike in nominal currency units at expiry.
    pub strike: f64,
    pub expiry: usize,
    /// Whether nodes where the mid price equals the strike (up to rounding
    /// in the lattice construction) are exercised. Irrelevant for cash
    /// settlement; for physical delivery under costs it changes the claim.
    pub exercise_at_money: bool,
}

impl OptionSpec {
    pub fn stream(&self, model: &TreeModel) -> Result<PaymentStream> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(Error::InvalidInput("strike must be positive".into()));
        }
        if self.expiry > model.horizon() {
            return Err(Error::InvalidInput(format!(
                "expiry {} exceeds the horizon {}",
                self.expiry,
                model.horizon()
            )));
        }
        let t = self.expiry;
        let k = self.strike * model.discount(t);
        let mut s = PaymentStream::zero();
        for (idx, node) in model.level(t).iter().enumerate() {
            let sign = match self.kind {
                OptionKind::Call => 1.0,
                OptionKind::Put => -1.0,
            };
            let moneyness = sign * (node.mid - k);
            let at_money = moneyness.abs() <= 1e-9 * k;
            if at_money {
                if !self.exercise_at_money || self.settlement == Settlement::Cash {
                    continue;
                }
            } else if moneyness < 0.0 {
                continue;
            }
            let moneyness = moneyness.max(0.0);
            let pay = match self.settlement {
                Settlement::Physical => Portfolio::new(-sign * k, sign),
                Settlement::Cash => Portfolio::cash(moneyness),
            };
            s.set(NodeId::new(t, idx), pay);
        }
        Ok(s)
    }
}

/// Call with physical delivery at the horizon: `(−K, 1)` where the stock
/// ends above the strike.
pub fn call_physical(model: &TreeModel, strike: f64) -> Result<PaymentStream> {
    OptionSpec {
        kind: OptionKind::Call,
        settlement: Settlement::Physical,
        strike,
        expiry: model.horizon(),
        exercise_at_money: false,
    }
    .stream(model)
}

/// Exponential disutility data: injection dates with their risk aversions.
#[derive(Debug, Clone, PartialEq)]
pub struct DisutilityProfile {
    horizon: usize,
    /// `alpha[t]` is `Some(α_t)` exactly for `t ∈ I`.
    alpha: Vec<Option<f64>>,
    /// Tail sums `a_t` for `t = 0..=T+1`.
    tails: Vec<f64>,
}

impl DisutilityProfile {
    pub fn new(horizon: usize, injections: &[(usize, f64)]) -> Result<Self> {
        if injections.is_empty() {
            return Err(Error::InvalidInput("injection set must be nonempty".into()));
        }
        let mut alpha = vec![None; horizon + 1];
        for &(t, a) in injections {
            if t > horizon {
                return Err(Error::InvalidInput(format!(
                    "injection time {t} exceeds the horizon {horizon}"
                )));
            }
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "risk aversion at time {t} must be positive"
                )));
            }
            if alpha[t].is_some() {
                return Err(Error::InvalidInput(format!("injection time {t} listed twice")));
            }
            alpha[t] = Some(a);
        }
        let mut tails = vec![0.0; horizon + 2];
        for t in (0..=horizon).rev() {
            tails[t] = tails[t + 1] + alpha[t].map_or(0.0, |a| 1.0 / a);
        }
        Ok(DisutilityProfile { horizon, alpha, tails })
    }

    /// Same risk aversion at every time in `times`.
    pub fn constant(horizon: usize, times: &[usize], alpha: f64) -> Result<Self> {
        let inj: Vec<(usize, f64)> = times.iter().map(|&t| (t, alpha)).collect();
        Self::new(horizon, &inj)
    }

    /// Injections allowed at every date.
    pub fn every_date(horizon: usize, alpha: f64) -> Result<Self> {
        Self::constant(horizon, &(0..=horizon).collect::<Vec<_>>(), alpha)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn alpha(&self, t: usize) -> Option<f64> {
        self.alpha.get(t).copied().flatten()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.alpha(t).is_some()
    }

    /// Injection dates in increasing order.
    pub fn times(&self) -> Vec<usize> {
        (0..=self.horizon).filter(|&t| self.contains(t)).collect()
    }

    pub fn count(&self) -> usize {
        self.alpha.iter().flatten().count()
    }

    /// `a_t = Σ_{k ∈ I, k ≥ t} 1/α_k`, zero beyond the horizon.
    pub fn tail(&self, t: usize) -> f64 {
        self.tails.get(t).copied().unwrap_or(0.0)
    }

    /// `Σ_{t ∈ I} ln(α_t)/α_t`.
    pub fn log_alpha_sum(&self) -> f64 {
        self.alpha.iter().flatten().map(|a| a.ln() / a).sum()
    }

    /// `v_t(x) = e^{α_t x} − 1` on injection dates; elsewhere 0 for `x ≤ 0`
    /// and `+∞` otherwise.
    pub fn disutility(&self, t: usize, x: f64) -> f64 {
        match self.alpha(t) {
            Some(a) => (a * x).exp_m1(),
            None if x <= 0.0 => 0.0,
            None => f64::INFINITY,
        }
    }

    /// Checks that the profile spans the model's horizon.
    pub fn check_horizon(&self, model: &TreeModel) -> Result<()> {
        if self.horizon != model.horizon() {
            return Err(Error::InvalidInput(format!(
                "disutility profile has horizon {} but the model has {}",
                self.horizon,
                model.horizon()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{Edge, LatticeParams, Node};

    fn lattice(steps: usize) -> TreeModel {
        TreeModel::binomial(&LatticeParams {
            steps,
            s0: 100.0,
            sigma: 0.2,
            rate: 0.02,
            cost: 0.005,
            p: 0.5,
        })
        .unwrap()
    }

    #[test]
    fn call_is_supported_on_in_the_money_leaves() {
        let m = lattice(52);
        let c = call_physical(&m, 100.0).unwrap();
        let disc = m.discount(52);
        for (id, v) in c.iter() {
            assert_eq!(id.t, 52);
            assert!(m.node(*id).mid > 100.0 * disc);
            assert_eq!(*v, Portfolio::new(-100.0 * disc, 1.0));
        }
        let itm = m.level(52).iter().filter(|n| n.mid > 100.0 * disc).count();
        assert_eq!(c.iter().count(), itm);
        assert!(call_physical(&m, 1e6).unwrap().is_zero());
    }

    #[test]
    fn at_the_money_leaf_is_exercised_only_on_request() {
        let m = lattice(52);
        let spec = OptionSpec {
            kind: OptionKind::Call,
            settlement: Settlement::Physical,
            strike: 100.0,
            expiry: 52,
            exercise_at_money: true,
        };
        let atm = NodeId::new(52, 26);
        assert!(call_physical(&m, 100.0).unwrap().get(atm).is_zero());
        let incl = spec.stream(&m).unwrap();
        assert_eq!(incl.get(atm).shares, 1.0);
        assert_eq!(incl.iter().count(), call_physical(&m, 100.0).unwrap().iter().count() + 1);
        let put = OptionSpec { kind: OptionKind::Put, settlement: Settlement::Cash, ..spec };
        let p = put.stream(&m).unwrap();
        assert!(p.get(atm).is_zero());
        for (id, v) in p.iter() {
            assert!((v.cash - (100.0 * m.discount(52) - m.node(*id).mid)).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_of_zero_and_root_cash() {
        let m = lattice(4);
        let z = aggregate_claim(&m, &PaymentStream::zero()).unwrap();
        assert!(z.values.iter().all(|v| v.is_zero()));
        let x = aggregate_claim(&m, &PaymentStream::cash_at_root(2.5)).unwrap();
        assert!(x.values.iter().all(|v| *v == Portfolio::cash(2.5)));
    }

    #[test]
    fn shift_cash_roundtrip_and_linearity() {
        let m = lattice(4);
        let c = call_physical(&m, 100.0).unwrap();
        assert_eq!(c.shift_cash(1.5).shift_cash(-1.5), c);
        let a = aggregate_claim(&m, &c).unwrap();
        let b = aggregate_claim(&m, &c.shift_cash(1.5)).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x.cash - 1.5 - y.cash).abs() < 1e-12 && x.shares == y.shares);
        }
        let d = PaymentStream::cash_at_time(&m, 2, 0.7);
        let sum = aggregate_claim(&m, &c.plus(&d)).unwrap();
        let parts = aggregate_claim(&m, &c).unwrap().plus(&aggregate_claim(&m, &d).unwrap());
        assert_eq!(sum, parts);
    }

    #[test]
    fn path_dependent_stream_rejected_on_lattice() {
        let m = lattice(3);
        let mut s = PaymentStream::zero();
        s.set(NodeId::new(1, 1), Portfolio::cash(1.0));
        assert!(aggregate_claim(&m, &s).is_err());
        let (tree, origin) = m.expand_paths().unwrap();
        let lifted = s.lift_to_paths(&origin);
        let x = aggregate_claim(&tree, &lifted).unwrap();
        assert_eq!(x.values.iter().filter(|v| v.cash == 1.0).count(), 4);
    }

    #[test]
    fn one_step_cash_payoff() {
        let levels = vec![
            vec![Node::new(100.0, 100.0, vec![Edge { child: 0, prob: 0.5 }, Edge { child: 1, prob: 0.5 }])],
            vec![Node::new(104.0, 106.0, vec![]), Node::new(94.0, 97.0, vec![])],
        ];
        let m = TreeModel::from_levels(levels, None).unwrap();
        let mut s = PaymentStream::zero();
        s.set(NodeId::new(1, 0), Portfolio::cash(3.0));
        s.set(NodeId::new(1, 1), Portfolio::cash(-1.0));
        let x = aggregate_claim(&m, &s).unwrap();
        assert_eq!(x.values, vec![Portfolio::cash(3.0), Portfolio::cash(-1.0)]);
    }

    #[test]
    fn profile_tail_sums() {
        let p = DisutilityProfile::new(4, &[(0, 0.5), (2, 0.25)]).unwrap();
        assert_eq!(p.tail(0), 6.0);
        assert_eq!(p.tail(1), 4.0);
        assert_eq!(p.tail(2), 4.0);
        assert_eq!(p.tail(3), 0.0);
        assert_eq!(p.tail(5), 0.0);
        assert_eq!(p.count(), 2);
        assert_eq!(p.times(), vec![0, 2]);
        let err = DisutilityProfile::new(4, &[]).unwrap_err();
        assert!(err.to_string().contains("injection set must be nonempty"));
        assert!(DisutilityProfile::new(4, &[(5, 1.0)]).is_err());
        assert!(DisutilityProfile::new(4, &[(1, 0.0)]).is_err());
    }

    #[test]
    fn disutility_values() {
        let p = DisutilityProfile::constant(2, &[1], 2.0).unwrap();
        assert_eq!(p.disutility(1, 0.0), 0.0);
        assert!((p.disutility(1, 0.5) - (1f64.exp() - 1.0)).abs() < 1e-15);
        assert_eq!(p.disutility(0, -1.0), 0.0);
        assert_eq!(p.disutility(0, 1e-3), f64::INFINITY);
    }
}
