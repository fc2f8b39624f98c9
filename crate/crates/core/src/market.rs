//! Finite event trees with bid/ask stock prices and constant (discounted) cash.
//!
//! A [`TreeModel`] stores its nodes level by level. Each non-terminal node
//! carries an explicit successor list with transition probabilities, so the
//! same type represents both recombinant lattices (where a node may be reached
//! along several paths) and general path trees.

use crate::error::{Error, Result};

/// Identifies a node by its time step and its index within that level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub t: usize,
    pub idx: usize,
}

impl NodeId {
    pub const ROOT: NodeId = NodeId { t: 0, idx: 0 };

    pub fn new(t: usize, idx: usize) -> Self {
        NodeId { t, idx }
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(t={}, node={})", self.t, self.idx)
    }
}

/// A portfolio (or payment) of `cash` units of cash and `shares` units of stock.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Portfolio {
    pub cash: f64,
    pub shares: f64,
}

impl Portfolio {
    pub const ZERO: Portfolio = Portfolio { cash: 0.0, shares: 0.0 };

    pub fn new(cash: f64, shares: f64) -> Self {
        Portfolio { cash, shares }
    }

    pub fn cash(cash: f64) -> Self {
        Portfolio { cash, shares: 0.0 }
    }

    /// Value of the portfolio in a frictionless market with stock price `price`.
    pub fn value_at(&self, price: f64) -> f64 {
        self.cash + self.shares * price
    }

    pub fn is_zero(&self) -> bool {
        self.cash == 0.0 && self.shares == 0.0
    }

    pub fn scale(&self, s: f64) -> Self {
        Portfolio::new(self.cash * s, self.shares * s)
    }
}

impl std::ops::Add for Portfolio {
    type Output = Portfolio;
    fn add(self, o: Portfolio) -> Portfolio {
        Portfolio::new(self.cash + o.cash, self.shares + o.shares)
    }
}

impl std::ops::Sub for Portfolio {
    type Output = Portfolio;
    fn sub(self, o: Portfolio) -> Portfolio {
        Portfolio::new(self.cash - o.cash, self.shares - o.shares)
    }
}

impl std::ops::Neg for Portfolio {
    type Output = Portfolio;
    fn neg(self) -> Portfolio {
        Portfolio::new(-self.cash, -self.shares)
    }
}

impl std::ops::AddAssign for Portfolio {
    fn add_assign(&mut self, o: Portfolio) {
        self.cash += o.cash;
        self.shares += o.shares;
    }
}

/// Transition from a node to one of its successors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// Index of the successor in the next level.
    pub child: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub bid: f64,
    pub ask: f64,
    /// Reference (mid) price used to decide moneyness of option payoffs.
    pub mid: f64,
    pub succ: Vec<Edge>,
}

impl Node {
    pub fn new(bid: f64, ask: f64, succ: Vec<Edge>) -> Self {
        Node { bid, ask, mid: 0.5 * (bid + ask), succ }
    }

    pub fn spread(&self) -> (f64, f64) {
        (self.bid, self.ask)
    }
}

/// Parameters of the recombinant binomial lattice with proportional costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeParams {
    /// Number of steps; the lattice spans one year.
    pub steps: usize,
    pub s0: f64,
    /// Annual volatility.
    pub sigma: f64,
    /// Annual effective interest rate used for discounting.
    pub rate: f64,
    /// Proportional transaction cost; ask = (1+k)S, bid = (1-k)S for t > 0.
    pub cost: f64,
    /// Real-world probability of an up move.
    pub p: f64,
}

impl LatticeParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(msg.to_string()));
        if self.steps < 1 {
            return bad("lattice steps must be at least 1");
        }
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return bad("initial price must be positive");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("volatility must be nonnegative");
        }
        if !(self.rate > -1.0 && self.rate.is_finite()) {
            return bad("interest rate must exceed -1");
        }
        if !(0.0..1.0).contains(&self.cost) {
            return bad("transaction cost must lie in [0, 1)");
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad("up probability must lie in (0, 1)");
        }
        Ok(())
    }

    fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    pub fn up_factor(&self) -> f64 {
        (self.sigma * self.dt().sqrt()).exp()
    }

    pub fn down_factor(&self) -> f64 {
        (-self.sigma * self.dt().sqrt()).exp()
    }

    /// One-step growth factor of cash, `(1 + r_e)^(1/T)`.
    pub fn growth(&self) -> f64 {
        (1.0 + self.rate).powf(self.dt())
    }

    /// Discount factor applied to nominal amounts at time `t`.
    pub fn discount(&self, t: usize) -> f64 {
        (1.0 + self.rate).powf(-(t as f64) * self.dt())
    }

    /// Risk-neutral up probability of the frictionless lattice.
    pub fn risk_neutral_probability(&self) -> f64 {
        let (u, d) = (self.up_factor(), self.down_factor());
        (self.growth() - d) / (u - d)
    }
}

/// Finite filtration tree with bid/ask prices in discounted units.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    levels: Vec<Vec<Node>>,
    discount: Vec<f64>,
    lattice: bool,
}

impl TreeModel {
    /// Builds a model from explicit levels. `discount[t]` converts nominal
    /// cash amounts at time `t` into the model's units; pass `None` when the
    /// prices are already discounted.
    pub fn from_levels(levels: Vec<Vec<Node>>, discount: Option<Vec<f64>>) -> Result<Self> {
        let horizon = levels.len().checked_sub(1).ok_or_else(|| {
            Error::InvalidInput("a tree needs at least one level".to_string())
        })?;
        let discount = discount.unwrap_or_else(|| vec![1.0; horizon + 1]);
        if discount.len() != horizon + 1 {
            return Err(Error::InvalidInput(format!(
                "expected {} discount factors, got {}",
                horizon + 1,
                discount.len()
            )));
        }
        let mut model = TreeModel { levels, discount, lattice: false };
        model.validate()?;
        model.lattice = model.has_shared_nodes();
        Ok(model)
    }

    /// Recombinant binomial lattice; node `j` at time `t` has `j` up moves.
    pub fn binomial(params: &LatticeParams) -> Result<Self> {
        params.validate()?;
        let (u, d) = (params.up_factor(), params.down_factor());
        let steps = params.steps;
        let mut levels = Vec::with_capacity(steps + 1);
        for t in 0..=steps {
            let disc = params.discount(t);
            let level = (0..=t)
                .map(|j| {
                    let mid = params.s0 * u.powi(j as i32) * d.powi((t - j) as i32) * disc;
                    let (bid, ask) = if t == 0 {
                        (mid, mid)
                    } else {
                        ((1.0 - params.cost) * mid, (1.0 + params.cost) * mid)
                    };
                    let succ = if t < steps {
                        vec![
                            Edge { child: j + 1, prob: params.p },
                            Edge { child: j, prob: 1.0 - params.p },
                        ]
                    } else {
                        Vec::new()
                    };
                    Node { bid, ask, mid, succ }
                })
                .collect();
            levels.push(level);
        }
        let discount = (0..=steps).map(|t| params.discount(t)).collect();
        let model = TreeModel { levels, discount, lattice: true };
        model.validate()?;
        Ok(model)
    }

    /// Copy of the model whose root quotes `(1−k)S_0` and `(1+k)S_0`
    /// instead of a single price.
    pub fn with_root_spread(&self, cost: f64) -> Result<TreeModel> {
        if !(0.0..1.0).contains(&cost) {
            return Err(Error::InvalidInput("transaction cost must lie in [0, 1)".into()));
        }
        let mut model = self.clone();
        let root = &mut model.levels[0][0];
        root.bid = (1.0 - cost) * root.mid;
        root.ask = (1.0 + cost) * root.mid;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.levels[0].len() != 1 {
            return Err(Error::InvalidInput("the first level must contain exactly one node".into()));
        }
        let horizon = self.horizon();
        for (t, level) in self.levels.iter().enumerate() {
            if level.is_empty() {
                return Err(Error::InvalidInput(format!("level {t} has no nodes")));
            }
            for (idx, node) in level.iter().enumerate() {
                let id = NodeId::new(t, idx);
                if !(node.bid > 0.0 && node.bid <= node.ask && node.ask.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "node {id}: prices must satisfy 0 < bid <= ask (bid={}, ask={})",
                        node.bid, node.ask
                    )));
                }
                if t == horizon {
                    if !node.succ.is_empty() {
                        return Err(Error::InvalidInput(format!("terminal node {id} has successors")));
                    }
                    continue;
                }
                if node.succ.is_empty() {
                    return Err(Error::InvalidInput(format!("node {id} has no successors")));
                }
                let mut total = 0.0;
                for e in &node.succ {
                    if e.child >= self.levels[t + 1].len() {
                        return Err(Error::InvalidInput(format!(
                            "node {id} links to missing successor {}",
                            e.child
                        )));
                    }
                    if !(e.prob > 0.0 && e.prob <= 1.0) {
                        return Err(Error::InvalidInput(format!(
                            "node {id}: transition probabilities must lie in (0, 1]"
                        )));
                    }
                    total += e.prob;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "node {id}: transition probabilities sum to {total}"
                    )));
                }
            }
        }
        // every non-root node must be reachable
        for t in 1..=horizon {
            let mut seen = vec![false; self.levels[t].len()];
            for node in &self.levels[t - 1] {
                for e in &node.succ {
                    seen[e.child] = true;
                }
            }
            if let Some(idx) = seen.iter().position(|s| !s) {
                return Err(Error::InvalidInput(format!(
                    "node {} is unreachable",
                    NodeId::new(t, idx)
                )));
            }
        }
        Ok(())
    }

    fn has_shared_nodes(&self) -> bool {
        self.parent_counts().iter().flatten().any(|&c| c > 1)
    }

    fn parent_counts(&self) -> Vec<Vec<usize>> {
        let mut counts: Vec<Vec<usize>> = self.levels.iter().map(|l| vec![0; l.len()]).collect();
        counts[0][0] = 1;
        for t in 0..self.horizon() {
            for node in &self.levels[t] {
                for e in &node.succ {
                    counts[t + 1][e.child] += 1;
                }
            }
        }
        counts
    }

    pub fn horizon(&self) -> usize {
        self.levels.len() - 1
    }

    /// Whether some node is reached along more than one path.
    pub fn is_lattice(&self) -> bool {
        self.lattice
    }

    pub fn level(&self, t: usize) -> &[Node] {
        &self.levels[t]
    }

    pub fn levels(&self) -> &[Vec<Node>] {
        &self.levels
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.levels[id.t][id.idx]
    }

    pub fn root(&self) -> &Node {
        &self.levels[0][0]
    }

    pub fn discount(&self, t: usize) -> f64 {
        self.discount[t]
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    /// Number of distinct root-to-node paths reaching each node.
    pub fn path_multiplicity(&self) -> Vec<Vec<f64>> {
        let mut mult: Vec<Vec<f64>> = self.levels.iter().map(|l| vec![0.0; l.len()]).collect();
        mult[0][0] = 1.0;
        for t in 0..self.horizon() {
            for (i, node) in self.levels[t].iter().enumerate() {
                let m = mult[t][i];
                for e in &node.succ {
                    mult[t + 1][e.child] += m;
                }
            }
        }
        mult
    }

    /// Real-world probability of each node.
    pub fn node_probabilities(&self) -> Vec<Vec<f64>> {
        let mut prob: Vec<Vec<f64>> = self.levels.iter().map(|l| vec![0.0; l.len()]).collect();
        prob[0][0] = 1.0;
        for t in 0..self.horizon() {
            for (i, node) in self.levels[t].iter().enumerate() {
                let m = prob[t][i];
                for e in &node.succ {
                    prob[t + 1][e.child] += m * e.prob;
                }
            }
        }
        prob
    }

    /// Cost of creating the portfolio `x` at `node`: cash plus shares bought
    /// at the ask or sold at the bid.
    pub fn portfolio_cost(&self, node: NodeId, x: Portfolio) -> f64 {
        let n = self.node(node);
        portfolio_cost(n.bid, n.ask, x)
    }

    /// Liquidation value of `x` at `node`.
    pub fn liquidation_value(&self, node: NodeId, x: Portfolio) -> f64 {
        -self.portfolio_cost(node, -x)
    }

    /// Materializes the full path tree. The second component maps every path
    /// node back to the node of `self` it came from.
    pub fn expand_paths(&self) -> Result<(TreeModel, Vec<Vec<usize>>)> {
        let mut paths = 1.0f64;
        for t in 0..self.horizon() {
            let max_branch = self.levels[t].iter().map(|n| n.succ.len()).max().unwrap_or(1);
            paths *= max_branch as f64;
        }
        if paths > (1u64 << 24) as f64 {
            return Err(Error::InvalidInput(format!(
                "path tree would have about {paths:.0} leaves; too large to materialize"
            )));
        }
        let mut levels: Vec<Vec<Node>> = Vec::with_capacity(self.levels.len());
        let mut origin: Vec<Vec<usize>> = Vec::with_capacity(self.levels.len());
        let root = self.levels[0][0].clone();
        levels.push(vec![Node { succ: Vec::new(), ..root }]);
        origin.push(vec![0]);
        for t in 0..self.horizon() {
            let mut next_nodes = Vec::new();
            let mut next_origin = Vec::new();
            for (i, &src) in origin[t].iter().enumerate() {
                let src_node = &self.levels[t][src];
                let mut succ = Vec::with_capacity(src_node.succ.len());
                for e in &src_node.succ {
                    let child = &self.levels[t + 1][e.child];
                    succ.push(Edge { child: next_nodes.len(), prob: e.prob });
                    next_nodes.push(Node { succ: Vec::new(), ..child.clone() });
                    next_origin.push(e.child);
                }
                levels[t][i].succ = succ;
            }
            levels.push(next_nodes);
            origin.push(next_origin);
        }
        let model = TreeModel { levels, discount: self.discount.clone(), lattice: false };
        Ok((model, origin))
    }

    /// Follows a scenario string of successor choices. For binary lattices
    /// and path trees `u` selects the first successor and `d` the second;
    /// digits select the successor by position.
    pub fn scenario(&self, spec: &str) -> Result<ScenarioPath> {
        let mut nodes = vec![0usize];
        let chars: Vec<char> = spec.chars().filter(|c| !c.is_whitespace()).collect();
        if chars.len() != self.horizon() {
            return Err(Error::InvalidInput(format!(
                "scenario has {} steps but the model has {}",
                chars.len(),
                self.horizon()
            )));
        }
        for (t, c) in chars.iter().enumerate() {
            let node = &self.levels[t][*nodes.last().unwrap()];
            let pos = match c {
                'u' | 'U' => 0,
                'd' | 'D' => 1,
                c if c.is_ascii_digit() => c.to_digit(10).unwrap() as usize,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "invalid scenario character '{other}' at step {t}"
                    )))
                }
            };
            let edge = node.succ.get(pos).ok_or_else(|| {
                Error::InvalidInput(format!("step {t}: node has no successor number {pos}"))
            })?;
            nodes.push(edge.child);
        }
        Ok(ScenarioPath { nodes })
    }

    /// Enumerates every root-to-leaf path together with its probability.
    pub fn all_paths(&self) -> Vec<(ScenarioPath, f64)> {
        let mut out = Vec::new();
        let mut stack = vec![(vec![0usize], 1.0f64)];
        while let Some((path, prob)) = stack.pop() {
            let t = path.len() - 1;
            if t == self.horizon() {
                out.push((ScenarioPath { nodes: path }, prob));
                continue;
            }
            let node = &self.levels[t][*path.last().unwrap()];
            for e in node.succ.iter().rev() {
                let mut next = path.clone();
                next.push(e.child);
                stack.push((next, prob * e.prob));
            }
        }
        out
    }

    /// Position of `child` among the successors of `parent`.
    pub fn edge_to(&self, parent: NodeId, child: usize) -> Option<&Edge> {
        self.node(parent).succ.iter().find(|e| e.child == child)
    }
}

pub fn portfolio_cost(bid: f64, ask: f64, x: Portfolio) -> f64 {
    x.cash + x.shares.max(0.0) * ask - (-x.shares).max(0.0) * bid
}

/// Sequence of node indices `(ω_0, …, ω_T)`, one per level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioPath {
    pub nodes: Vec<usize>,
}

impl ScenarioPath {
    pub fn node_id(&self, t: usize) -> NodeId {
        NodeId::new(t, self.nodes[t])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Checks that consecutive nodes are linked in `model`.
    pub fn validate(&self, model: &TreeModel) -> Result<()> {
        if self.nodes.len() != model.horizon() + 1 || self.nodes[0] != 0 {
            return Err(Error::InvalidInput("scenario must start at the root and reach the horizon".into()));
        }
        for t in 0..model.horizon() {
            if model.edge_to(self.node_id(t), self.nodes[t + 1]).is_none() {
                return Err(Error::InvalidInput(format!(
                    "scenario step {t}: node {} is not a successor of {}",
                    self.nodes[t + 1],
                    self.node_id(t)
                )));
            }
        }
        Ok(())
    }

    /// Product of the real-world transition probabilities along the path.
    pub fn probability(&self, model: &TreeModel) -> f64 {
        (0..model.horizon())
            .map(|t| model.edge_to(self.node_id(t), self.nodes[t + 1]).map_or(0.0, |e| e.prob))
            .product()
    }
}

/// Relatively open interval: either a single point or an open interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelInterval {
    pub lo: f64,
    pub hi: f64,
}

impl RelInterval {
    fn relint(bid: f64, ask: f64) -> Self {
        RelInterval { lo: bid, hi: ask }
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        if self.is_point() {
            x == self.lo
        } else {
            self.lo < x && x < self.hi
        }
    }

    fn intersect(&self, other: &RelInterval) -> Option<RelInterval> {
        match (self.is_point(), other.is_point()) {
            (true, true) => (self.lo == other.lo).then_some(*self),
            (true, false) => other.contains(self.lo).then_some(*self),
            (false, true) => self.contains(other.lo).then_some(*other),
            (false, false) => {
                let lo = self.lo.max(other.lo);
                let hi = self.hi.min(other.hi);
                (lo < hi).then_some(RelInterval { lo, hi })
            }
        }
    }
}

/// Certificate that the model satisfies robust no-arbitrage.
#[derive(Debug, Clone, PartialEq)]
pub struct NoArbitrageWitness {
    /// Admissible open interval of consistent prices at every node.
    pub intervals: Vec<Vec<RelInterval>>,
    /// Midpoint selection from each admissible interval.
    pub prices: Vec<Vec<f64>>,
    /// Whether the midpoint selection is itself a martingale with strictly
    /// positive weights at every node.
    pub martingale: bool,
}

/// Backward propagation of admissible price intervals. Fails at the first
/// node (scanning from the horizon backwards) whose interval is empty.
pub fn check_robust_no_arbitrage(model: &TreeModel) -> Result<NoArbitrageWitness> {
    let horizon = model.horizon();
    let mut intervals: Vec<Vec<RelInterval>> = vec![Vec::new(); horizon + 1];
    intervals[horizon] = model
        .level(horizon)
        .iter()
        .map(|n| RelInterval::relint(n.bid, n.ask))
        .collect();
    for t in (0..horizon).rev() {
        let mut level = Vec::with_capacity(model.level(t).len());
        for (idx, node) in model.level(t).iter().enumerate() {
            let lo = node.succ.iter().map(|e| intervals[t + 1][e.child].lo).fold(f64::INFINITY, f64::min);
            let hi = node.succ.iter().map(|e| intervals[t + 1][e.child].hi).fold(f64::NEG_INFINITY, f64::max);
            let span = RelInterval { lo, hi };
            let own = RelInterval::relint(node.bid, node.ask);
            match own.intersect(&span) {
                Some(iv) => level.push(iv),
                None => return Err(Error::Arbitrage { node: NodeId::new(t, idx) }),
            }
        }
        intervals[t] = level;
    }
    let prices: Vec<Vec<f64>> = intervals
        .iter()
        .map(|l| l.iter().map(RelInterval::midpoint).collect())
        .collect();
    let martingale = (0..horizon).all(|t| {
        model.level(t).iter().enumerate().all(|(i, node)| {
            let s = prices[t][i];
            let kids: Vec<f64> = node.succ.iter().map(|e| prices[t + 1][e.child]).collect();
            let all_equal = kids.iter().all(|&k| k == s);
            all_equal || (kids.iter().any(|&k| k < s) && kids.iter().any(|&k| k > s))
        })
    });
    Ok(NoArbitrageWitness { intervals, prices, martingale })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline() -> LatticeParams {
        LatticeParams { steps: 52, s0: 100.0, sigma: 0.2, rate: 0.02, cost: 0.005, p: 0.5 }
    }

    fn one_step(bid0: f64, ask0: f64, up: (f64, f64), down: (f64, f64)) -> TreeModel {
        let levels = vec![
            vec![Node::new(bid0, ask0, vec![Edge { child: 0, prob: 0.5 }, Edge { child: 1, prob: 0.5 }])],
            vec![Node::new(up.0, up.1, vec![]), Node::new(down.0, down.1, vec![])],
        ];
        TreeModel::from_levels(levels, None).unwrap()
    }

    #[test]
    fn lattice_shape_and_root_spread() {
        let m = TreeModel::binomial(&baseline()).unwrap();
        assert_eq!(m.node_count(), 53 * 54 / 2);
        assert_eq!(m.root().bid, 100.0);
        assert_eq!(m.root().ask, 100.0);
        assert!(m.is_lattice());
        let disc = 1.02f64.powf(-1.0 / 52.0);
        let up = &m.level(1)[1];
        let mid = 100.0 * (0.2 / 52f64.sqrt()).exp() * disc;
        assert!((up.ask - 1.005 * mid).abs() < 1e-12);
        assert!((up.bid - 0.995 * mid).abs() < 1e-12);
    }

    #[test]
    fn zero_cost_collapses_spread() {
        let m = TreeModel::binomial(&LatticeParams { steps: 1, cost: 0.0, ..baseline() }).unwrap();
        for level in m.levels() {
            for n in level {
                assert_eq!(n.bid, n.ask);
            }
        }
    }

    #[test]
    fn multiplicities_are_binomial_coefficients() {
        let m = TreeModel::binomial(&LatticeParams { steps: 6, ..baseline() }).unwrap();
        let mult = m.path_multiplicity();
        for (t, level) in mult.iter().enumerate() {
            assert_eq!(level.iter().sum::<f64>(), 2f64.powi(t as i32));
        }
        assert_eq!(mult[6][3], 20.0);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(TreeModel::binomial(&LatticeParams { steps: 0, ..baseline() }).is_err());
        assert!(TreeModel::binomial(&LatticeParams { cost: 1.0, ..baseline() }).is_err());
        assert!(TreeModel::binomial(&LatticeParams { p: 1.0, ..baseline() }).is_err());
        assert!(TreeModel::binomial(&LatticeParams { s0: -1.0, ..baseline() }).is_err());
    }

    #[test]
    fn portfolio_cost_cases() {
        let m = one_step(100.0, 100.0, (99.5, 100.5), (90.0, 91.0));
        let up = NodeId::new(1, 0);
        assert_eq!(m.portfolio_cost(up, Portfolio::new(5.0, 0.0)), 5.0);
        assert_eq!(m.portfolio_cost(up, Portfolio::new(0.0, 1.0)), 100.5);
        assert_eq!(m.portfolio_cost(up, Portfolio::new(0.0, -1.0)), -99.5);
        assert_eq!(m.liquidation_value(up, Portfolio::new(0.0, 1.0)), 99.5);
    }

    #[test]
    fn arbitrage_detected_at_root() {
        // both successors' asks below today's bid: short the stock for sure profit
        let m = one_step(100.0, 101.0, (95.0, 96.0), (90.0, 91.0));
        match check_robust_no_arbitrage(&m) {
            Err(Error::Arbitrage { node }) => assert_eq!(node, NodeId::ROOT),
            other => panic!("expected arbitrage, got {other:?}"),
        }
    }

    #[test]
    fn one_step_example_configuration_has_witness() {
        let m = one_step(100.0, 100.0, (104.0, 106.0), (94.0, 97.0));
        let w = check_robust_no_arbitrage(&m).unwrap();
        assert_eq!(w.prices[0][0], 100.0);
        assert!(w.martingale);
    }

    #[test]
    fn lattice_has_martingale_witness() {
        let m = TreeModel::binomial(&baseline()).unwrap();
        let w = check_robust_no_arbitrage(&m).unwrap();
        assert!(w.martingale);
        for (t, level) in w.intervals.iter().enumerate() {
            for (i, iv) in level.iter().enumerate() {
                let n = &m.level(t)[i];
                assert!(iv.lo >= n.bid && iv.hi <= n.ask);
            }
        }
    }

    #[test]
    fn frictionless_no_arbitrage_iff_factors_bracket_one() {
        // discounted up factor > 1 > discounted down factor
        let ok = LatticeParams { steps: 4, cost: 0.0, ..baseline() };
        assert!(check_robust_no_arbitrage(&TreeModel::binomial(&ok).unwrap()).is_ok());
        let bad = LatticeParams { steps: 4, cost: 0.0, sigma: 0.001, rate: 0.5, ..baseline() };
        assert!(bad.down_factor() / bad.growth() < 1.0 && bad.up_factor() / bad.growth() < 1.0);
        assert!(check_robust_no_arbitrage(&TreeModel::binomial(&bad).unwrap()).is_err());
    }

    #[test]
    fn risk_neutral_probability_matches_reported_value() {
        let q = baseline().risk_neutral_probability();
        assert!((q - 0.4999).abs() < 1e-4, "q = {q}");
    }

    #[test]
    fn path_probabilities_sum_to_one() {
        let m = TreeModel::binomial(&LatticeParams { steps: 5, p: 0.3, ..baseline() }).unwrap();
        let paths = m.all_paths();
        assert_eq!(paths.len(), 32);
        let total: f64 = paths.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (path, p) in &paths {
            assert!((path.probability(&m) - p).abs() < 1e-15);
        }
    }

    #[test]
    fn expand_paths_maps_back_to_lattice() {
        let m = TreeModel::binomial(&LatticeParams { steps: 3, ..baseline() }).unwrap();
        let (tree, origin) = m.expand_paths().unwrap();
        assert!(!tree.is_lattice());
        assert_eq!(tree.level(3).len(), 8);
        for t in 0..=3 {
            for (i, &src) in origin[t].iter().enumerate() {
                assert_eq!(tree.level(t)[i].ask, m.level(t)[src].ask);
            }
        }
    }

    #[test]
    fn scenario_parsing() {
        let m = TreeModel::binomial(&LatticeParams { steps: 3, ..baseline() }).unwrap();
        let s = m.scenario("udu").unwrap();
        assert_eq!(s.nodes, vec![0, 1, 1, 2]);
        assert!(m.scenario("ud").is_err());
        assert!(m.scenario("uxd").is_err());
    }
}
