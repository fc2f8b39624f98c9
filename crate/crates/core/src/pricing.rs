//! Minimal disutility, indifference prices and superhedging bounds.

use std::time::{Duration, Instant};

use crate::dual::{backward_sweep, k_value};
use crate::error::{Error, Result};
use crate::market::{NodeId, Portfolio, TreeModel};
use crate::payoff::{aggregate_claim, AggregateClaim, DisutilityProfile, PaymentStream};
use crate::pwl::{convex_envelope, ApproxSettings, HullChild, Method, PwlConvex};

#[derive(Debug, Clone, PartialEq)]
pub struct PriceQuote {
    pub value: f64,
    /// Approximation used, `None` for exact computations.
    pub method: Option<Method>,
    pub n: Option<usize>,
    /// Same price computed with the other approximation method, if requested.
    pub companion: Option<f64>,
    pub elapsed: Duration,
}

impl PriceQuote {
    fn exact(value: f64, elapsed: Duration) -> Self {
        PriceQuote { value, method: None, n: None, companion: None, elapsed }
    }

    fn approx(value: f64, settings: &ApproxSettings, elapsed: Duration) -> Self {
        PriceQuote { value, method: Some(settings.method), n: Some(settings.n), companion: None, elapsed }
    }
}

/// `K(X)` computed from a fresh backward sweep.
pub fn k_of(
    model: &TreeModel,
    claim: &AggregateClaim,
    profile: &DisutilityProfile,
    settings: &ApproxSettings,
) -> Result<f64> {
    let surface = backward_sweep(model, claim, profile, settings)?;
    Ok(k_value(&surface, model)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disutility {
    pub value: f64,
    pub lambda: f64,
    pub k: f64,
}

/// `λ̂ = exp[(Σ_{t∈I} ln α_t/α_t − K)/a_0]` and `V = λ̂ a_0 − |I|`.
pub fn lambda_from_k(profile: &DisutilityProfile, k: f64) -> Disutility {
    let a0 = profile.tail(0);
    let lambda = ((profile.log_alpha_sum() - k) / a0).exp();
    Disutility { value: lambda * a0 - profile.count() as f64, lambda, k }
}

/// Minimal disutility of the liability stream `u`, with `X = −Σ u`.
pub fn disutility_value(
    model: &TreeModel,
    u: &PaymentStream,
    profile: &DisutilityProfile,
    settings: &ApproxSettings,
) -> Result<Disutility> {
    let x = aggregate_claim(model, u)?.neg();
    let k = k_of(model, &x, profile, settings)?;
    Ok(lambda_from_k(profile, k))
}

/// Indifference prices of `c` given the endowment `w`, computed from three
/// values of `K` with `K(Σw)` shared between them.
#[derive(Debug, Clone, PartialEq)]
pub struct IndifferencePrices {
    pub ask: PriceQuote,
    pub bid: PriceQuote,
}

pub fn indifference_prices(
    model: &TreeModel,
    c: &PaymentStream,
    w: &PaymentStream,
    profile: &DisutilityProfile,
    settings: &ApproxSettings,
) -> Result<IndifferencePrices> {
    let start = Instant::now();
    let xw = aggregate_claim(model, w)?;
    let xc = aggregate_claim(model, c)?;
    let claims = [xw.clone(), xw.plus(&xc.neg()), xw.plus(&xc)];
    let ks: Vec<f64> = std::thread::scope(|s| {
        let handles: Vec<_> = claims
            .iter()
            .map(|x| s.spawn(move || k_of(model, x, profile, settings)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep thread panicked")).collect::<Result<_>>()
    })?;
    let elapsed = start.elapsed();
    Ok(IndifferencePrices {
        ask: PriceQuote::approx(ks[0] - ks[1], settings, elapsed),
        bid: PriceQuote::approx(ks[2] - ks[0], settings, elapsed),
    })
}

/// Seller's price `K(Σw) − K(Σ(w−c))`.
pub fn indifference_ask(
    model: &TreeModel,
    c: &PaymentStream,
    w: &PaymentStream,
    profile: &DisutilityProfile,
    settings: &ApproxSettings,
) -> Result<PriceQuote> {
    let start = Instant::now();
    let xw = aggregate_claim(model, w)?;
    let xc = aggregate_claim(model, c)?;
    let kw = k_of(model, &xw, profile, settings)?;
    let kwc = k_of(model, &xw.plus(&xc.neg()), profile, settings)?;
    Ok(PriceQuote::approx(kw - kwc, settings, start.elapsed()))
}

/// Buyer's price `K(Σ(w+c)) − K(Σw)`.
pub fn indifference_bid(
    model: &TreeModel,
    c: &PaymentStream,
    w: &PaymentStream,
    profile: &DisutilityProfile,
    settings: &ApproxSettings,
) -> Result<PriceQuote> {
    let start = Instant::now();
    let xw = aggregate_claim(model, w)?;
    let xc = aggregate_claim(model, c)?;
    let kw = k_of(model, &xw, profile, settings)?;
    let kwc = k_of(model, &xw.plus(&xc), profile, settings)?;
    Ok(PriceQuote::approx(kwc - kw, settings, start.elapsed()))
}

/// Lower convex envelope DP for `min E_Q[X^b + X^s S_T]` over martingale
/// pairs; returns the root function.
fn envelope_sweep(model: &TreeModel, claim: &AggregateClaim) -> Result<PwlConvex> {
    let horizon = model.horizon();
    if claim.values.len() != model.level(horizon).len() {
        return Err(Error::InvalidInput("claim does not match the model's terminal nodes".into()));
    }
    let mut level: Vec<PwlConvex> = model
        .level(horizon)
        .iter()
        .zip(&claim.values)
        .map(|(n, x)| PwlConvex::affine(n.bid, n.ask, x.cash, x.shares))
        .collect();
    for t in (0..horizon).rev() {
        let mut next = Vec::with_capacity(model.level(t).len());
        for (idx, node) in model.level(t).iter().enumerate() {
            let children: Vec<HullChild> =
                node.succ.iter().map(|e| HullChild { f: &level[e.child], p: e.prob }).collect();
            let env = convex_envelope(&children)?;
            let f = env
                .restrict(node.bid, node.ask)
                .ok_or(Error::EmptyDomain { node: NodeId::new(t, idx) })?;
            next.push(f);
        }
        level = next;
    }
    Ok(level.swap_remove(0))
}

/// Superhedging (ask) price: the largest expected discounted payoff over
/// martingale pairs, via the concave envelope of the successors.
pub fn superhedge_ask(model: &TreeModel, c: &PaymentStream) -> Result<PriceQuote> {
    let start = Instant::now();
    let x = aggregate_claim(model, c)?;
    let root = envelope_sweep(model, &x.neg())?;
    let (_, v) = root.min_on_interval(model.root().bid, model.root().ask)?;
    Ok(PriceQuote::exact(-v, start.elapsed()))
}

/// Subhedging (bid) price: the smallest expected discounted payoff over
/// martingale pairs.
pub fn superhedge_bid(model: &TreeModel, c: &PaymentStream) -> Result<PriceQuote> {
    let start = Instant::now();
    let x = aggregate_claim(model, c)?;
    let root = envelope_sweep(model, &x)?;
    let (_, v) = root.min_on_interval(model.root().bid, model.root().ask)?;
    Ok(PriceQuote::exact(v, start.elapsed()))
}

/// Data of the one-step model with `S^{ad}_1 < S_0 < S^{bu}_1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneStep {
    pub s0: f64,
    pub up: (f64, f64),
    pub down: (f64, f64),
    pub p: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneStepPrices {
    pub ask: f64,
    pub bid: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// `K((D,0))`, `K((0,0))` and `K((−D,0))`.
    pub k_plus: f64,
    pub k_zero: f64,
    pub k_minus: f64,
}

impl OneStep {
    pub fn validate(&self) -> Result<()> {
        let (bu, au) = self.up;
        let (bd, ad) = self.down;
        if !(0.0 < bd && bd <= ad && ad < self.s0 && self.s0 < bu && bu <= au) {
            return Err(Error::InvalidInput(
                "one-step prices must satisfy S^bd <= S^ad < S0 < S^bu <= S^au".into(),
            ));
        }
        if !(self.p > 0.0 && self.p < 1.0 && self.alpha > 0.0) {
            return Err(Error::InvalidInput("need p in (0,1) and alpha > 0".into()));
        }
        Ok(())
    }

    pub fn q_range(&self) -> (f64, f64) {
        let (bu, au) = self.up;
        let (bd, ad) = self.down;
        ((self.s0 - ad) / (au - ad), (self.s0 - bd) / (bu - bd))
    }

    /// `K((Y,0))` for the cash claim `(Y^u, Y^d)` with `I = {0,1}` and a common α.
    pub fn k(&self, yu: f64, yd: f64) -> f64 {
        let (qmin, qmax) = self.q_range();
        let (p, a) = (self.p, self.alpha);
        // softmin weights in log space to avoid overflow for large |αY|
        let lu = p.ln() - a * yu;
        let ld = (1.0 - p).ln() - a * yd;
        let qhat = 1.0 / (1.0 + (ld - lu).exp());
        let q = qhat.clamp(qmin, qmax);
        let ent = |q: f64, p: f64| if q > 0.0 { q * (q / p).ln() } else { 0.0 };
        (ent(q, p) + ent(1.0 - q, 1.0 - p)) / a + q * yu + (1.0 - q) * yd
    }

    /// Prices of the cash payoff `(D^u, D^d)` at time 1.
    pub fn prices(&self, du: f64, dd: f64) -> Result<OneStepPrices> {
        self.validate()?;
        let (q_min, q_max) = self.q_range();
        let k_plus = self.k(du, dd);
        let k_zero = self.k(0.0, 0.0);
        let k_minus = self.k(-du, -dd);
        Ok(OneStepPrices {
            ask: k_zero - k_minus,
            bid: k_plus - k_zero,
            q_min,
            q_max,
            k_plus,
            k_zero,
            k_minus,
        })
    }

    /// The tree, payoff stream and profile for running the full pipeline.
    pub fn model(&self) -> Result<TreeModel> {
        use crate::market::{Edge, Node};
        self.validate()?;
        let levels = vec![
            vec![Node::new(self.s0, self.s0, vec![
                Edge { child: 0, prob: self.p },
                Edge { child: 1, prob: 1.0 - self.p },
            ])],
            vec![Node::new(self.up.0, self.up.1, vec![]), Node::new(self.down.0, self.down.1, vec![])],
        ];
        TreeModel::from_levels(levels, None)
    }

    pub fn payoff(&self, du: f64, dd: f64) -> PaymentStream {
        let mut s = PaymentStream::zero();
        s.set(NodeId::new(1, 0), Portfolio::cash(du));
        s.set(NodeId::new(1, 1), Portfolio::cash(dd));
        s
    }

    pub fn profile(&self) -> DisutilityProfile {
        DisutilityProfile::every_date(1, self.alpha).expect("valid alpha")
    }
}

/// Closed-form indifference prices for the one-step model.
pub fn one_step_oracle(data: &OneStep, du: f64, dd: f64) -> Result<OneStepPrices> {
    data.prices(du, dd)
}

/// Frictionless CRR value of a terminal claim by backward induction with
/// the risk-neutral weight of each node.
pub fn replication_value(model: &TreeModel, claim: &AggregateClaim) -> Result<f64> {
    let horizon = model.horizon();
    let mut values: Vec<f64> = model
        .level(horizon)
        .iter()
        .zip(&claim.values)
        .map(|(n, x)| {
            if n.bid != n.ask {
                Err(Error::InvalidInput("replication needs a frictionless model".into()))
            } else {
                Ok(x.cash + x.shares * n.mid)
            }
        })
        .collect::<Result<_>>()?;
    for t in (0..horizon).rev() {
        let mut next = Vec::with_capacity(model.level(t).len());
        for (idx, node) in model.level(t).iter().enumerate() {
            if node.succ.len() != 2 {
                return Err(Error::InvalidInput("replication needs a binary tree".into()));
            }
            let (u, d) = (node.succ[0].child, node.succ[1].child);
            let (su, sd) = (model.level(t + 1)[u].mid, model.level(t + 1)[d].mid);
            let q = (node.mid - sd) / (su - sd);
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::Arbitrage { node: NodeId::new(t, idx) });
            }
            next.push(q * values[u] + (1.0 - q) * values[d]);
        }
        values = next;
    }
    Ok(values[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::LatticeParams;
    use crate::payoff::call_physical;
    use approx::assert_abs_diff_eq;

    fn lattice(steps: usize, cost: f64) -> TreeModel {
        TreeModel::binomial(&LatticeParams { steps, s0: 100.0, sigma: 0.2, rate: 0.02, cost, p: 0.5 }).unwrap()
    }

    #[test]
    fn zero_claim_prices_vanish() {
        let m = lattice(6, 0.005);
        let prof = DisutilityProfile::every_date(6, 0.1).unwrap();
        let st = ApproxSettings::new(Method::Upper, 20);
        let z = PaymentStream::zero();
        let p = indifference_prices(&m, &z, &z, &prof, &st).unwrap();
        assert_eq!(p.ask.value, 0.0);
        assert_eq!(p.bid.value, 0.0);
    }

    #[test]
    fn root_cash_is_priced_at_par() {
        let m = lattice(6, 0.005);
        let prof = DisutilityProfile::every_date(6, 0.1).unwrap();
        let st = ApproxSettings::new(Method::Upper, 20);
        let c = PaymentStream::cash_at_root(3.0);
        let p = indifference_prices(&m, &c, &PaymentStream::zero(), &prof, &st).unwrap();
        assert_abs_diff_eq!(p.ask.value, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.bid.value, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn superhedging_cash_at_horizon() {
        let m = lattice(5, 0.01);
        let c = PaymentStream::cash_at_time(&m, 5, 2.0);
        assert_abs_diff_eq!(superhedge_ask(&m, &c).unwrap().value, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(superhedge_bid(&m, &c).unwrap().value, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn frictionless_superhedging_equals_replication() {
        let m = lattice(12, 0.0);
        let c = call_physical(&m, 100.0).unwrap();
        let x = aggregate_claim(&m, &c).unwrap();
        let crr = replication_value(&m, &x).unwrap();
        assert_abs_diff_eq!(superhedge_ask(&m, &c).unwrap().value, crr, epsilon = 1e-9);
        assert_abs_diff_eq!(superhedge_bid(&m, &c).unwrap().value, crr, epsilon = 1e-9);
    }

    #[test]
    fn single_injection_at_root_gives_superhedging_disutility() {
        let m = lattice(5, 0.01);
        let u = call_physical(&m, 100.0).unwrap();
        let prof = DisutilityProfile::constant(5, &[0], 0.3).unwrap();
        let d = disutility_value(&m, &u, &prof, &ApproxSettings::new(Method::Upper, 10)).unwrap();
        let pa = superhedge_ask(&m, &u).unwrap().value;
        assert_abs_diff_eq!(d.value, (0.3 * pa).exp_m1(), epsilon = 1e-9);
    }

    #[test]
    fn one_step_oracle_zero_payoff() {
        let data = OneStep { s0: 100.0, up: (104.0, 106.0), down: (94.0, 97.0), p: 0.5, alpha: 1.0 };
        let p = one_step_oracle(&data, 0.0, 0.0).unwrap();
        assert_eq!(p.ask, 0.0);
        assert_eq!(p.bid, 0.0);
        assert_eq!(p.k_zero, 0.0);
        let bad = OneStep { s0: 96.0, ..data };
        assert!(one_step_oracle(&bad, 1.0, 0.0).is_err());
    }

    #[test]
    fn one_step_small_alpha_limit() {
        let data = OneStep { s0: 100.0, up: (104.0, 106.0), down: (94.0, 97.0), p: 0.4, alpha: 1e-6 };
        let a = one_step_oracle(&data, 5.0, -2.0).unwrap();
        let b = one_step_oracle(&OneStep { alpha: 1e-7, ..data }, 5.0, -2.0).unwrap();
        assert!((a.ask - b.ask).abs() < 1e-4 && (a.bid - b.bid).abs() < 1e-4);
    }

    #[test]
    fn one_step_pipeline_matches_oracle() {
        let data = OneStep { s0: 100.0, up: (104.0, 106.0), down: (94.0, 97.0), p: 0.35, alpha: 0.7 };
        let o = one_step_oracle(&data, 4.0, -1.5).unwrap();
        let m = data.model().unwrap();
        let st = ApproxSettings::new(Method::Upper, 500);
        let p = indifference_prices(&m, &data.payoff(4.0, -1.5), &PaymentStream::zero(), &data.profile(), &st).unwrap();
        assert_abs_diff_eq!(p.ask.value, o.ask, epsilon = 1e-9);
        assert_abs_diff_eq!(p.bid.value, o.bid, epsilon = 1e-9);
    }
}
