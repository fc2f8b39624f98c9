//! Convex piecewise-linear functions and the entropy-penalised convex hull.
//!
//! The generalised hull of convex functions `f_1..f_m` with priors `p_k` and
//! entropy weight `a` is
//!
//! ```text
//! f(x) = inf { Σ q_k f_k(x_k) + a Σ q_k ln(q_k / p_k) : q ∈ simplex, Σ q_k x_k = x }
//! ```
//!
//! For `a > 0` it is evaluated through the scalar concave dual
//! `d(θ) = θx − a ln Σ p_k exp(−c_k(θ)/a)` with `c_k(θ) = min_y f_k(y) − θy`.
//! For `a = 0` it reduces to the classical lower convex envelope.

use crate::error::{Error, Result};

/// Relative tolerance used when snapping points onto a domain boundary.
const SNAP: f64 = 1e-12;

/// Convex piecewise-linear function on a compact interval, `+∞` outside.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlConvex {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl PwlConvex {
    /// Builds a function from breakpoints. The slopes must be nondecreasing
    /// up to a small relative tolerance.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::InvalidInput(
                "breakpoint and value lists must be nonempty and of equal length".into(),
            ));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("breakpoints and values must be finite".into()));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("breakpoints must be strictly increasing".into()));
        }
        let slopes = slopes_of(&xs, &ys);
        let scale = slopes.iter().fold(1.0f64, |m, s| m.max(s.abs()));
        if slopes.windows(2).any(|w| w[1] < w[0] - 1e-9 * scale) {
            return Err(Error::InvalidInput("function is not convex".into()));
        }
        Ok(PwlConvex { xs, ys, slopes })
    }

    /// Function defined at a single point.
    pub fn point(x: f64, y: f64) -> Self {
        PwlConvex { xs: vec![x], ys: vec![y], slopes: Vec::new() }
    }

    /// `intercept + slope·x` on `[lo, hi]`.
    pub fn affine(lo: f64, hi: f64, intercept: f64, slope: f64) -> Self {
        if hi > lo {
            let xs = vec![lo, hi];
            let ys = vec![intercept + slope * lo, intercept + slope * hi];
            PwlConvex { xs, ys, slopes: vec![slope] }
        } else {
            PwlConvex::point(lo, intercept + slope * lo)
        }
    }

    /// Largest convex function lying below the given points (their lower
    /// convex hull), defined on `[min x, max x]`.
    pub fn lower_hull(points: &[(f64, f64)]) -> Result<Self> {
        let hull = lower_hull_indices(points);
        if hull.is_empty() {
            return Err(Error::InvalidInput("no points to take the hull of".into()));
        }
        let xs: Vec<f64> = hull.iter().map(|&i| points[i].0).collect();
        let ys: Vec<f64> = hull.iter().map(|&i| points[i].1).collect();
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in hull points".into()));
        }
        let slopes = slopes_of(&xs, &ys);
        Ok(PwlConvex { xs, ys, slopes })
    }

    pub fn lo(&self) -> f64 {
        self.xs[0]
    }

    pub fn hi(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn is_point(&self) -> bool {
        self.xs.len() == 1
    }

    pub fn width(&self) -> f64 {
        self.hi() - self.lo()
    }

    /// Linear interpolation inside the domain, `+∞` outside.
    pub fn eval(&self, x: f64) -> f64 {
        if x < self.lo() || x > self.hi() || x.is_nan() {
            return f64::INFINITY;
        }
        if self.is_point() {
            return self.ys[0];
        }
        let i = self.xs.partition_point(|&b| b <= x).clamp(1, self.xs.len() - 1);
        let (x0, y0) = (self.xs[i - 1], self.ys[i - 1]);
        y0 + self.slopes[i - 1] * (x - x0)
    }

    /// Like [`eval`](Self::eval) but snaps points within a rounding error of
    /// the domain onto it.
    pub fn eval_snapped(&self, x: f64) -> f64 {
        self.eval(self.snap(x))
    }

    pub(crate) fn snap(&self, x: f64) -> f64 {
        let tol = SNAP * (1.0 + self.lo().abs().max(self.hi().abs()));
        if x < self.lo() && x >= self.lo() - tol {
            self.lo()
        } else if x > self.hi() && x <= self.hi() + tol {
            self.hi()
        } else {
            x
        }
    }

    /// Minimum over `[l, u] ∩ domain`. On a flat minimizing face the
    /// midpoint of the face is returned.
    pub fn min_on_interval(&self, l: f64, u: f64) -> Result<(f64, f64)> {
        let lo = l.max(self.lo());
        let hi = u.min(self.hi());
        if lo > hi {
            return Err(Error::Domain { x: l, lo: self.lo(), hi: self.hi() });
        }
        let mut cand: Vec<f64> = vec![lo];
        cand.extend(self.xs.iter().copied().filter(|&x| x > lo && x < hi));
        cand.push(hi);
        let vals: Vec<f64> = cand.iter().map(|&x| self.eval(x)).collect();
        let best = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let tol = 1e-13 * (1.0 + best.abs());
        let first = vals.iter().position(|&v| v <= best + tol).unwrap();
        let last = vals.iter().rposition(|&v| v <= best + tol).unwrap();
        let x = 0.5 * (cand[first] + cand[last]);
        Ok((x, self.eval(x).min(best + tol)))
    }

    /// `c(θ) = min_x f(x) − θx` with the smallest minimizing breakpoint.
    pub fn support_min(&self, theta: f64) -> (f64, f64) {
        let i = self.support_index(theta);
        (self.xs[i], self.ys[i] - theta * self.xs[i])
    }

    fn support_index(&self, theta: f64) -> usize {
        self.slopes.partition_point(|&s| s < theta)
    }

    /// Restriction to `[l, u]`; `None` when the intersection is empty.
    pub fn restrict(&self, l: f64, u: f64) -> Option<PwlConvex> {
        let lo = l.max(self.lo());
        let hi = u.min(self.hi());
        if lo > hi {
            return None;
        }
        if lo == hi {
            return Some(PwlConvex::point(lo, self.eval(lo)));
        }
        let mut xs = vec![lo];
        xs.extend(self.xs.iter().copied().filter(|&x| x > lo && x < hi));
        xs.push(hi);
        let ys: Vec<f64> = xs.iter().map(|&x| self.eval(x)).collect();
        let slopes = slopes_of(&xs, &ys);
        Some(PwlConvex { xs, ys, slopes })
    }

    /// `f + δ`.
    pub fn shifted(&self, delta: f64) -> PwlConvex {
        PwlConvex {
            xs: self.xs.clone(),
            ys: self.ys.iter().map(|y| y + delta).collect(),
            slopes: self.slopes.clone(),
        }
    }

    /// Largest slope violation `max(s_i − s_{i+1}, 0)`; zero for convex input.
    pub fn convexity_defect(&self) -> f64 {
        self.slopes.windows(2).map(|w| (w[0] - w[1]).max(0.0)).fold(0.0, f64::max)
    }
}

fn slopes_of(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
        .collect()
}

/// Indices of the lower convex hull of `points`, sorted by x. Points with
/// equal x keep only the lowest one.
fn lower_hull_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .0
            .total_cmp(&points[j].0)
            .then(points[i].1.total_cmp(&points[j].1))
    });
    order.dedup_by(|later, earlier| points[*later].0 == points[*earlier].0);
    let mut hull: Vec<usize> = Vec::with_capacity(order.len());
    for &i in &order {
        while hull.len() >= 2 {
            let (o, a) = (points[hull[hull.len() - 2]], points[hull[hull.len() - 1]]);
            let b = points[i];
            let cross = (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

/// One function entering a generalised hull, with its prior weight.
#[derive(Debug, Clone, Copy)]
pub struct HullChild<'a> {
    pub f: &'a PwlConvex,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Upper,
    Lower,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Upper => "upper",
            Method::Lower => "lower",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "upper" => Ok(Method::Upper),
            "lower" => Ok(Method::Lower),
            other => Err(Error::InvalidInput(format!(
                "unknown approximation method '{other}' (expected upper or lower)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Controls the piecewise-linear approximation of hulls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxSettings {
    pub method: Method,
    /// Number of equal subintervals per price interval.
    pub n: usize,
    /// Accepted violation of the mean constraint after primal recovery.
    pub dual_tol: f64,
    pub max_iters: usize,
}

impl Default for ApproxSettings {
    fn default() -> Self {
        ApproxSettings { method: Method::Upper, n: 150, dual_tol: 1e-10, max_iters: 400 }
    }
}

impl ApproxSettings {
    pub fn new(method: Method, n: usize) -> Self {
        ApproxSettings { method, n, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidInput("n must be at least 1".into()));
        }
        if !(self.dual_tol > 0.0) {
            return Err(Error::InvalidInput("dual_tol must be positive".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Optimum of one generalised hull evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct HullSolution {
    /// Objective at the recovered primal point (an upper bound).
    pub value: f64,
    /// Dual objective `d(θ)` (a lower bound); equals `value` up to solver error.
    pub dual_value: f64,
    /// Optimal mixture weights, exactly zero below `1e-300`.
    pub q: Vec<f64>,
    /// Optimal points, one per child.
    pub x: Vec<f64>,
    /// Dual variable; a subgradient of the hull at the query point.
    pub theta: f64,
    /// Constant `β` such that `f_k(x_k) + a ln(q_k/p_k) = θ x_k + β` for
    /// every child carrying mass.
    pub intercept: f64,
    /// `|Σ q_k x_k − x|` after recovery.
    pub residual: f64,
}

/// Domain `[min_k b_k, max_k a_k]` of the hull.
pub fn hull_domain(children: &[HullChild]) -> (f64, f64) {
    let lo = children.iter().map(|c| c.f.lo()).fold(f64::INFINITY, f64::min);
    let hi = children.iter().map(|c| c.f.hi()).fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn validate_children(children: &[HullChild], a: f64) -> Result<()> {
    if children.is_empty() {
        return Err(Error::InvalidInput("hull needs at least one child".into()));
    }
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::InvalidInput(format!("entropy weight must be nonnegative, got {a}")));
    }
    if children.iter().any(|c| !(c.p > 0.0 && c.p <= 1.0)) {
        return Err(Error::InvalidInput("priors must lie in (0, 1]".into()));
    }
    Ok(())
}

fn clean_weight(q: f64) -> f64 {
    if q < 1e-300 {
        0.0
    } else {
        q
    }
}

fn xlogx_ratio(q: f64, p: f64) -> f64 {
    if q == 0.0 {
        0.0
    } else {
        q * (q / p).ln()
    }
}

/// Softmin state of the dual at a fixed θ.
struct DualPoint {
    q: Vec<f64>,
    xstar: Vec<f64>,
    mean: f64,
    log_z: f64,
}

fn dual_point(children: &[HullChild], a: f64, theta: f64) -> DualPoint {
    let m = children.len();
    let mut xstar = Vec::with_capacity(m);
    let mut logw = Vec::with_capacity(m);
    for c in children {
        let (x, cval) = c.f.support_min(theta);
        xstar.push(x);
        logw.push(c.p.ln() - cval / a);
    }
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let q: Vec<f64> = w.iter().map(|wk| wk / total).collect();
    let mean = q.iter().zip(&xstar).map(|(q, x)| q * x).sum();
    DualPoint { q, xstar, mean, log_z: top + total.ln() }
}

/// Evaluates the generalised hull at `x` together with an optimal mixture.
pub fn hull_value(
    children: &[HullChild],
    a: f64,
    x: f64,
    settings: &ApproxSettings,
) -> Result<HullSolution> {
    validate_children(children, a)?;
    let (lo, hi) = hull_domain(children);
    let tol = SNAP * (1.0 + lo.abs().max(hi.abs()));
    if !(x >= lo - tol && x <= hi + tol) {
        return Err(Error::Domain { x, lo, hi });
    }
    let x = x.clamp(lo, hi);
    if children.len() == 1 {
        let f = children[0].f;
        let value = f.eval(x);
        let (theta, intercept) = single_child_multiplier(f, x);
        return Ok(HullSolution {
            value,
            dual_value: value,
            q: vec![1.0],
            x: vec![x],
            theta,
            intercept,
            residual: 0.0,
        });
    }
    if a == 0.0 {
        return classical_hull_value(children, x);
    }
    if x == lo || x == hi {
        return boundary_value(children, a, x, x == lo);
    }
    entropic_hull_value(children, a, x, settings)
}

/// Subgradient and intercept of a single convex function at `x`.
fn single_child_multiplier(f: &PwlConvex, x: f64) -> (f64, f64) {
    if f.is_point() {
        return (0.0, f.ys()[0]);
    }
    let i = f.xs().partition_point(|&b| b <= x).clamp(1, f.len() - 1);
    let theta = f.slopes()[i - 1];
    (theta, f.eval(x) - theta * x)
}

fn boundary_value(children: &[HullChild], a: f64, x: f64, left: bool) -> Result<HullSolution> {
    // only children whose domain touches the boundary point can carry mass
    let touching: Vec<usize> = children
        .iter()
        .enumerate()
        .filter(|(_, c)| if left { c.f.lo() == x } else { c.f.hi() == x })
        .map(|(k, _)| k)
        .collect();
    let logw: Vec<f64> = touching
        .iter()
        .map(|&k| children[k].p.ln() - children[k].f.eval(x) / a)
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logw.iter().map(|l| (l - top).exp()).sum();
    let log_z = top + total.ln();
    let mut q = vec![0.0; children.len()];
    let mut xs: Vec<f64> = children.iter().map(|c| c.f.lo().max(c.f.hi().min(x))).collect();
    for (&k, l) in touching.iter().zip(&logw) {
        q[k] = clean_weight((l - top).exp() / total);
        xs[k] = x;
    }
    let value = -a * log_z;
    Ok(HullSolution {
        value,
        dual_value: value,
        q,
        x: xs,
        // the hull has an infinite one-sided slope here; report zero tilt
        theta: 0.0,
        intercept: value,
        residual: 0.0,
    })
}

fn entropic_hull_value(
    children: &[HullChild],
    a: f64,
    x: f64,
    settings: &ApproxSettings,
) -> Result<HullSolution> {
    let smin = children
        .iter()
        .flat_map(|c| c.f.slopes().first().copied())
        .fold(0.0f64, f64::min);
    let smax = children
        .iter()
        .flat_map(|c| c.f.slopes().last().copied())
        .fold(0.0f64, f64::max);
    let mut step = 1.0f64.max(a);
    let mut t_lo = smin - 1.0;
    let mut d_lo = dual_point(children, a, t_lo);
    let mut guard = 0;
    while d_lo.mean >= x {
        t_lo -= step;
        step *= 2.0;
        d_lo = dual_point(children, a, t_lo);
        guard += 1;
        if guard > 2000 || !t_lo.is_finite() {
            return Err(Error::Numeric(format!("could not bracket the hull dual at x={x}")));
        }
    }
    step = 1.0f64.max(a);
    let mut t_hi = smax + 1.0;
    let mut d_hi = dual_point(children, a, t_hi);
    guard = 0;
    while d_hi.mean <= x {
        t_hi += step;
        step *= 2.0;
        d_hi = dual_point(children, a, t_hi);
        guard += 1;
        if guard > 2000 || !t_hi.is_finite() {
            return Err(Error::Numeric(format!("could not bracket the hull dual at x={x}")));
        }
    }
    for _ in 0..settings.max_iters {
        let mid = 0.5 * (t_lo + t_hi);
        if mid <= t_lo || mid >= t_hi {
            break;
        }
        let d = dual_point(children, a, mid);
        if d.mean < x {
            t_lo = mid;
            d_lo = d;
        } else if d.mean > x {
            t_hi = mid;
            d_hi = d;
        } else {
            t_lo = mid;
            t_hi = mid;
            d_lo = d;
            d_hi = dual_point(children, a, mid);
            break;
        }
    }
    let theta = 0.5 * (t_lo + t_hi);
    let dm = dual_point(children, a, theta);
    // mix the two support configurations with a common weight so that the
    // mean constraint holds for the weights at the midpoint
    let q: Vec<f64> = dm.q.iter().map(|&q| clean_weight(q)).collect();
    let qsum: f64 = q.iter().sum();
    let q: Vec<f64> = q.iter().map(|v| v / qsum).collect();
    let m0: f64 = q.iter().zip(&d_lo.xstar).map(|(q, x)| q * x).sum();
    let m1: f64 = q.iter().zip(&d_hi.xstar).map(|(q, x)| q * x).sum();
    let s = if m1 > m0 { ((x - m0) / (m1 - m0)).clamp(0.0, 1.0) } else { 0.5 };
    let xs: Vec<f64> = d_lo
        .xstar
        .iter()
        .zip(&d_hi.xstar)
        .map(|(l, h)| (1.0 - s) * l + s * h)
        .collect();
    let mean: f64 = q.iter().zip(&xs).map(|(q, x)| q * x).sum();
    let value: f64 = children
        .iter()
        .zip(q.iter().zip(&xs))
        .map(|(c, (&qk, &xk))| {
            if qk == 0.0 {
                0.0
            } else {
                qk * c.f.eval_snapped(xk) + a * xlogx_ratio(qk, c.p)
            }
        })
        .sum();
    let dual_value = theta * x - a * dm.log_z;
    Ok(HullSolution {
        value,
        dual_value,
        q,
        x: xs,
        theta,
        intercept: -a * dm.log_z,
        residual: (mean - x).abs(),
    })
}

/// Vertices of all children tagged with the child they come from.
fn tagged_vertices(children: &[HullChild]) -> (Vec<(f64, f64)>, Vec<usize>) {
    let mut pts = Vec::new();
    let mut tags = Vec::new();
    for (k, c) in children.iter().enumerate() {
        for (&x, &y) in c.f.xs().iter().zip(c.f.ys()) {
            pts.push((x, y));
            tags.push(k);
        }
    }
    (pts, tags)
}

/// Lower convex envelope of the children (the hull with `a = 0`).
pub fn convex_envelope(children: &[HullChild]) -> Result<PwlConvex> {
    let (pts, _) = tagged_vertices(children);
    PwlConvex::lower_hull(&pts)
}

fn classical_hull_value(children: &[HullChild], x: f64) -> Result<HullSolution> {
    let (pts, tags) = tagged_vertices(children);
    let idx = lower_hull_indices(&pts);
    let m = children.len();
    let mut q = vec![0.0; m];
    let mut xs: Vec<f64> = children.iter().map(|c| c.f.lo().max(c.f.hi().min(x))).collect();
    let j = idx.partition_point(|&i| pts[i].0 <= x);
    let (value, theta) = if j == 0 || idx.len() == 1 {
        let i = idx[0];
        q[tags[i]] = 1.0;
        xs[tags[i]] = pts[i].0;
        (pts[i].1, 0.0)
    } else if j == idx.len() {
        let i = *idx.last().unwrap();
        q[tags[i]] = 1.0;
        xs[tags[i]] = pts[i].0;
        let prev = idx[idx.len() - 2];
        (pts[i].1, (pts[i].1 - pts[prev].1) / (pts[i].0 - pts[prev].0))
    } else {
        let (i0, i1) = (idx[j - 1], idx[j]);
        let (p0, p1) = (pts[i0], pts[i1]);
        let lam = (p1.0 - x) / (p1.0 - p0.0);
        let slope = (p1.1 - p0.1) / (p1.0 - p0.0);
        let value = p0.1 + slope * (x - p0.0);
        if tags[i0] == tags[i1] {
            q[tags[i0]] = 1.0;
            xs[tags[i0]] = x;
        } else {
            q[tags[i0]] = lam;
            xs[tags[i0]] = p0.0;
            q[tags[i1]] = 1.0 - lam;
            xs[tags[i1]] = p1.0;
        }
        (value, slope)
    };
    let q: Vec<f64> = q.into_iter().map(clean_weight).collect();
    let mean: f64 = q.iter().zip(&xs).map(|(q, x)| q * x).sum();
    Ok(HullSolution {
        value,
        dual_value: value,
        q,
        x: xs,
        theta,
        intercept: value - theta * x,
        residual: (mean - x).abs(),
    })
}

/// Restricted evaluation interval `[l, u] ∩ dom`.
fn restricted(children: &[HullChild], l: f64, u: f64) -> Result<(f64, f64, f64, f64)> {
    let (dlo, dhi) = hull_domain(children);
    let lo = l.max(dlo);
    let hi = u.min(dhi);
    if lo > hi {
        return Err(Error::Domain { x: l, lo: dlo, hi: dhi });
    }
    Ok((lo, hi, dlo, dhi))
}

fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    g[n] = hi;
    g
}

/// Upper approximation of the hull on `[l, u]`: hull values on a uniform
/// grid of `n` subintervals, linearly interpolated. With `a = 0` the exact
/// envelope is returned.
pub fn hull_upper(
    children: &[HullChild],
    a: f64,
    l: f64,
    u: f64,
    settings: &ApproxSettings,
) -> Result<PwlConvex> {
    validate_children(children, a)?;
    let (lo, hi, _, _) = restricted(children, l, u)?;
    if a == 0.0 {
        return Ok(convex_envelope(children)?.restrict(lo, hi).expect("nonempty restriction"));
    }
    if lo == hi {
        return Ok(PwlConvex::point(lo, hull_value(children, a, lo, settings)?.value));
    }
    let pts = uniform_grid(lo, hi, settings.n)
        .into_iter()
        .map(|x| Ok((x, hull_value(children, a, x, settings)?.value)))
        .collect::<Result<Vec<_>>>()?;
    PwlConvex::lower_hull(&pts)
}

/// Lower approximation of the hull on `[l, u]` built from tangent-like
/// extensions of grid chords. The children must be minorants of the exact
/// functions for the result to be a minorant of the exact hull.
pub fn hull_lower(
    children: &[HullChild],
    a: f64,
    l: f64,
    u: f64,
    settings: &ApproxSettings,
) -> Result<PwlConvex> {
    validate_children(children, a)?;
    let (lo, hi, dlo, dhi) = restricted(children, l, u)?;
    if a == 0.0 {
        return Ok(convex_envelope(children)?.restrict(lo, hi).expect("nonempty restriction"));
    }
    let g = |x: f64| hull_value(children, a, x, settings).map(|s| s.dual_value);
    if lo == hi {
        return Ok(PwlConvex::point(lo, g(lo)?));
    }
    let n = settings.n;
    let step = (hi - lo) / n as f64;
    // x̆_0 .. x̆_{n+2}: anchors around the n+1 grid points
    let mut xb: Vec<f64> = Vec::with_capacity(n + 3);
    let left = (lo > dlo).then(|| if lo - step > dlo { lo - step } else { 0.5 * (dlo + lo) });
    let right = (hi < dhi).then(|| if hi + step < dhi { hi + step } else { 0.5 * (dhi + hi) });
    xb.push(left.unwrap_or(f64::NAN));
    xb.extend(uniform_grid(lo, hi, n));
    xb.push(right.unwrap_or(f64::NAN));
    let mut gb = vec![f64::NAN; xb.len()];
    for (i, &x) in xb.iter().enumerate() {
        if x.is_finite() {
            gb[i] = g(x)?;
        }
    }
    let last = xb.len() - 1;
    let m: Vec<f64> = (0..last)
        .map(|l| (gb[l + 1] - gb[l]) / (xb[l + 1] - xb[l]))
        .collect();
    // Without an exterior anchor the edge subinterval only has the chord of
    // its inner neighbour, extended outwards; its own chord lies above g.
    let mut pts = Vec::with_capacity(n + 1);
    if left.is_some() || n == 1 {
        pts.push((lo, gb[1]));
    }
    for l in 1..n + 1 {
        // interval [x̆_l, x̆_{l+1}] for grid points l = 1..n
        let (xl, xr) = (xb[l], xb[l + 1]);
        let has_left = l > 1 || left.is_some();
        let has_right = l < n || right.is_some();
        match (has_left, has_right) {
            (true, true) => {
                let (ml, mr) = (m[l - 1], m[l + 1]);
                let xc = if mr > ml {
                    ((mr * xr - ml * xl + gb[l] - gb[l + 1]) / (mr - ml)).clamp(xl, xr)
                } else {
                    0.5 * (xl + xr)
                };
                pts.push((xc, ml * (xc - xl) + gb[l]));
            }
            (false, true) => pts.push((xl, gb[l + 1] - m[l + 1] * (xr - xl))),
            (true, false) => pts.push((xr, gb[l] + m[l - 1] * (xr - xl))),
            // a single subinterval with no anchors: the chord is all there is
            (false, false) => {}
        }
    }
    if right.is_some() || n == 1 {
        pts.push((hi, gb[n + 1]));
    }
    PwlConvex::lower_hull(&pts)
}

/// Independent reference evaluation of the hull by nested one-dimensional
/// convex minimisation over the weights, with the inner problem over the
/// points solved exactly by merging segments in slope order.
pub fn hull_brute_force(children: &[HullChild], a: f64, x: f64, resolution: usize) -> f64 {
    let iters = (resolution as f64).log2().ceil() as usize * 3 + 40;
    let span = |c: &HullChild| (c.f.lo(), c.f.hi());
    match children.len() {
        0 => f64::INFINITY,
        1 => children[0].f.eval(x),
        2 => {
            let obj = |q1: f64| mixture_objective(children, a, x, &[q1, 1.0 - q1]);
            let (l, u) = feasible_mix_range(span(&children[0]), span(&children[1]), x);
            golden_min(obj, l, u, iters)
        }
        3 => {
            let (b12, a12) = (
                children[1].f.lo().min(children[2].f.lo()),
                children[1].f.hi().max(children[2].f.hi()),
            );
            let obj = |q0: f64| {
                // x − q0·x_0 must be reachable by the remaining mass
                let inner = |r: f64| {
                    let q = [q0, (1.0 - q0) * r, (1.0 - q0) * (1.0 - r)];
                    mixture_objective(children, a, x, &q)
                };
                let (lo0, hi0) = span(&children[0]);
                let mix = |r: f64, end: usize| {
                    let e = |c: &HullChild| if end == 0 { c.f.lo() } else { c.f.hi() };
                    q0 * if end == 0 { lo0 } else { hi0 }
                        + (1.0 - q0) * (r * e(&children[1]) + (1.0 - r) * e(&children[2]))
                };
                let (l, u) = feasible_linear_range(
                    |r| mix(r, 0),
                    |r| mix(r, 1),
                    x,
                );
                golden_min(inner, l, u, iters)
            };
            let (l, u) = feasible_mix_range(span(&children[0]), (b12, a12), x);
            golden_min(obj, l, u, iters)
        }
        _ => unimplemented!("brute force supports at most three children"),
    }
}

/// Range of `t ∈ [0,1]` with `x ∈ t·[b1,a1] + (1−t)·[b2,a2]`.
fn feasible_mix_range(i1: (f64, f64), i2: (f64, f64), x: f64) -> (f64, f64) {
    feasible_linear_range(
        |t| t * i1.0 + (1.0 - t) * i2.0,
        |t| t * i1.1 + (1.0 - t) * i2.1,
        x,
    )
}

/// Range of `t ∈ [0,1]` with `low(t) ≤ x ≤ high(t)` for affine `low`, `high`.
fn feasible_linear_range<L: Fn(f64) -> f64, H: Fn(f64) -> f64>(low: L, high: H, x: f64) -> (f64, f64) {
    let mut l = 0.0f64;
    let mut u = 1.0f64;
    let (l0, l1) = (low(0.0), low(1.0));
    if l1 != l0 {
        let t = (x - l0) / (l1 - l0);
        if l1 > l0 { u = u.min(t) } else { l = l.max(t) }
    }
    let (h0, h1) = (high(0.0), high(1.0));
    if h1 != h0 {
        let t = (x - h0) / (h1 - h0);
        if h1 > h0 { l = l.max(t) } else { u = u.min(t) }
    }
    (l.clamp(0.0, 1.0), u.clamp(0.0, 1.0))
}

/// `min Σ q_k f_k(x_k) + a Σ q_k ln(q_k/p_k)` over points with mean `x`,
/// for fixed weights.
fn mixture_objective(children: &[HullChild], a: f64, x: f64, q: &[f64]) -> f64 {
    let entropy: f64 = children.iter().zip(q).map(|(c, &qk)| xlogx_ratio(qk, c.p)).sum();
    // inf-convolution of the perspective functions z ↦ q f(z/q)
    let mut start = 0.0;
    let mut base = 0.0;
    let mut segs: Vec<(f64, f64)> = Vec::new(); // (slope, length in z)
    for (c, &qk) in children.iter().zip(q) {
        if qk <= 0.0 {
            continue;
        }
        start += qk * c.f.lo();
        base += qk * c.f.ys()[0];
        for (w, s) in c.f.xs().windows(2).zip(c.f.slopes()) {
            segs.push((*s, qk * (w[1] - w[0])));
        }
    }
    let mut need = x - start;
    let tol = 1e-12 * (1.0 + x.abs());
    if need < -tol {
        return f64::INFINITY;
    }
    segs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut value = base;
    for (s, len) in segs {
        if need <= 0.0 {
            break;
        }
        let take = len.min(need);
        value += s * take;
        need -= take;
    }
    if need > tol {
        return f64::INFINITY;
    }
    value + a * entropy
}

/// Golden-section search for a convex function on `[l, u]`, also checking
/// both endpoints.
fn golden_min<F: Fn(f64) -> f64>(f: F, l: f64, u: f64, iters: usize) -> f64 {
    if u <= l {
        return f(l);
    }
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (l, u);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    f1.min(f2).min(f(l)).min(f(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pwl(pts: &[(f64, f64)]) -> PwlConvex {
        PwlConvex::new(pts.iter().map(|p| p.0).collect(), pts.iter().map(|p| p.1).collect()).unwrap()
    }

    fn settings() -> ApproxSettings {
        ApproxSettings::default()
    }

    #[test]
    fn eval_cases() {
        let f = pwl(&[(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(f.eval(0.5), 0.5);
        assert_eq!(f.eval(1.5), f64::INFINITY);
        assert_eq!(f.eval(-0.1), f64::INFINITY);
        let p = PwlConvex::point(2.0, 3.0);
        assert_eq!(p.eval(2.0), 3.0);
        assert_eq!(p.eval(2.1), f64::INFINITY);
    }

    #[test]
    fn rejects_nonconvex_and_unsorted() {
        assert!(PwlConvex::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 1.0]).is_err());
        assert!(PwlConvex::new(vec![0.0, 0.0], vec![0.0, 1.0]).is_err());
        assert!(PwlConvex::new(vec![], vec![]).is_err());
    }

    #[test]
    fn min_on_interval_cases() {
        let v = pwl(&[(-1.0, 1.0), (0.3, 0.0), (1.0, 0.5)]);
        assert_eq!(v.min_on_interval(-1.0, 1.0).unwrap(), (0.3, 0.0));
        let inc = pwl(&[(0.0, 0.0), (1.0, 2.0)]);
        assert_eq!(inc.min_on_interval(0.25, 2.0).unwrap().0, 0.25);
        let flat = pwl(&[(0.0, 1.0), (1.0, 0.0), (3.0, 0.0), (4.0, 2.0)]);
        assert_eq!(flat.min_on_interval(0.0, 4.0).unwrap(), (2.0, 0.0));
        assert!(inc.min_on_interval(2.0, 3.0).is_err());
    }

    #[test]
    fn support_min_cases() {
        let f = pwl(&[(0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(f.support_min(1.0), (1.0, -1.0));
        assert_eq!(f.support_min(-1.0), (0.0, 0.0));
        // tie at θ equal to the slope: smallest breakpoint
        assert_eq!(f.support_min(0.0), (0.0, 0.0));
    }

    #[test]
    fn support_min_matches_dense_grid() {
        let f = pwl(&[(-2.0, 3.0), (-1.0, 1.0), (0.5, 0.2), (2.0, 1.0), (3.0, 4.0)]);
        for i in 0..200 {
            let theta = -4.0 + 0.04 * i as f64;
            let (_, c) = f.support_min(theta);
            let brute = (0..=50_000)
                .map(|j| -2.0 + 5.0 * j as f64 / 50_000.0)
                .map(|x| f.eval(x) - theta * x)
                .fold(f64::INFINITY, f64::min);
            assert!(c <= brute + 1e-12 && c >= brute - 1e-3, "theta={theta}");
            let exact = f.xs().iter().map(|&x| f.eval(x) - theta * x).fold(f64::INFINITY, f64::min);
            assert_abs_diff_eq!(c, exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn lower_hull_of_points() {
        let f = PwlConvex::lower_hull(&[(0.0, 1.0), (1.0, 5.0), (2.0, 0.0), (2.0, -1.0), (3.0, 1.0)]).unwrap();
        assert_eq!(f.xs(), &[0.0, 2.0, 3.0]);
        assert_eq!(f.ys(), &[1.0, -1.0, 1.0]);
    }

    #[test]
    fn single_child_hull_is_identity() {
        let f = pwl(&[(0.0, 1.0), (1.0, 0.0), (2.0, 2.0)]);
        let c = [HullChild { f: &f, p: 1.0 }];
        for a in [0.0, 0.5, 3.0] {
            let s = hull_value(&c, a, 0.4, &settings()).unwrap();
            assert_abs_diff_eq!(s.value, f.eval(0.4), epsilon = 1e-15);
            assert_eq!(s.q, vec![1.0]);
        }
    }

    #[test]
    fn classical_hull_of_affine_children() {
        let f1 = PwlConvex::affine(0.0, 1.0, 1.0, 0.0);
        let f2 = PwlConvex::affine(2.0, 3.0, 0.0, 0.0);
        let c = [HullChild { f: &f1, p: 0.5 }, HullChild { f: &f2, p: 0.5 }];
        let s = hull_value(&c, 0.0, 1.5, &settings()).unwrap();
        // chord from (0,1) to (2,0); the vertex (1,1) lies above it
        assert_abs_diff_eq!(s.value, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(s.q[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(hull_brute_force(&c, 0.0, 1.5, 10_000), 0.25, epsilon = 1e-9);
    }

    #[test]
    fn two_point_children_closed_form() {
        // point children force q from the mean constraint; value is pure entropy
        let f1 = PwlConvex::point(0.0, 0.3);
        let f2 = PwlConvex::point(1.0, -0.2);
        let c = [HullChild { f: &f1, p: 0.4 }, HullChild { f: &f2, p: 0.6 }];
        let a = 0.7;
        let x = 0.25;
        let q2 = x;
        let q1 = 1.0 - x;
        let expected = q1 * 0.3 + q2 * -0.2 + a * (q1 * (q1 / 0.4f64).ln() + q2 * (q2 / 0.6f64).ln());
        let s = hull_value(&c, a, x, &settings()).unwrap();
        assert_abs_diff_eq!(s.value, expected, epsilon = 1e-10);
        assert_abs_diff_eq!(s.dual_value, expected, epsilon = 1e-10);
        assert!(s.residual < 1e-10);
    }

    #[test]
    fn boundary_points_of_hull_domain() {
        let f1 = PwlConvex::affine(0.0, 1.0, 0.5, 1.0);
        let f2 = PwlConvex::affine(0.0, 2.0, 0.0, -1.0);
        let c = [HullChild { f: &f1, p: 0.3 }, HullChild { f: &f2, p: 0.7 }];
        let a = 2.0;
        let s = hull_value(&c, a, 0.0, &settings()).unwrap();
        let expected = -a * (0.3 * (-0.5f64 / a).exp() + 0.7 * (0.0f64 / a).exp()).ln();
        assert_abs_diff_eq!(s.value, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(hull_brute_force(&c, a, 0.0, 10_000), expected, epsilon = 1e-9);
        let s = hull_value(&c, a, 2.0, &settings()).unwrap();
        assert_eq!(s.q, vec![0.0, 1.0]);
        assert_abs_diff_eq!(s.value, -2.0 + a * (1.0f64 / 0.7).ln(), epsilon = 1e-12);
        assert!(hull_value(&c, a, 2.5, &settings()).is_err());
    }

    #[test]
    fn optimality_identity_for_active_children() {
        let f1 = pwl(&[(0.0, 1.0), (0.5, 0.2), (1.0, 0.1)]);
        let f2 = pwl(&[(0.8, 0.0), (1.5, 0.3), (2.0, 1.5)]);
        let c = [HullChild { f: &f1, p: 0.45 }, HullChild { f: &f2, p: 0.55 }];
        let a = 0.3;
        for x in [0.2, 0.7, 1.0, 1.6] {
            let s = hull_value(&c, a, x, &settings()).unwrap();
            for k in 0..2 {
                if s.q[k] > 0.0 {
                    let lhs = c[k].f.eval(s.x[k]) + a * (s.q[k] / c[k].p).ln();
                    assert_abs_diff_eq!(lhs, s.theta * s.x[k] + s.intercept, epsilon = 1e-9);
                }
            }
            assert_abs_diff_eq!(s.value, s.dual_value, epsilon = 1e-9);
        }
    }

    #[test]
    fn upper_and_lower_bracket_exact_hull() {
        let f1 = pwl(&[(0.0, 1.0), (0.5, 0.2), (1.0, 0.1)]);
        let f2 = pwl(&[(0.8, 0.0), (1.5, 0.3), (2.0, 1.5)]);
        let c = [HullChild { f: &f1, p: 0.45 }, HullChild { f: &f2, p: 0.55 }];
        let a = 0.3;
        let st = ApproxSettings { n: 8, ..settings() };
        let up = hull_upper(&c, a, 0.3, 1.7, &st).unwrap();
        let low = hull_lower(&c, a, 0.3, 1.7, &st).unwrap();
        for i in 0..=100 {
            let x = 0.3 + 1.4 * i as f64 / 100.0;
            let exact = hull_value(&c, a, x, &st).unwrap().value;
            assert!(low.eval(x) <= exact + 1e-9, "x={x}");
            assert!(up.eval(x) >= exact - 1e-9, "x={x}");
        }
        assert_eq!(up.convexity_defect(), 0.0);
        assert_eq!(low.convexity_defect(), 0.0);
    }

    #[test]
    fn affine_hull_is_reproduced_by_both_methods() {
        // one child: the hull is the child itself
        let f = PwlConvex::affine(0.0, 2.0, 1.0, 0.5);
        let c = [HullChild { f: &f, p: 1.0 }];
        let st = ApproxSettings { n: 4, ..settings() };
        let up = hull_upper(&c, 1.0, 0.5, 1.5, &st).unwrap();
        let low = hull_lower(&c, 1.0, 0.5, 1.5, &st).unwrap();
        for x in [0.5, 0.9, 1.5] {
            assert_abs_diff_eq!(up.eval(x), f.eval(x), epsilon = 1e-12);
            assert_abs_diff_eq!(low.eval(x), f.eval(x), epsilon = 1e-12);
        }
    }

    #[test]
    fn brute_force_three_children() {
        let f1 = pwl(&[(0.0, 1.0), (1.0, 0.0)]);
        let f2 = pwl(&[(0.5, 0.0), (1.5, 0.5)]);
        let f3 = PwlConvex::point(2.0, -0.5);
        let c = [
            HullChild { f: &f1, p: 0.2 },
            HullChild { f: &f2, p: 0.5 },
            HullChild { f: &f3, p: 0.3 },
        ];
        for a in [0.0, 0.3, 5.0] {
            for x in [0.2, 1.0, 1.8] {
                let s = hull_value(&c, a, x, &settings()).unwrap();
                let b = hull_brute_force(&c, a, x, 10_000);
                assert_abs_diff_eq!(s.value, b, epsilon = 1e-6);
            }
        }
    }
}
