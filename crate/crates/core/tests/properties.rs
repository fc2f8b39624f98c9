use proptest::prelude::*;

use tcindiff::market::{LatticeParams, TreeModel};
use tcindiff::payoff::{aggregate_claim, call_physical, DisutilityProfile, PaymentStream};
use tcindiff::pricing::{indifference_prices, k_of, superhedge_ask, superhedge_bid};
use tcindiff::pwl::{hull_brute_force, hull_domain, hull_lower, hull_upper, ApproxSettings, HullChild, Method, PwlConvex};

fn convex(lo: f64, widths: Vec<f64>, mut slopes: Vec<f64>, y0: f64) -> PwlConvex {
    slopes.sort_by(|a, b| a.total_cmp(b));
    let mut xs = vec![lo];
    let mut ys = vec![y0];
    for (w, s) in widths.iter().zip(&slopes) {
        xs.push(xs.last().unwrap() + w);
        ys.push(ys.last().unwrap() + s * w);
    }
    PwlConvex::new(xs, ys).unwrap()
}

fn pwl() -> impl Strategy<Value = PwlConvex> {
    (1usize..5).prop_flat_map(|k| {
        (
            -2.0f64..2.0,
            prop::collection::vec(0.1f64..1.5, k),
            prop::collection::vec(-3.0f64..3.0, k),
            -1.0f64..1.0,
        )
            .prop_map(|(lo, w, s, y0)| convex(lo, w, s, y0))
    })
}

fn small_lattice() -> impl Strategy<Value = (TreeModel, PaymentStream, DisutilityProfile)> {
    (1usize..5, 0.05f64..0.4, 0.0f64..0.02, 0.2f64..0.8, 0.05f64..2.0, 80.0f64..120.0).prop_map(
        |(steps, sigma, cost, p, alpha, strike)| {
            let params = LatticeParams { steps, s0: 100.0, sigma, rate: 0.01, cost, p };
            let m = TreeModel::binomial(&params).unwrap();
            let c = call_physical(&m, strike).unwrap();
            (m, c, DisutilityProfile::every_date(steps, alpha).unwrap())
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn approximations_are_convex_and_bracket_the_hull(
        f1 in pwl(), f2 in pwl(), p in 0.05f64..0.95, a in 0.01f64..3.0, n in 2usize..10,
    ) {
        let children = [HullChild { f: &f1, p }, HullChild { f: &f2, p: 1.0 - p }];
        let (lo, hi) = hull_domain(&children);
        let up = hull_upper(&children, a, lo, hi, &ApproxSettings::new(Method::Upper, n)).unwrap();
        let low = hull_lower(&children, a, lo, hi, &ApproxSettings::new(Method::Lower, n)).unwrap();
        prop_assert!(up.convexity_defect() <= 1e-9);
        prop_assert!(low.convexity_defect() <= 1e-9);
        for j in 0..=10 {
            let x = if j == 10 { hi } else { lo + (hi - lo) * j as f64 / 10.0 };
            let exact = hull_brute_force(&children, a, x, 10_000);
            prop_assert!(low.eval(x) <= exact + 1e-9, "lower {} > exact {} at {}", low.eval(x), exact, x);
            prop_assert!(exact <= up.eval(x) + 1e-9, "exact {} > upper {} at {}", exact, up.eval(x), x);
        }
    }

    #[test]
    fn k_translates_with_cash((m, c, prof) in small_lattice(), delta in -5.0f64..5.0) {
        let st = ApproxSettings::new(Method::Upper, 20);
        let x = aggregate_claim(&m, &c).unwrap();
        let k0 = k_of(&m, &x, &prof, &st).unwrap();
        let k1 = k_of(&m, &x.plus_cash(delta), &prof, &st).unwrap();
        prop_assert!((k1 - k0 - delta).abs() <= 1e-9);
    }

    #[test]
    fn indifference_prices_lie_inside_superhedging_bounds((m, c, prof) in small_lattice()) {
        let w = PaymentStream::zero();
        let up = indifference_prices(&m, &c, &w, &prof, &ApproxSettings::new(Method::Upper, 40)).unwrap();
        let low = indifference_prices(&m, &c, &w, &prof, &ApproxSettings::new(Method::Lower, 40)).unwrap();
        let gap = (up.ask.value - low.ask.value).abs().max((up.bid.value - low.bid.value).abs());
        let tol = 1e-6 + gap;
        let (sa, sb) = (superhedge_ask(&m, &c).unwrap().value, superhedge_bid(&m, &c).unwrap().value);
        for q in [&up, &low] {
            prop_assert!(sb <= q.bid.value + tol);
            prop_assert!(q.bid.value <= q.ask.value + tol);
            prop_assert!(q.ask.value <= sa + tol);
        }
    }
}
