//! Baseline call prices against the grid size for both methods.
//!
//! `cargo run --release --example table1 -- 20 50 150`

use tcindiff::market::{LatticeParams, TreeModel};
use tcindiff::payoff::{DisutilityProfile, OptionKind, OptionSpec, PaymentStream, Settlement};
use tcindiff::pricing::{indifference_prices, superhedge_ask, superhedge_bid};
use tcindiff::pwl::{ApproxSettings, Method};

fn call(model: &TreeModel, exercise_at_money: bool) -> PaymentStream {
    OptionSpec {
        kind: OptionKind::Call,
        settlement: Settlement::Physical,
        strike: 100.0,
        expiry: model.horizon(),
        exercise_at_money,
    }
    .stream(model)
    .expect("valid option")
}

fn main() -> tcindiff::Result<()> {
    let params = LatticeParams { steps: 52, s0: 100.0, sigma: 0.2, rate: 0.02, cost: 0.005, p: 0.5 };
    let model = TreeModel::binomial(&params)?;
    let profile = DisutilityProfile::every_date(52, 0.1)?;

    let spread = model.with_root_spread(params.cost)?;
    let strict = call(&spread, false);
    println!(
        "superhedging: bid {:.5} ask {:.5}",
        superhedge_bid(&spread, &strict)?.value,
        superhedge_ask(&spread, &strict)?.value
    );

    let c = call(&model, true);
    let mut ns: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    if ns.is_empty() {
        ns = vec![20, 50, 100, 150];
    }
    for n in ns {
        for method in [Method::Upper, Method::Lower] {
            let p = indifference_prices(&model, &c, &PaymentStream::zero(), &profile, &ApproxSettings::new(method, n))?;
            println!("n={n:4} {method}: bid {:.5} ask {:.5} ({:.1?})", p.bid.value, p.ask.value, p.ask.elapsed);
        }
    }
    Ok(())
}
