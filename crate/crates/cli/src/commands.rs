//! Command dispatch. Each command turns a configuration into one CSV table
//! plus a few human-readable summary lines.

use std::time::Instant;

use tcindiff::market::{check_robust_no_arbitrage, NodeId, TreeModel};
use tcindiff::payoff::PaymentStream;
use tcindiff::pricing::{disutility_value, indifference_prices, superhedge_ask, superhedge_bid};
use tcindiff::pwl::{ApproxSettings, Method};
use tcindiff::strategy::{simulate_with_surface, strategy_surface, trade_path, Histogram};

use crate::config::RunConfig;
use crate::report::{num, Table};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    /// Indifference prices and superhedging bounds.
    Price,
    /// Minimal disutility V and the multiplier λ̂.
    Disutility,
    /// Indifference prices against the grid size, both methods.
    Convergence,
    /// Shadow prices, injections and positions along one scenario.
    Strategy,
    /// Histogram of the optimal P&L over simulated scenarios.
    Simulate,
    /// Robust no-arbitrage witness.
    Check,
}

/// Command-line values that take precedence over the configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub method: Option<Method>,
    /// Grid size (or the number of scenarios for `simulate`).
    pub n: Option<usize>,
    /// Grid size for every command.
    pub grid: Option<usize>,
    pub seed: Option<u64>,
    pub scenario: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub table: Table,
    /// Lines for the terminal; never part of the report file.
    pub summary: Vec<String>,
}

fn input(e: String) -> CliError {
    CliError::Input(e)
}

/// Applies the overrides to the configuration and re-validates it.
pub fn apply_overrides(config: &RunConfig, command: Command, o: &Overrides) -> Result<RunConfig, CliError> {
    let mut c = config.clone();
    if let Some(m) = o.method {
        c.approximation.method = m.into();
    }
    match (command, o.n) {
        (Command::Simulate, Some(n)) => c.simulate.scenarios = n,
        (_, Some(n)) => c.approximation.n = n,
        _ => {}
    }
    if let Some(g) = o.grid {
        c.approximation.n = g;
    }
    if let Some(s) = o.seed {
        c.simulate.seed = s;
    }
    if let Some(s) = &o.scenario {
        c.strategy.scenario = Some(s.clone());
    }
    crate::config::parse_config(&crate::config::render_config(&c))?;
    Ok(c)
}

pub fn run(command: Command, config: &RunConfig) -> Result<Report, CliError> {
    let model = config.build_model().map_err(input)?;
    match command {
        Command::Price => price(config, &model),
        Command::Disutility => disutility(config, &model),
        Command::Convergence => convergence(config, &model),
        Command::Strategy => strategy(config, &model),
        Command::Simulate => simulate(config, &model),
        Command::Check => check(&model),
    }
}

fn method_name(m: Method) -> String {
    m.as_str().to_string()
}

fn price(config: &RunConfig, model: &TreeModel) -> Result<Report, CliError> {
    let profile = config.profile(model).map_err(input)?;
    let c = config.claim_stream(model).map_err(input)?;
    let w = config.endowment_stream(model).map_err(input)?;
    let settings = config.approximation.settings();
    let mut methods = vec![settings.method];
    if config.approximation.companion {
        methods.push(match settings.method {
            Method::Upper => Method::Lower,
            Method::Lower => Method::Upper,
        });
    }
    let mut table = Table::new(&["quantity", "value", "method", "n"]);
    let mut summary = Vec::new();
    for m in methods {
        let st = ApproxSettings { method: m, ..settings };
        let start = Instant::now();
        let p = indifference_prices(model, &c, &w, &profile, &st)?;
        summary.push(format!("{} n={}: {:.2?}", m, st.n, start.elapsed()));
        table.push(vec!["indifference_ask".into(), num(p.ask.value), method_name(m), st.n.to_string()]);
        table.push(vec!["indifference_bid".into(), num(p.bid.value), method_name(m), st.n.to_string()]);
    }
    let sm = config.superhedge_model(model).map_err(input)?;
    let sc = config.superhedge_claim(&sm).map_err(input)?;
    let ask = superhedge_ask(&sm, &sc)?;
    let bid = superhedge_bid(&sm, &sc)?;
    table.push(vec!["superhedge_ask".into(), num(ask.value), "exact".into(), String::new()]);
    table.push(vec!["superhedge_bid".into(), num(bid.value), "exact".into(), String::new()]);
    Ok(Report { table, summary })
}

/// Liability of a seller of the claim who holds the endowment: `u = c − w`.
fn liability(config: &RunConfig, model: &TreeModel) -> Result<PaymentStream, CliError> {
    let c = config.claim_stream(model).map_err(input)?;
    let w = config.endowment_stream(model).map_err(input)?;
    Ok(c.minus(&w))
}

fn disutility(config: &RunConfig, model: &TreeModel) -> Result<Report, CliError> {
    let profile = config.profile(model).map_err(input)?;
    let w = config.endowment_stream(model).map_err(input)?;
    let settings = config.approximation.settings();
    let mut table = Table::new(&["position", "V", "lambda", "K"]);
    for (name, u) in [("endowment", w.scaled(-1.0)), ("seller", liability(config, model)?)] {
        let d = disutility_value(model, &u, &profile, &settings)?;
        table.push(vec![name.into(), num(d.value), num(d.lambda), num(d.k)]);
    }
    Ok(Report { table, summary: Vec::new() })
}

fn convergence(config: &RunConfig, model: &TreeModel) -> Result<Report, CliError> {
    let profile = config.profile(model).map_err(input)?;
    let c = config.claim_stream(model).map_err(input)?;
    let w = config.endowment_stream(model).map_err(input)?;
    let ns = &config.convergence.ns;
    let mut header = vec!["method".to_string(), "quantity".to_string()];
    header.extend(ns.iter().map(|n| n.to_string()));
    let mut table = Table { header, rows: Vec::new() };
    let mut summary = Vec::new();
    for &m in &config.convergence.methods {
        let mut bids = vec![method_name(m.into()), "bid".into()];
        let mut asks = vec![method_name(m.into()), "ask".into()];
        for &n in ns {
            let st = ApproxSettings { method: m.into(), n, ..config.approximation.settings() };
            let start = Instant::now();
            let p = indifference_prices(model, &c, &w, &profile, &st)?;
            summary.push(format!("{} n={n}: {:.2?}", Method::from(m), start.elapsed()));
            bids.push(num(p.bid.value));
            asks.push(num(p.ask.value));
        }
        table.push(bids);
        table.push(asks);
    }
    Ok(Report { table, summary })
}

fn strategy(config: &RunConfig, model: &TreeModel) -> Result<Report, CliError> {
    let spec = config
        .strategy
        .scenario
        .as_deref()
        .ok_or_else(|| CliError::Input("strategy needs a scenario (strategy.scenario or --scenario)".into()))?;
    let path = model.scenario(spec)?;
    let profile = config.profile(model).map_err(input)?;
    let u = liability(config, model)?;
    let surface = strategy_surface(model, &u, &profile, &config.approximation.settings())?;
    let tp = trade_path(&surface, model, &path, &u, &profile)?;
    let mut table = Table::new(&[
        "t",
        "node",
        "bid",
        "ask",
        "shadow_price",
        "q",
        "injection",
        "cash",
        "shares",
        "trade_shares",
        "realized_injection",
        "self_financing_residual",
        "spread_cost",
    ]);
    let shadow = &tp.injections.shadow;
    for t in 0..tp.nodes.len() {
        let q = if t == 0 { 1.0 } else { shadow.realized_q[t - 1] };
        table.push(vec![
            t.to_string(),
            tp.nodes[t].to_string(),
            num(tp.bid[t]),
            num(tp.ask[t]),
            num(tp.shadow_prices[t]),
            num(q),
            num(tp.injections.injections[t]),
            num(tp.positions[t].cash),
            num(tp.positions[t].shares),
            num(tp.trades[t].shares),
            num(tp.realized_injections[t]),
            num(tp.diagnostics.self_financing[t]),
            num(tp.diagnostics.spread_cost[t]),
        ]);
    }
    let summary = vec![
        format!("K = {}, lambda = {}", num(shadow.k), num(tp.injections.lambda())),
        format!("P&L = {}", num(tp.injections.pnl())),
        format!(
            "max self-financing residual {:e}, max spread cost {:e}",
            tp.diagnostics.max_self_financing(),
            tp.diagnostics.max_spread_cost()
        ),
    ];
    Ok(Report { table, summary })
}

fn simulate(config: &RunConfig, model: &TreeModel) -> Result<Report, CliError> {
    let profile = config.profile(model).map_err(input)?;
    let u = liability(config, model)?;
    let surface = strategy_surface(model, &u, &profile, &config.approximation.settings())?;
    let sim = &config.simulate;
    let s = simulate_with_surface(&surface, model, &profile, sim.scenarios, sim.seed)?;
    let hist = Histogram::new(&s.samples, sim.bins);
    let mut table = Table::new(&["bin_lo", "bin_hi", "count"]);
    for (i, &count) in hist.counts.iter().enumerate() {
        table.push(vec![num(hist.edges[i]), num(hist.edges[i + 1]), count.to_string()]);
    }
    let mut summary = vec![
        format!("scenarios {} seed {}", s.scenarios, s.seed),
        format!("mean P&L {} (se {})", num(s.mean), num(s.std_error)),
        format!("profit term {}", num(s.profit_term)),
        format!(
            "mean disutility {} (se {}), V = {}",
            num(s.disutility_mean),
            num(s.disutility_std_error),
            num(s.value)
        ),
    ];
    summary.extend(s.quantiles.iter().map(|(l, v)| format!("q{:.0} {}", l * 100.0, num(*v))));
    Ok(Report { table, summary })
}

fn check(model: &TreeModel) -> Result<Report, CliError> {
    let w = check_robust_no_arbitrage(model)?;
    let mut table = Table::new(&["t", "node", "bid", "ask", "interval_lo", "interval_hi", "price"]);
    for (t, level) in w.intervals.iter().enumerate() {
        for (idx, iv) in level.iter().enumerate() {
            let node = model.node(NodeId::new(t, idx));
            table.push(vec![
                t.to_string(),
                idx.to_string(),
                num(node.bid),
                num(node.ask),
                num(iv.lo),
                num(iv.hi),
                num(w.prices[t][idx]),
            ]);
        }
    }
    let summary = vec![format!(
        "robust no-arbitrage holds; midpoint selection is {}a martingale",
        if w.martingale { "" } else { "not " }
    )];
    Ok(Report { table, summary })
}
