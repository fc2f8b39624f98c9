use std::path::{Path, PathBuf};
use std::process::Command as Process;

use proptest::prelude::*;
use tcindiff_cli::config::{
    AlphaSpec, InjectionSet, MethodSpec, ModelKind, PayoffKind, SettlementSpec,
};
use tcindiff_cli::{parse_config, render_config, run, Command, ConfigError, RunConfig};

const SMALL: &str = r#"
[model]
kind = "lattice"
steps = 4
s0 = 100.0
sigma = 0.2
rate = 0.02
cost = 0.005
p = 0.55

[disutility]
injections = [0, 2, 4]
alpha = 0.3

[claim]
kind = "call"
strike = 100.0

[approximation]
n = 30

[convergence]
ns = [10, 20]

[strategy]
scenario = "udud"

[simulate]
scenarios = 50
seed = 7
bins = 5
"#;

fn baseline_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/baseline.toml")
}

fn binary() -> Process {
    Process::new(env!("CARGO_BIN_EXE_tcindiff"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn baseline_config_parses() {
    let text = std::fs::read_to_string(baseline_path()).unwrap();
    let c = parse_config(&text).unwrap();
    let model = c.build_model().unwrap();
    assert_eq!(model.horizon(), 52);
    let prof = c.profile(&model).unwrap();
    assert_eq!(prof.times(), (0..=52).collect::<Vec<_>>());
    assert!(prof.times().iter().all(|&t| prof.alpha(t) == Some(0.1)));
    assert_eq!(c.approximation.n, 150);
}

#[test]
fn empty_injection_set_is_rejected() {
    let text = SMALL.replace("injections = [0, 2, 4]", "injections = []");
    let err = parse_config(&text).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("injection set must be nonempty"), "{msg}");
    assert!(msg.contains("disutility.injections"), "{msg}");
}

#[test]
fn malformed_number_names_the_field() {
    let text = SMALL.replace("sigma = 0.2", "sigma = \"0.2x\"");
    match parse_config(&text).unwrap_err() {
        ConfigError::Field { field, line, .. } => {
            assert_eq!(field, "model.sigma");
            assert_eq!(line, Some(6));
        }
        other => panic!("unexpected {other}"),
    }
    let text = SMALL.replace("n = 30", "n = 3x0");
    let msg = parse_config(&text).unwrap_err().to_string();
    assert!(msg.contains("approximation.n"), "{msg}");
}

#[test]
fn unknown_keys_and_foreign_fields_are_rejected() {
    let text = SMALL.replace("p = 0.55", "p = 0.55\nvolatility = 1.0");
    assert!(parse_config(&text).unwrap_err().to_string().contains("volatility"));
    let text = SMALL.replace("strike = 100.0", "strike = 100.0\namount = 3.0");
    let msg = parse_config(&text).unwrap_err().to_string();
    assert!(msg.contains("claim.amount"), "{msg}");
    let text = SMALL.replace("ns = [10, 20]", "ns = []");
    assert!(parse_config(&text).unwrap_err().to_string().contains("nonempty"));
}

#[test]
fn injection_ranges() {
    let half_open = SMALL.replace("injections = [0, 2, 4]", "injections = \"1..4\"");
    let c = parse_config(&half_open).unwrap();
    assert_eq!(c.disutility.injections.dates().unwrap(), vec![1, 2, 3]);
    let closed = SMALL.replace("injections = [0, 2, 4]", "injections = \"2..=4\"");
    let c = parse_config(&closed).unwrap();
    assert_eq!(c.disutility.injections.dates().unwrap(), vec![2, 3, 4]);
}

#[test]
fn baseline_round_trips() {
    let text = std::fs::read_to_string(baseline_path()).unwrap();
    let c = parse_config(&text).unwrap();
    assert_eq!(parse_config(&render_config(&c)).unwrap(), c);
}

fn config_strategy() -> impl Strategy<Value = RunConfig> {
    (
        1usize..8,
        50.0f64..150.0,
        0.05f64..0.5,
        0.0f64..0.05,
        0.0f64..0.02,
        0.2f64..0.8,
        prop::collection::vec(0.01f64..2.0, 1..4),
        any::<bool>(),
        prop_oneof![Just(MethodSpec::Upper), Just(MethodSpec::Lower)],
        (2usize..400, any::<u32>(), 1usize..100_000, any::<bool>(), any::<bool>()),
    )
        .prop_map(|(steps, s0, sigma, rate, cost, p, alphas, range, method, (n, seed, scen, put, atm))| {
            let mut c = parse_config(SMALL).unwrap();
            c.model.steps = Some(steps);
            c.model.s0 = Some(s0);
            c.model.sigma = Some(sigma);
            c.model.rate = Some(rate);
            c.model.cost = Some(cost);
            c.model.p = Some(p);
            if range {
                c.disutility.injections = InjectionSet::Range(format!("0..={steps}"));
                c.disutility.alpha = AlphaSpec::Constant(alphas[0]);
            } else {
                let dates: Vec<usize> = (0..alphas.len()).map(|i| i.min(steps)).collect();
                let mut dates = dates;
                dates.dedup();
                c.disutility.alpha = AlphaSpec::Schedule(alphas[..dates.len()].to_vec());
                c.disutility.injections = InjectionSet::List(dates);
            }
            c.claim.kind = if put { PayoffKind::Put } else { PayoffKind::Call };
            c.claim.strike = Some(s0);
            c.claim.settlement = Some(if atm { SettlementSpec::Cash } else { SettlementSpec::Physical });
            c.claim.exercise_at_money = Some(atm);
            c.approximation.method = method;
            c.approximation.n = n;
            c.simulate.seed = seed as u64;
            c.simulate.scenarios = scen;
            c.strategy.scenario = Some("u".repeat(steps));
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn render_then_parse_is_identity(c in config_strategy()) {
        let text = render_config(&c);
        prop_assert_eq!(parse_config(&text).unwrap(), c);
    }
}

#[test]
fn explicit_tree_config() {
    let text = r#"
[model]
kind = "tree"

[[model.nodes]]
t = 0
bid = 100.0
ask = 100.0
children = [0, 1, 2]
probs = [0.3, 0.4, 0.3]

[[model.nodes]]
t = 1
bid = 108.0
ask = 110.0

[[model.nodes]]
t = 1
bid = 99.0
ask = 101.0

[[model.nodes]]
t = 1
bid = 90.0
ask = 91.0

[disutility]
injections = [1]
alpha = 0.5

[claim]
kind = "table"
payments = [{ t = 1, node = 0, cash = 5.0 }, { t = 1, node = 2, shares = -0.1 }]
"#;
    let c = parse_config(text).unwrap();
    assert_eq!(c.model.kind, ModelKind::Tree);
    assert_eq!(parse_config(&render_config(&c)).unwrap(), c);
    let rep = run(Command::Price, &c).unwrap();
    let ask: f64 = rep.table.rows[0][1].parse().unwrap();
    let bid: f64 = rep.table.rows[1][1].parse().unwrap();
    let sh_ask: f64 = rep.table.rows[2][1].parse().unwrap();
    let sh_bid: f64 = rep.table.rows[3][1].parse().unwrap();
    assert!(sh_bid <= bid + 1e-6 && bid <= ask + 1e-6 && ask <= sh_ask + 1e-6);
}

#[test]
fn price_report_layout() {
    let c = parse_config(SMALL).unwrap();
    let rep = run(Command::Price, &c).unwrap();
    let csv = rep.table.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "quantity,value,method,n");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("indifference_ask,") && lines[1].ends_with(",upper,30"));
    // six significant digits at most
    for l in &lines[1..] {
        let v = l.split(',').nth(1).unwrap();
        let digits = v.chars().filter(|c| c.is_ascii_digit()).count();
        assert!(digits <= 6, "{v}");
    }
}

#[test]
fn convergence_and_strategy_reports() {
    let c = parse_config(SMALL).unwrap();
    let rep = run(Command::Convergence, &c).unwrap();
    assert_eq!(rep.table.header, vec!["method", "quantity", "10", "20"]);
    assert_eq!(rep.table.rows.len(), 4);
    let rep = run(Command::Strategy, &c).unwrap();
    assert_eq!(rep.table.rows.len(), 5);
    // flat at the horizon
    assert_eq!(rep.table.rows[4][7], "0");
    assert_eq!(rep.table.rows[4][8], "0");
}

#[test]
fn simulate_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let outs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("sim{i}.csv"))).collect();
    for out in &outs {
        let status = binary()
            .args(["simulate", "--config"])
            .arg(&cfg)
            .args(["--seed", "7", "--n", "1000", "--out"])
            .arg(out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    }
    let a = std::fs::read(&outs[0]).unwrap();
    assert_eq!(a, std::fs::read(&outs[1]).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("bin_lo,bin_hi,count\n"));
    let total: usize = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 1000);
}

#[test]
fn arbitrage_tree_fails_with_the_node() {
    let text = r#"
[model]
kind = "tree"
nodes = [
  { t = 0, bid = 100.0, ask = 100.0, children = [0, 1], probs = [0.5, 0.5] },
  { t = 1, bid = 101.0, ask = 102.0 },
  { t = 1, bid = 100.5, ask = 101.0 },
]

[disutility]
injections = [1]
alpha = 1.0
"#;
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "arb.toml", text);
    let out = dir.path().join("check.csv");
    let res = binary().args(["check", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(res.status.code(), Some(3));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("(t=0, node=0)"), "{err}");
    assert!(!out.exists());
}

#[test]
fn failures_leave_no_report_and_map_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("price.csv");
    let bad = write(dir.path(), "bad.toml", &SMALL.replace("alpha = 0.3", "alpha = \"high\""));
    let res = binary().args(["price", "--config"]).arg(&bad).arg("--out").arg(&out).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists());

    // a scenario of the wrong length is an input error
    let cfg = write(dir.path(), "small.toml", SMALL);
    let res = binary()
        .args(["strategy", "--config"])
        .arg(&cfg)
        .args(["--scenario", "uu", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists());

    let res = binary().args(["check", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(res.status.success());
    assert!(std::fs::read_to_string(&out).unwrap().starts_with("t,node,bid,ask,"));
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty());
}
