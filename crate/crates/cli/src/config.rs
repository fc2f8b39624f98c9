//! Run configuration: a sectioned `key = value` file (TOML syntax).

use serde::{Deserialize, Serialize};

use tcindiff::market::{Edge, LatticeParams, Node, NodeId, Portfolio, TreeModel};
use tcindiff::payoff::{DisutilityProfile, OptionKind, OptionSpec, PaymentStream, Settlement};
use tcindiff::pwl::{ApproxSettings, Method};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Syntax(String),
    #[error("{}{field}: {message}", .line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Field { field: String, line: Option<usize>, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub disutility: DisutilitySection,
    #[serde(default)]
    pub claim: PayoffSpec,
    #[serde(default)]
    pub endowment: PayoffSpec,
    #[serde(default)]
    pub approximation: ApproxSection,
    #[serde(default)]
    pub superhedge: SuperhedgeSection,
    #[serde(default)]
    pub convergence: ConvergenceSection,
    #[serde(default)]
    pub strategy: StrategySection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lattice,
    Tree,
}

/// Either lattice parameters (`kind = "lattice"`) or an explicit tree
/// (`kind = "tree"`). Fields of the other kind must be absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Effective rate over the whole horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Discount factor per level of an explicit tree; defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<Vec<f64>>,
    /// Nodes of an explicit tree in level order; a node's index is its
    /// position within its level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<TreeNodeSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeNodeSpec {
    pub t: usize,
    pub bid: f64,
    pub ask: f64,
    #[serde(default)]
    pub children: Vec<usize>,
    #[serde(default)]
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisutilitySection {
    pub injections: InjectionSet,
    pub alpha: AlphaSpec,
}

/// Either an explicit list of dates or a range string such as `"0..=52"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InjectionSet {
    List(Vec<usize>),
    Range(String),
}

impl InjectionSet {
    pub fn dates(&self) -> Result<Vec<usize>, String> {
        match self {
            InjectionSet::List(v) => Ok(v.clone()),
            InjectionSet::Range(s) => {
                let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
                    (a, b, true)
                } else if let Some((a, b)) = s.split_once("..") {
                    (a, b, false)
                } else {
                    return Err(format!("expected a range like \"0..=52\", got \"{s}\""));
                };
                let parse = |x: &str| {
                    x.trim().parse::<usize>().map_err(|_| format!("invalid range bound \"{}\"", x.trim()))
                };
                let (a, b) = (parse(a)?, parse(b)?);
                Ok(if inclusive { (a..=b).collect() } else { (a..b).collect() })
            }
        }
    }
}

/// One risk aversion for every date, or one per listed date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Constant(f64),
    Schedule(Vec<f64>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayoffKind {
    #[default]
    Zero,
    Call,
    Put,
    /// Cash `amount` paid at every node of date `time`.
    Cash,
    /// Explicit `payments` table.
    Table,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffSpec {
    #[serde(default)]
    pub kind: PayoffKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strike: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settlement: Option<SettlementSpec>,
    /// Defaults to the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expiry: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exercise_at_money: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amount: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payments: Option<Vec<PaymentSpec>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettlementSpec {
    Physical,
    Cash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaymentSpec {
    pub t: usize,
    pub node: usize,
    #[serde(default)]
    pub cash: f64,
    #[serde(default)]
    pub shares: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodSpec {
    Upper,
    Lower,
}

impl From<MethodSpec> for Method {
    fn from(m: MethodSpec) -> Method {
        match m {
            MethodSpec::Upper => Method::Upper,
            MethodSpec::Lower => Method::Lower,
        }
    }
}

impl From<Method> for MethodSpec {
    fn from(m: Method) -> MethodSpec {
        match m {
            Method::Upper => MethodSpec::Upper,
            Method::Lower => MethodSpec::Lower,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApproxSection {
    pub method: MethodSpec,
    pub n: usize,
    pub dual_tol: f64,
    pub max_iters: usize,
    /// Also quote prices with the other approximation method.
    pub companion: bool,
}

impl Default for ApproxSection {
    fn default() -> Self {
        let d = ApproxSettings::default();
        ApproxSection {
            method: d.method.into(),
            n: d.n,
            dual_tol: d.dual_tol,
            max_iters: d.max_iters,
            companion: false,
        }
    }
}

impl ApproxSection {
    pub fn settings(&self) -> ApproxSettings {
        ApproxSettings {
            method: self.method.into(),
            n: self.n,
            dual_tol: self.dual_tol,
            max_iters: self.max_iters,
        }
    }
}

/// Conventions for the superhedging bounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuperhedgeSection {
    /// Quote `(1∓k)S_0` at the root of a lattice instead of a single price.
    pub root_spread: bool,
    /// Overrides the claim's `exercise_at_money` for the bounds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exercise_at_money: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSection {
    pub ns: Vec<usize>,
    pub methods: Vec<MethodSpec>,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        ConvergenceSection {
            ns: vec![20, 50, 100, 150, 200, 300],
            methods: vec![MethodSpec::Upper, MethodSpec::Lower],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub scenarios: usize,
    pub seed: u64,
    pub bins: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection { scenarios: 1000, seed: 7, bins: 40 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

/// Line of `key` inside `[section]` (or of the section header itself).
fn locate(text: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if key.is_none() && current == section {
                return Some(i + 1);
            }
            continue;
        }
        if let (Some(k), true) = (key, current == section) {
            if line.split('=').next().map(str::trim) == Some(k) {
                return Some(i + 1);
            }
        }
    }
    None
}

fn field_error(text: &str, field: &str, message: impl Into<String>) -> ConfigError {
    let (section, key) = match field.rsplit_once('.') {
        Some((s, k)) => (s, Some(k)),
        None => (field, None),
    };
    let line = locate(text, section, key).or_else(|| locate(text, section, None));
    ConfigError::Field { field: field.to_string(), line, message: message.into() }
}

/// Names the line and the dotted field of a TOML error where possible.
fn syntax_error(text: &str, e: &toml::de::Error) -> ConfigError {
    let Some(span) = e.span() else {
        return ConfigError::Syntax(e.to_string());
    };
    let start = span.start.min(text.len());
    let line = text[..start].matches('\n').count() + 1;
    let mut section = String::new();
    for l in text.lines().take(line) {
        let l = l.trim();
        if l.starts_with('[') {
            section = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
    }
    let this = text.lines().nth(line - 1).unwrap_or("");
    let key = this.split_once('=').map(|(k, _)| k.trim()).filter(|k| !k.is_empty() && !k.starts_with('['));
    let field = match key {
        Some(k) if section.is_empty() => k.to_string(),
        Some(k) => format!("{section}.{k}"),
        None => section,
    };
    ConfigError::Field { field, line: Some(line), message: e.message().trim().to_string() }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let config: RunConfig = toml::from_str(text).map_err(|e| syntax_error(text, &e))?;
    config.validate(text)?;
    Ok(config)
}

/// Renders a configuration that [`parse_config`] reads back unchanged.
pub fn render_config(config: &RunConfig) -> String {
    toml::to_string(config).expect("configuration is serialisable")
}

impl RunConfig {
    fn validate(&self, text: &str) -> Result<(), ConfigError> {
        let tagged = |(field, message): (String, String)| field_error(text, &field, message);
        let model = self.model.build().map_err(tagged)?;
        self.build_profile(&model).map_err(tagged)?;
        self.claim.stream(&model, None, "claim").map_err(tagged)?;
        self.claim.stream(&model, self.superhedge.exercise_at_money, "claim").map_err(tagged)?;
        self.endowment.stream(&model, None, "endowment").map_err(tagged)?;
        self.approximation
            .settings()
            .validate()
            .map_err(|e| field_error(text, "approximation", e.to_string()))?;
        if self.convergence.ns.is_empty() {
            return Err(field_error(text, "convergence.ns", "sweep list must be nonempty"));
        }
        if self.convergence.methods.is_empty() {
            return Err(field_error(text, "convergence.methods", "sweep list must be nonempty"));
        }
        for &n in &self.convergence.ns {
            ApproxSettings { n, ..self.approximation.settings() }
                .validate()
                .map_err(|e| field_error(text, "convergence.ns", e.to_string()))?;
        }
        if self.simulate.scenarios == 0 {
            return Err(field_error(text, "simulate.scenarios", "must be positive"));
        }
        if self.simulate.bins == 0 {
            return Err(field_error(text, "simulate.bins", "must be positive"));
        }
        if let Some(s) = &self.strategy.scenario {
            model.scenario(s).map_err(|e| field_error(text, "strategy.scenario", e.to_string()))?;
        }
        if self.superhedge.root_spread && self.model.kind != ModelKind::Lattice {
            return Err(field_error(text, "superhedge.root_spread", "applies to lattice models only"));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<TreeModel, String> {
        self.model.build().map_err(join)
    }

    /// The model used for the superhedging bounds.
    pub fn superhedge_model(&self, model: &TreeModel) -> Result<TreeModel, String> {
        match (self.model.kind, self.superhedge.root_spread, self.model.cost) {
            (ModelKind::Lattice, true, Some(cost)) => model.with_root_spread(cost).map_err(|e| e.to_string()),
            _ => Ok(model.clone()),
        }
    }

    pub fn profile(&self, model: &TreeModel) -> Result<DisutilityProfile, String> {
        self.build_profile(model).map_err(join)
    }

    fn build_profile(&self, model: &TreeModel) -> Built<DisutilityProfile> {
        let dates = self.disutility.injections.dates().map_err(|e| ("disutility.injections".into(), e))?;
        let alphas: Vec<f64> = match &self.disutility.alpha {
            AlphaSpec::Constant(a) => vec![*a; dates.len()],
            AlphaSpec::Schedule(v) if v.len() == dates.len() => v.clone(),
            AlphaSpec::Schedule(v) => {
                return Err((
                    "disutility.alpha".into(),
                    format!("{} risk aversions for {} injection dates", v.len(), dates.len()),
                ))
            }
        };
        let pairs: Vec<(usize, f64)> = dates.into_iter().zip(alphas).collect();
        DisutilityProfile::new(model.horizon(), &pairs)
            .map_err(|e| ("disutility.injections".into(), e.to_string()))
    }

    pub fn claim_stream(&self, model: &TreeModel) -> Result<PaymentStream, String> {
        self.claim.stream(model, None, "claim").map_err(join)
    }

    /// The claim under the superhedging conventions.
    pub fn superhedge_claim(&self, model: &TreeModel) -> Result<PaymentStream, String> {
        self.claim.stream(model, self.superhedge.exercise_at_money, "claim").map_err(join)
    }

    pub fn endowment_stream(&self, model: &TreeModel) -> Result<PaymentStream, String> {
        self.endowment.stream(model, None, "endowment").map_err(join)
    }
}

/// An error tagged with the dotted path of the offending field.
type Built<T> = Result<T, (String, String)>;

fn join((field, message): (String, String)) -> String {
    format!("{field}: {message}")
}

fn required<T: Copy>(v: Option<T>, field: &str) -> Built<T> {
    v.ok_or_else(|| (field.to_string(), "missing value".to_string()))
}

fn forbid<T>(v: &Option<T>, field: &str, why: &str) -> Built<()> {
    match v {
        Some(_) => Err((field.to_string(), format!("not allowed {why}"))),
        None => Ok(()),
    }
}

impl ModelSection {
    pub fn lattice_params(&self) -> Built<LatticeParams> {
        Ok(LatticeParams {
            steps: required(self.steps, "model.steps")?,
            s0: required(self.s0, "model.s0")?,
            sigma: required(self.sigma, "model.sigma")?,
            rate: required(self.rate, "model.rate")?,
            cost: required(self.cost, "model.cost")?,
            p: required(self.p, "model.p")?,
        })
    }

    fn build(&self) -> Built<TreeModel> {
        match self.kind {
            ModelKind::Lattice => {
                forbid(&self.nodes, "model.nodes", "for a lattice")?;
                forbid(&self.discount, "model.discount", "for a lattice")?;
                let params = self.lattice_params()?;
                TreeModel::binomial(&params).map_err(|e| ("model".into(), e.to_string()))
            }
            ModelKind::Tree => {
                let why = "for an explicit tree";
                forbid(&self.steps, "model.steps", why)?;
                forbid(&self.s0, "model.s0", why)?;
                forbid(&self.sigma, "model.sigma", why)?;
                forbid(&self.rate, "model.rate", why)?;
                forbid(&self.cost, "model.cost", why)?;
                forbid(&self.p, "model.p", why)?;
                let nodes = self.nodes.as_ref().ok_or(("model.nodes".to_string(), "missing value".to_string()))?;
                let horizon = nodes
                    .iter()
                    .map(|n| n.t)
                    .max()
                    .ok_or(("model.nodes".to_string(), "tree has no nodes".to_string()))?;
                let mut levels: Vec<Vec<Node>> = vec![Vec::new(); horizon + 1];
                for (i, n) in nodes.iter().enumerate() {
                    if n.children.len() != n.probs.len() {
                        return Err((
                            "model.nodes".into(),
                            format!("entry {i}: {} children but {} probs", n.children.len(), n.probs.len()),
                        ));
                    }
                    let succ =
                        n.children.iter().zip(&n.probs).map(|(&child, &prob)| Edge { child, prob }).collect();
                    levels[n.t].push(Node::new(n.bid, n.ask, succ));
                }
                TreeModel::from_levels(levels, self.discount.clone())
                    .map_err(|e| ("model.nodes".into(), e.to_string()))
            }
        }
    }
}

impl PayoffSpec {
    fn stream(&self, model: &TreeModel, at_money: Option<bool>, section: &str) -> Built<PaymentStream> {
        let f = |name: &str| format!("{section}.{name}");
        let fail = |name: &str, e: String| (f(name), e);
        let is_option = matches!(self.kind, PayoffKind::Call | PayoffKind::Put);
        if !is_option {
            let why = "for this kind";
            forbid(&self.strike, &f("strike"), why)?;
            forbid(&self.settlement, &f("settlement"), why)?;
            forbid(&self.expiry, &f("expiry"), why)?;
            forbid(&self.exercise_at_money, &f("exercise_at_money"), why)?;
        }
        if self.kind != PayoffKind::Cash {
            forbid(&self.amount, &f("amount"), "for this kind")?;
            forbid(&self.time, &f("time"), "for this kind")?;
        }
        if self.kind != PayoffKind::Table {
            forbid(&self.payments, &f("payments"), "for this kind")?;
        }
        match self.kind {
            PayoffKind::Zero => Ok(PaymentStream::zero()),
            PayoffKind::Call | PayoffKind::Put => OptionSpec {
                kind: if self.kind == PayoffKind::Call { OptionKind::Call } else { OptionKind::Put },
                settlement: match self.settlement.unwrap_or(SettlementSpec::Physical) {
                    SettlementSpec::Physical => Settlement::Physical,
                    SettlementSpec::Cash => Settlement::Cash,
                },
                strike: required(self.strike, &f("strike"))?,
                expiry: self.expiry.unwrap_or(model.horizon()),
                exercise_at_money: at_money.or(self.exercise_at_money).unwrap_or(false),
            }
            .stream(model)
            .map_err(|e| fail("strike", e.to_string())),
            PayoffKind::Cash => {
                let amount = required(self.amount, &f("amount"))?;
                let time = self.time.unwrap_or(0);
                if time > model.horizon() {
                    return Err(fail("time", format!("{time} exceeds the horizon {}", model.horizon())));
                }
                Ok(PaymentStream::cash_at_time(model, time, amount))
            }
            PayoffKind::Table => {
                let mut s = PaymentStream::zero();
                let payments = self.payments.as_ref().ok_or_else(|| fail("payments", "missing value".into()))?;
                for p in payments {
                    s.add(NodeId::new(p.t, p.node), Portfolio::new(p.cash, p.shares));
                }
                s.validate(model).map_err(|e| fail("payments", e.to_string()))?;
                Ok(s)
            }
        }
    }
}
