//! Experiment configuration: strict JSON with every default materialized on
//! resolution, so a written manifest reloads to the same experiment.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use dsmo_core::algorithms::{Algorithm, BRule, InnerWeights, StepSchedule};
use dsmo_core::network::{MixingScheme, TopologyKind};
use dsmo_core::problems::{PolicyEvalConfig, RiskAverseConfig, SyntheticConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    Ring,
    Complete,
    Star,
    Random,
}

impl From<KindName> for TopologyKind {
    fn from(k: KindName) -> Self {
        match k {
            KindName::Ring => TopologyKind::Ring,
            KindName::Complete => TopologyKind::Complete,
            KindName::Star => TopologyKind::Star,
            KindName::Random => TopologyKind::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    UniformRing,
    Metropolis,
    MeanMatrix,
}

impl From<SchemeName> for MixingScheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::UniformRing => MixingScheme::UniformRing,
            SchemeName::Metropolis => MixingScheme::Metropolis,
            SchemeName::MeanMatrix => MixingScheme::MeanMatrix,
        }
    }
}

impl From<MixingScheme> for SchemeName {
    fn from(s: MixingScheme) -> Self {
        match s {
            MixingScheme::UniformRing => SchemeName::UniformRing,
            MixingScheme::Metropolis => SchemeName::Metropolis,
            MixingScheme::MeanMatrix => SchemeName::MeanMatrix,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoName {
    Dsmo,
    Dbsa,
    Dsgd,
}

impl From<AlgoName> for Algorithm {
    fn from(a: AlgoName) -> Self {
        match a {
            AlgoName::Dsmo => Algorithm::Dsmo,
            AlgoName::Dbsa => Algorithm::Dbsa,
            AlgoName::Dsgd => Algorithm::Dsgd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeName {
    Constant,
    #[default]
    Diminishing,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BRuleConfig {
    #[default]
    Theory,
    Fixed(usize),
}

impl From<BRuleConfig> for BRule {
    fn from(b: BRuleConfig) -> Self {
        match b {
            BRuleConfig::Theory => BRule::Theory,
            BRuleConfig::Fixed(n) => BRule::Fixed(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsConfig {
    #[default]
    Harmonic,
    Constant(f64),
}

impl From<WeightsConfig> for InnerWeights {
    fn from(w: WeightsConfig) -> Self {
        match w {
            WeightsConfig::Harmonic => InnerWeights::Harmonic,
            WeightsConfig::Constant(c) => InnerWeights::Constant(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub kind: KindName,
    #[serde(rename = "K")]
    pub k: usize,
    pub edge_prob: f64,
    /// `null` picks the default scheme of `kind`.
    pub scheme: Option<SchemeName>,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { kind: KindName::Ring, k: 5, edge_prob: 0.5, scheme: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub regime: RegimeName,
    #[serde(rename = "C0")]
    pub c0: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    /// PL modulus for the diminishing regime; `null` asks the problem.
    pub mu: Option<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { regime: RegimeName::Diminishing, c0: 0.1, c1: 50.0, mu: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// DBSA inner step multiplier.
    pub inner_scale: f64,
    /// DSGD inner averaging weights.
    pub weights: WeightsConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { inner_scale: 1.0, weights: WeightsConfig::Harmonic }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub dims: Vec<usize>,
    pub heterogeneity: f64,
    pub noise: f64,
    pub cross_noise: f64,
    pub hessian_noise: f64,
    pub lambda: f64,
    pub spectrum: [f64; 2],
    pub coupling: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        let d = SyntheticConfig::default();
        SyntheticParams {
            dims: d.dims,
            heterogeneity: d.heterogeneity,
            noise: d.noise,
            cross_noise: d.cross_noise,
            hessian_noise: d.hessian_noise,
            lambda: d.lambda,
            spectrum: [d.spectrum.0, d.spectrum.1],
            coupling: d.coupling,
            seed: d.seed,
        }
    }
}

impl SyntheticParams {
    pub fn to_core(&self, agents: usize) -> SyntheticConfig {
        SyntheticConfig {
            dims: self.dims.clone(),
            agents,
            heterogeneity: self.heterogeneity,
            noise: self.noise,
            cross_noise: self.cross_noise,
            hessian_noise: self.hessian_noise,
            lambda: self.lambda,
            spectrum: (self.spectrum[0], self.spectrum[1]),
            coupling: self.coupling,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyEvalParams {
    pub num_states: usize,
    pub feat_dim: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub seed: u64,
    pub reward_scale: f64,
    pub reward_noise: f64,
}

impl Default for PolicyEvalParams {
    fn default() -> Self {
        let d = PolicyEvalConfig::default();
        PolicyEvalParams {
            num_states: d.num_states,
            feat_dim: d.feat_dim,
            gamma: d.gamma,
            lambda: d.lambda,
            seed: d.seed,
            reward_scale: d.reward_scale,
            reward_noise: d.reward_noise,
        }
    }
}

impl PolicyEvalParams {
    pub fn to_core(&self, agents: usize) -> PolicyEvalConfig {
        PolicyEvalConfig {
            num_states: self.num_states,
            feat_dim: self.feat_dim,
            gamma: self.gamma,
            lambda: self.lambda,
            agents,
            seed: self.seed,
            reward_scale: self.reward_scale,
            reward_noise: self.reward_noise,
        }
    }
}

/// Either two LIBSVM files or a generated dataset of the given size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperparamParams {
    pub train_path: Option<PathBuf>,
    pub val_path: Option<PathBuf>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_features: usize,
    pub data_seed: u64,
    pub seed: u64,
    pub base_ridge: Option<f64>,
    pub x_cap: f64,
}

impl Default for HyperparamParams {
    fn default() -> Self {
        HyperparamParams {
            train_path: None,
            val_path: None,
            n_train: 500,
            n_val: 200,
            n_features: 10,
            data_seed: 0,
            seed: 0,
            base_ridge: None,
            x_cap: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskAverseParams {
    pub feat_dim: usize,
    pub kappa: f64,
    pub lambda: f64,
    pub p: u32,
    pub n_data: usize,
    pub noise_var: f64,
    pub moment_floor: f64,
    pub seed: u64,
}

impl Default for RiskAverseParams {
    fn default() -> Self {
        let d = RiskAverseConfig::default();
        RiskAverseParams {
            feat_dim: d.feat_dim,
            kappa: d.kappa,
            lambda: d.lambda,
            p: d.p,
            n_data: d.n_data,
            noise_var: d.noise_var,
            moment_floor: d.moment_floor,
            seed: d.seed,
        }
    }
}

impl RiskAverseParams {
    pub fn to_core(&self, agents: usize) -> RiskAverseConfig {
        RiskAverseConfig {
            feat_dim: self.feat_dim,
            agents,
            kappa: self.kappa,
            lambda: self.lambda,
            p: self.p,
            n_data: self.n_data,
            noise_var: self.noise_var,
            moment_floor: self.moment_floor,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum ProblemConfig {
    Synthetic(SyntheticParams),
    PolicyEval(PolicyEvalParams),
    Hyperparam(HyperparamParams),
    RiskAverse(RiskAverseParams),
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig::Synthetic(SyntheticParams::default())
    }
}

impl ProblemConfig {
    pub fn tag(&self) -> &'static str {
        match self {
            ProblemConfig::Synthetic(_) => "synthetic",
            ProblemConfig::PolicyEval(_) => "policy_eval",
            ProblemConfig::Hyperparam(_) => "hyperparam",
            ProblemConfig::RiskAverse(_) => "risk_averse",
        }
    }

    /// Parses `{"tag": ..., params...}` keeping field paths intact.
    fn from_value(mut v: Value) -> Result<Self, CliError> {
        let obj = v
            .as_object_mut()
            .ok_or_else(|| CliError::config("/problem", "expected an object with a `tag` key"))?;
        let tag = match obj.remove("tag") {
            Some(Value::String(s)) => s,
            Some(_) => return Err(CliError::config("/problem/tag", "expected a string")),
            None => return Err(CliError::config("/problem/tag", "missing problem tag")),
        };
        match tag.as_str() {
            "synthetic" => typed(v, "/problem").map(ProblemConfig::Synthetic),
            "policy_eval" => typed(v, "/problem").map(ProblemConfig::PolicyEval),
            "hyperparam" => typed(v, "/problem").map(ProblemConfig::Hyperparam),
            "risk_averse" => typed(v, "/problem").map(ProblemConfig::RiskAverse),
            other => Err(CliError::config(
                "/problem/tag",
                format!("unknown problem `{other}` (expected synthetic, policy_eval, hyperparam or risk_averse)"),
            )),
        }
    }
}

/// Top-level experiment description. Keys that are absent take defaults;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_deserializing)]
    pub problem: ProblemConfig,
    pub network: NetworkConfig,
    pub algo: AlgoName,
    pub schedule: ScheduleConfig,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub b_rule: BRuleConfig,
    pub reps: usize,
    pub base_seed: u64,
    pub eval_every: Option<usize>,
    pub output_path: PathBuf,
    pub precision: Precision,
    pub baseline: BaselineConfig,
    pub independent_outer_draws: bool,
    pub record_wall_ms: bool,
    /// Target for `sweep` speedup tables.
    pub epsilon: Option<f64>,
    #[serde(rename = "K_list")]
    pub k_list: Option<Vec<usize>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            problem: ProblemConfig::default(),
            network: NetworkConfig::default(),
            algo: AlgoName::Dsmo,
            schedule: ScheduleConfig::default(),
            horizon: 1000,
            b_rule: BRuleConfig::Theory,
            reps: 1,
            base_seed: 0,
            eval_every: None,
            output_path: PathBuf::from("out"),
            precision: Precision::F64,
            baseline: BaselineConfig::default(),
            independent_outer_draws: false,
            record_wall_ms: false,
            epsilon: None,
            k_list: None,
        }
    }
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } | Segment::Enum { variant: key } => {
                out.push('/');
                out.push_str(&key.replace('~', "~0").replace('/', "~1"));
            }
            Segment::Unknown => out.push_str("/?"),
        }
    }
    out
}

fn typed<D: DeserializeOwned>(v: Value, prefix: &str) -> Result<D, CliError> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let pointer = format!("{prefix}{}", pointer_of(e.path()));
        CliError::config(pointer, e.inner().to_string())
    })
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self, CliError> {
        let mut root: Value = serde_json::from_str(text)
            .map_err(|e| CliError::config("", format!("invalid JSON: {e}")))?;
        let obj = root
            .as_object_mut()
            .ok_or_else(|| CliError::config("", "top level must be an object"))?;
        let problem = match obj.remove("problem") {
            Some(p) => ProblemConfig::from_value(p)?,
            None => ProblemConfig::default(),
        };
        let mut cfg: ExperimentConfig = typed(root, "")?;
        cfg.problem = problem;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn scheme(&self) -> MixingScheme {
        match self.network.scheme {
            Some(s) => s.into(),
            None => TopologyKind::from(self.network.kind).default_scheme(),
        }
    }

    /// Checks that do not need the problem instance.
    pub fn validate_static(&self) -> Result<(), CliError> {
        let net = &self.network;
        if net.k == 0 {
            return Err(CliError::config("/network/K", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&net.edge_prob) {
            return Err(CliError::config("/network/edge_prob", "must lie in [0, 1]"));
        }
        let scheme_ok = match self.scheme() {
            MixingScheme::UniformRing => net.kind == KindName::Ring,
            MixingScheme::MeanMatrix => net.kind == KindName::Complete,
            MixingScheme::Metropolis => true,
        };
        if !scheme_ok {
            return Err(CliError::config(
                "/network/scheme",
                format!("{} cannot be used with a {:?} topology", self.scheme(), net.kind),
            ));
        }
        let s = &self.schedule;
        match s.regime {
            RegimeName::Constant if !(s.c0 > 0.0) => return Err(CliError::config("/schedule/C0", "must be positive")),
            RegimeName::Diminishing if !(s.c1 > 0.0) => {
                return Err(CliError::config("/schedule/C1", "must be positive"))
            }
            _ => {}
        }
        if let Some(mu) = s.mu {
            if !(mu > 0.0) {
                return Err(CliError::config("/schedule/mu", "must be positive"));
            }
        }
        if self.eval_every == Some(0) {
            return Err(CliError::config("/eval_every", "must be at least 1"));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0) {
                return Err(CliError::config("/epsilon", "must be positive"));
            }
        }
        if let Some(list) = &self.k_list {
            check_k_list(list, "/K_list")?;
        }
        if !(self.baseline.inner_scale > 0.0) {
            return Err(CliError::config("/baseline/inner_scale", "must be positive"));
        }
        if let WeightsConfig::Constant(c) = self.baseline.weights {
            if !(c > 0.0 && c <= 1.0) {
                return Err(CliError::config("/baseline/weights/constant", "must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    /// Step schedule with `mu` resolved; `pl` is the problem's modulus.
    pub fn step_schedule(&self, pl: Option<f64>) -> Result<StepSchedule, CliError> {
        let b = self.b_rule.into();
        let schedule = match self.schedule.regime {
            RegimeName::Constant => StepSchedule::constant(self.schedule.c0, self.horizon, b),
            RegimeName::Diminishing => {
                let mu = self.schedule.mu.or(pl).ok_or_else(|| {
                    CliError::config("/schedule/mu", "the problem exposes no PL constant; set mu explicitly")
                })?;
                StepSchedule::diminishing(self.schedule.c1, mu, b)
            }
        };
        schedule
            .validate(self.network.k)
            .map_err(|e| CliError::config("/schedule", e.to_string()))?;
        Ok(schedule)
    }
}

pub fn check_k_list(list: &[usize], pointer: &str) -> Result<(), CliError> {
    if list.is_empty() {
        return Err(CliError::config(pointer, "must not be empty"));
    }
    let mut seen = BTreeSet::new();
    for (i, &k) in list.iter().enumerate() {
        if k == 0 {
            return Err(CliError::config(format!("{pointer}/{i}"), "K must be at least 1"));
        }
        if !seen.insert(k) {
            return Err(CliError::config(format!("{pointer}/{i}"), format!("duplicate K={k}")));
        }
    }
    Ok(())
}
