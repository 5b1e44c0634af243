use crate::credit::Centering;
use crate::error::{Error, Result};
use crate::mdp::{build_grid_goto, build_key_door, GridObject, TabularMdp};
use crate::reflector::{JudgmentRule, OracleReflectorConfig, RemoteReflectorConfig};
use crate::train::{Method, RicolConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use toml::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    #[default]
    Fig2,
    Fig6,
    Fig7,
    Table5,
    Train,
    Solve,
}

impl Experiment {
    pub fn id(self) -> &'static str {
        match self {
            Experiment::Fig2 => "fig2",
            Experiment::Fig6 => "fig6",
            Experiment::Fig7 => "fig7",
            Experiment::Table5 => "table5",
            Experiment::Train => "train",
            Experiment::Solve => "solve",
        }
    }

    fn default_trials(self) -> u64 {
        match self {
            Experiment::Fig2 | Experiment::Table5 => 8,
            Experiment::Fig7 | Experiment::Train => 3,
            Experiment::Fig6 | Experiment::Solve => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    #[default]
    KeyDoor,
    GridGoto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub kind: EnvKind,
    pub gamma: f64,
    /// Overrides the environment's own horizon.
    pub horizon: Option<usize>,
    /// Key-Door corridor length.
    pub length: usize,
    pub width: usize,
    pub height: usize,
    pub objects: Vec<GridObject>,
    pub goal: String,
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        Self {
            kind: EnvKind::KeyDoor,
            gamma: 0.9,
            horizon: None,
            length: 10,
            width: 3,
            height: 3,
            objects: vec![
                GridObject { name: "ball".into(), x: 2, y: 2 },
                GridObject { name: "box".into(), x: 0, y: 2 },
            ],
            goal: "ball".into(),
        }
    }
}

impl EnvironmentSpec {
    pub fn build(&self) -> Result<TabularMdp> {
        let mdp = match self.kind {
            EnvKind::KeyDoor => build_key_door(self.length, self.gamma)?,
            EnvKind::GridGoto => build_grid_goto(self.width, self.height, &self.objects, &self.goal, self.gamma)?,
        };
        match self.horizon {
            Some(h) => mdp.with_horizon(h),
            None => Ok(mdp),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    Uniform,
    /// Hand-set Key-Door policy: leans toward the key, unsure about picking it up, confident
    /// once the key is held.
    #[default]
    Imperfect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub kind: PriorKind,
    /// Probability of stepping toward the key before holding it.
    pub toward_key: f64,
    /// Probability of each no-op action before holding the key.
    pub slack: f64,
    /// Probability of picking up the key where it lies.
    pub pickup: f64,
    /// Probability of stepping toward the door while holding the key.
    pub toward_door: f64,
    /// Probability of unlocking at the door.
    pub unlock: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { kind: PriorKind::Imperfect, toward_key: 0.5, slack: 0.05, pickup: 0.3, toward_door: 0.9, unlock: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorParams {
    pub beta: f64,
    pub eta: f64,
    pub accuracy: f64,
    pub judgment_rule: JudgmentRule,
    pub centering: Centering,
    /// Trajectories per state-action pair.
    pub n_grid: Vec<usize>,
    /// Total trajectory budgets.
    pub budget_grid: Vec<usize>,
    /// Reflections per state-action pair for critical-state scores.
    pub ricl_samples: usize,
    /// Trajectories labeled by the frequency baseline.
    pub labeler_trajectories: usize,
    /// Label only episodes that reached the goal, as hindsight on a success.
    pub labeler_successes_only: bool,
    pub prior: PriorSpec,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self {
            beta: 1.0,
            eta: 2.0,
            accuracy: 1.0,
            judgment_rule: JudgmentRule::ArgmaxAdvantage,
            centering: Centering::ZeroMean,
            n_grid: vec![1, 3, 10, 30, 100, 300, 1000],
            budget_grid: vec![1_000, 10_000],
            ricl_samples: 10,
            labeler_trajectories: 100,
            labeler_successes_only: true,
            prior: PriorSpec::default(),
        }
    }
}

impl EstimatorParams {
    pub fn oracle(&self) -> OracleReflectorConfig {
        OracleReflectorConfig { accuracy: self.accuracy, eta: self.eta, judgment_rule: self.judgment_rule }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingParams {
    pub ricol: RicolConfig,
    pub methods: Vec<Method>,
    pub accuracy_grid: Vec<f64>,
    /// Starting policy.
    pub init: PriorKind,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            ricol: RicolConfig::default(),
            methods: vec![Method::Ricol, Method::Rwr],
            accuracy_grid: vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.5],
            init: PriorKind::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReflectorMode {
    #[default]
    Oracle,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReflectorSpec {
    pub mode: ReflectorMode,
    pub remote: RemoteReflectorConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolvePolicy {
    #[default]
    Uniform,
    Optimal,
    Prior,
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveParams {
    pub policy: SolvePolicy,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub root_seed: u64,
    /// Trial indices. Each trial's random streams derive from the root seed and its index.
    pub seeds: Option<Vec<u64>>,
    pub output: Option<PathBuf>,
    pub environment: EnvironmentSpec,
    pub estimator: EstimatorParams,
    pub training: TrainingParams,
    pub reflector: ReflectorSpec,
    pub solve: SolveParams,
}

impl ExperimentConfig {
    pub fn for_experiment(experiment: Experiment) -> Self {
        Self { experiment, ..Default::default() }
    }

    /// Reads an optional TOML file and applies `key=value` overrides on top. Values are parsed
    /// as TOML and fall back to plain strings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>().map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let cfg: Self = Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn trials(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| (0..self.experiment.default_trials()).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials().is_empty() {
            return bad("seeds must not be empty".into());
        }
        let est = &self.estimator;
        if !(est.beta > 0.0) || !(est.eta > 0.0) {
            return bad("estimator.beta and estimator.eta must be positive".into());
        }
        if !(0.5..=1.0).contains(&est.accuracy) {
            return bad(format!("estimator.accuracy {} outside [0.5, 1]", est.accuracy));
        }
        if est.n_grid.is_empty() || est.n_grid.contains(&0) {
            return bad("estimator.n_grid must be non-empty and positive".into());
        }
        if est.budget_grid.is_empty() || est.budget_grid.contains(&0) {
            return bad("estimator.budget_grid must be non-empty and positive".into());
        }
        if est.ricl_samples == 0 || est.labeler_trajectories == 0 {
            return bad("estimator.ricl_samples and labeler_trajectories must be positive".into());
        }
        let p = &est.prior;
        if [p.toward_key, p.slack, p.pickup, p.toward_door, p.unlock].iter().any(|x| !(*x > 0.0 && *x < 1.0))
            || p.toward_key + 2.0 * p.slack >= 1.0
        {
            return bad("estimator.prior probabilities must lie in (0, 1) and leave room for the other actions".into());
        }
        let tr = &self.training;
        tr.ricol.validate().map_err(|e| Error::Config(format!("training.ricol: {e}")))?;
        if tr.methods.is_empty() {
            return bad("training.methods must not be empty".into());
        }
        if tr.accuracy_grid.is_empty() || tr.accuracy_grid.iter().any(|a| !(0.5..=1.0).contains(a)) {
            return bad("training.accuracy_grid must be non-empty with entries in [0.5, 1]".into());
        }
        if self.reflector.mode == ReflectorMode::Remote {
            self.reflector.remote.validate()?;
        }
        if matches!(self.experiment, Experiment::Fig6 | Experiment::Table5 | Experiment::Fig2)
            && self.environment.kind != EnvKind::KeyDoor
        {
            return bad(format!("{} runs on the key-door environment", self.experiment.id()));
        }
        if self.solve.policy == SolvePolicy::Checkpoint && self.solve.checkpoint.is_none() {
            return bad("solve.policy = checkpoint needs solve.checkpoint".into());
        }
        self.environment.build().map_err(|e| Error::Config(format!("environment: {e}")))?;
        Ok(())
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node.entry(part.to_string()).or_insert_with(|| Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?} descends into a non-table value")))?;
    }
    node.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}
