//! The online loop: collect trajectories, turn hindsight feedback into per-state target
//! policies, and project the trust-region target back onto the policy class.

use crate::credit::{induced_policy, ricl_advantage, Centering};
use crate::error::{invalid_arg, Error, Result};
use crate::mdp::{exact_value, rollout, Start, TabularMdp, Trajectory};
use crate::policy::{log_normalize, per_state_kl, FeatureSoftmaxPolicy, Policy, TabularPolicy, TargetDistribution};
use crate::reflector::{ReflectionContext, Reflector};
use log::{debug, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Consecutive loss increases that count as divergence in gradient projection.
const DIVERGENCE_STREAK: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Projection {
    #[default]
    ExactTabular,
    Gradient { learning_rate: f64, steps: usize },
}

/// How visited states are weighted in the projection objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisitWeighting {
    /// Raw visit counts.
    #[default]
    Count,
    /// Each visit at step `t` counts `gamma^t`.
    Discounted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2 {
    pub enabled: bool,
    /// First iteration (0-based) that uses return-weighted updates.
    pub threshold: usize,
}

impl Default for Stage2 {
    fn default() -> Self {
        Self { enabled: false, threshold: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RicolConfig {
    pub iterations: usize,
    /// Trajectories collected per iteration.
    pub trajectories: usize,
    pub beta: f64,
    pub alpha: f64,
    pub projection: Projection,
    pub weighting: VisitWeighting,
    pub centering: Centering,
    pub stage2: Stage2,
    pub eval_episodes: usize,
    /// Pseudo-count of the current policy mixed into return-weighted action frequencies.
    pub rwr_prior_count: f64,
}

impl Default for RicolConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            trajectories: 16,
            beta: 1.0,
            alpha: 0.5,
            projection: Projection::ExactTabular,
            weighting: VisitWeighting::Count,
            centering: Centering::ZeroMean,
            stage2: Stage2::default(),
            eval_episodes: 200,
            rwr_prior_count: 1.0,
        }
    }
}

impl RicolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.trajectories == 0 || self.eval_episodes == 0 {
            return Err(invalid_arg("iterations, trajectories and eval_episodes must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid_arg(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(invalid_arg(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.rwr_prior_count > 0.0) {
            return Err(invalid_arg("rwr_prior_count must be positive"));
        }
        if let Projection::Gradient { learning_rate, steps } = self.projection {
            if !(learning_rate > 0.0) || steps == 0 {
                return Err(invalid_arg("gradient projection needs a positive rate and step count"));
            }
        }
        Ok(())
    }
}

/// Trajectories from one collection round and the states they visit.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentBatch {
    pub trajectories: Vec<Trajectory>,
    pub visit_counts: BTreeMap<usize, usize>,
}

impl ExperimentBatch {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        let mut visit_counts = BTreeMap::new();
        for traj in &trajectories {
            for st in &traj.steps {
                *visit_counts.entry(st.state).or_insert(0) += 1;
            }
        }
        Self { trajectories, visit_counts }
    }

    /// Environment steps consumed.
    pub fn env_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn visited_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.visit_counts.keys().copied()
    }

    /// Projection weight per visited state, scaled so the largest is 1.
    pub fn weights(&self, weighting: VisitWeighting, gamma: f64) -> BTreeMap<usize, f64> {
        let mut w: BTreeMap<usize, f64> = BTreeMap::new();
        for traj in &self.trajectories {
            for (t, st) in traj.steps.iter().enumerate() {
                let inc = match weighting {
                    VisitWeighting::Count => 1.0,
                    VisitWeighting::Discounted => gamma.powi(t as i32),
                };
                *w.entry(st.state).or_insert(0.0) += inc;
            }
        }
        let max = w.values().copied().fold(0.0, f64::max);
        if max > 0.0 {
            w.values_mut().for_each(|x| *x /= max);
        }
        w
    }
}

pub fn collect<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    n: usize,
    rng: &mut R,
) -> Result<ExperimentBatch> {
    if n == 0 {
        return Err(invalid_arg("collect needs n >= 1"));
    }
    let trajectories = (0..n).map(|_| rollout(mdp, pi, Start::Initial, rng)).collect::<Result<_>>()?;
    Ok(ExperimentBatch::new(trajectories))
}

/// Per-state in-context updated policies from one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationPhase {
    pub updated: BTreeMap<usize, Vec<f64>>,
    /// Reflection samples that failed and were left out.
    pub dropped: usize,
}

/// Reflects on every step of every trajectory, pools the resulting log-ratio advantages per
/// state and returns the policy they induce at each visited state.
pub fn evaluate_phase<R: Rng>(
    mdp: &TabularMdp,
    pi_k: &TabularPolicy,
    batch: &ExperimentBatch,
    reflector: &dyn Reflector,
    config: &RicolConfig,
    rng: &mut R,
) -> Result<EvaluationPhase> {
    let values = exact_value(mdp, pi_k)?;
    let ctx = ReflectionContext { mdp, policy: pi_k, values: &values };
    let mut samples: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    let mut dropped = 0;
    for traj in &batch.trajectories {
        for t in 0..traj.len() {
            match reflector.updated_distribution(&ctx, traj, t, rng) {
                Ok(p) => samples.entry(traj.steps[t].state).or_default().push(p),
                Err(e) => {
                    dropped += 1;
                    debug!("dropped reflection at step {t}: {e}");
                }
            }
        }
    }
    if dropped > 0 {
        warn!("{dropped} reflection samples failed and were dropped");
    }
    let mut updated = BTreeMap::new();
    for (s, rows) in samples {
        let est = ricl_advantage(pi_k, &rows, s, config.beta, config.centering)?;
        let induced = induced_policy(pi_k, &est, config.beta)?;
        updated.insert(s, induced.probs_row(s).to_vec());
    }
    Ok(EvaluationPhase { updated, dropped })
}

/// `pi*(.|s) ∝ exp((1 - alpha) log pi_k(.|s) + alpha log pi'(.|s))` at every state in `updated`.
pub fn build_target(
    pi_k: &TabularPolicy,
    updated: &BTreeMap<usize, Vec<f64>>,
    alpha: f64,
) -> Result<Vec<TargetDistribution>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid_arg(format!("alpha {alpha} outside [0, 1]")));
    }
    let mut out = Vec::with_capacity(updated.len());
    for (&s, p) in updated {
        pi_k.log_prob(s, 0)?;
        if p.len() != pi_k.num_actions() || p.iter().any(|x| !(*x > 0.0)) {
            return Err(invalid_arg(format!("updated distribution at state {s} is not strictly positive")));
        }
        let mut logits: Vec<f64> = pi_k
            .log_probs_row(s)
            .iter()
            .zip(p)
            .map(|(lk, q)| (1.0 - alpha) * lk + alpha * q.ln())
            .collect();
        let log_partition = log_normalize(&mut logits);
        out.push(TargetDistribution {
            state: s,
            probs: logits.into_iter().map(f64::exp).collect(),
            log_partition,
            alpha,
        });
    }
    Ok(out)
}

/// Fits the policy to `targets`. Exact mode copies each target; gradient mode descends the
/// visit-weighted cross-entropy over a one-hot feature policy.
pub fn project(
    pi_k: &TabularPolicy,
    targets: &[TargetDistribution],
    weights: &BTreeMap<usize, f64>,
    projection: Projection,
) -> Result<TabularPolicy> {
    if targets.is_empty() {
        return Ok(pi_k.clone());
    }
    match projection {
        Projection::ExactTabular => {
            let rows: Vec<(usize, Vec<f64>)> =
                targets.iter().map(|t| (t.state, t.probs.iter().map(|p| p.ln()).collect())).collect();
            pi_k.with_rows(rows.iter().map(|(s, r)| (*s, r.as_slice())))
        }
        Projection::Gradient { learning_rate, steps } => {
            let mut model = FeatureSoftmaxPolicy::one_hot_from(pi_k);
            let weighted: Vec<(usize, f64, &[f64])> = targets
                .iter()
                .map(|t| (t.state, weights.get(&t.state).copied().unwrap_or(1.0), t.probs.as_slice()))
                .collect();
            let mut last = f64::INFINITY;
            let mut streak = 0;
            for step in 0..steps {
                let (loss, grad) = model.cross_entropy(&weighted);
                if !loss.is_finite() {
                    return Err(Error::TrainingFailure(format!("non-finite loss at step {step}")));
                }
                streak = if loss > last { streak + 1 } else { 0 };
                if streak >= DIVERGENCE_STREAK {
                    return Err(Error::TrainingFailure(format!(
                        "projection loss rose {DIVERGENCE_STREAK} steps in a row (step {step}, loss {loss})"
                    )));
                }
                last = loss;
                model.step(&grad, learning_rate);
            }
            model.to_tabular()
        }
    }
}

/// Mean over `states` of `KL(new(.|s) || old(.|s))`.
pub fn mean_step_kl(new: &TabularPolicy, old: &TabularPolicy, states: impl Iterator<Item = usize>) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0);
    for s in states {
        total += per_state_kl(new.probs_row(s), old.probs_row(s))?;
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub env_steps: usize,
    pub mean_kl_step: f64,
    pub dropped: usize,
}

/// One round of collect, reflect, target and project.
pub fn ricol_iteration<R: Rng>(
    pi_k: &TabularPolicy,
    mdp: &TabularMdp,
    reflector: &dyn Reflector,
    config: &RicolConfig,
    rng: &mut R,
) -> Result<(TabularPolicy, IterationStats)> {
    config.validate()?;
    let batch = collect(mdp, pi_k, config.trajectories, rng)?;
    ricol_update(pi_k, mdp, &batch, reflector, config, rng)
}

/// The update half of [`ricol_iteration`] on a given batch.
pub fn ricol_update<R: Rng>(
    pi_k: &TabularPolicy,
    mdp: &TabularMdp,
    batch: &ExperimentBatch,
    reflector: &dyn Reflector,
    config: &RicolConfig,
    rng: &mut R,
) -> Result<(TabularPolicy, IterationStats)> {
    let phase = evaluate_phase(mdp, pi_k, batch, reflector, config, rng)?;
    let targets = build_target(pi_k, &phase.updated, config.alpha)?;
    let next = project(pi_k, &targets, &batch.weights(config.weighting, mdp.gamma()), config.projection)?;
    let stats = IterationStats {
        env_steps: batch.env_steps(),
        mean_kl_step: mean_step_kl(&next, pi_k, batch.visited_states())?,
        dropped: phase.dropped,
    };
    Ok((next, stats))
}

/// Return-weighted regression: every visited `(s, a)` counts `exp(G / beta)`, with `G` the
/// undiscounted return of its trajectory. The weighted action frequencies, smoothed with
/// `prior_count` pseudo-counts of `pi_k`, enter the same trust-region target as the main loop.
pub fn rwr_update(
    pi_k: &TabularPolicy,
    mdp: &TabularMdp,
    batch: &ExperimentBatch,
    config: &RicolConfig,
) -> Result<TabularPolicy> {
    if batch.trajectories.is_empty() {
        return Err(invalid_arg("rwr_update needs a non-empty batch"));
    }
    let na = pi_k.num_actions();
    let mut counts: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for traj in &batch.trajectories {
        let w = (traj.total_reward() / config.beta).exp();
        for st in &traj.steps {
            counts.entry(st.state).or_insert_with(|| vec![0.0; na])[st.action] += w;
        }
    }
    let k = config.rwr_prior_count;
    let updated: BTreeMap<usize, Vec<f64>> = counts
        .into_iter()
        .map(|(s, c)| {
            let total: f64 = c.iter().sum::<f64>() + k;
            let p = c.iter().zip(pi_k.probs_row(s)).map(|(x, q)| (x + k * q) / total).collect();
            (s, p)
        })
        .collect();
    let targets = build_target(pi_k, &updated, config.alpha)?;
    project(pi_k, &targets, &batch.weights(config.weighting, mdp.gamma()), config.projection)
}

/// [`rwr_update`] used as the second stage of training, active from `stage2.threshold` on.
pub fn stage2_update(
    pi: &TabularPolicy,
    mdp: &TabularMdp,
    batch: &ExperimentBatch,
    config: &RicolConfig,
    iteration: usize,
) -> Result<Option<TabularPolicy>> {
    if !config.stage2.enabled || iteration < config.stage2.threshold {
        return Ok(None);
    }
    rwr_update(pi, mdp, batch, config).map(Some)
}

/// Success rate and mean discounted return over `episodes` rollouts from the initial distribution.
pub fn evaluate<P: Policy + ?Sized, R: Rng + ?Sized>(
    pi: &P,
    mdp: &TabularMdp,
    episodes: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(invalid_arg("evaluate needs at least one episode"));
    }
    let (mut wins, mut ret) = (0usize, 0.0);
    for _ in 0..episodes {
        let traj = rollout(mdp, pi, Start::Initial, rng)?;
        wins += usize::from(traj.succeeded());
        ret += traj.discounted_return(mdp.gamma());
    }
    Ok((wins as f64 / episodes as f64, ret / episodes as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ricol,
    Rwr,
    #[serde(rename = "ricol+stage2")]
    RicolStage2,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ricol => "ricol",
            Method::Rwr => "rwr",
            Method::RicolStage2 => "ricol+stage2",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ricol" => Ok(Method::Ricol),
            "rwr" => Ok(Method::Rwr),
            "ricol+stage2" => Ok(Method::RicolStage2),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainRow {
    pub iteration: usize,
    pub env_steps: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_kl_step: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Row 0 evaluates the initial policy; row `k` the policy after `k` updates.
    pub rows: Vec<TrainRow>,
    pub policy: TabularPolicy,
    pub dropped: usize,
}

impl TrainReport {
    pub fn final_success(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.success_rate)
    }
}

/// Runs `config.iterations` updates of `method` from `init`, evaluating after each one.
/// Evaluation episodes are drawn from `eval_rng` so they never perturb the training stream.
pub fn train<R: Rng>(
    mdp: &TabularMdp,
    init: &TabularPolicy,
    method: Method,
    reflector: &dyn Reflector,
    config: &RicolConfig,
    rng: &mut R,
    eval_rng: &mut R,
) -> Result<TrainReport> {
    config.validate()?;
    let mut pi = init.clone();
    let (success, ret) = evaluate(&pi, mdp, config.eval_episodes, eval_rng)?;
    let mut rows = vec![TrainRow { iteration: 0, env_steps: 0, success_rate: success, mean_return: ret, mean_kl_step: 0.0 }];
    let (mut env_steps, mut dropped) = (0, 0);
    for k in 0..config.iterations {
        let batch = collect(mdp, &pi, config.trajectories, rng)?;
        env_steps += batch.env_steps();
        let stage2 = match method {
            Method::Ricol => None,
            Method::Rwr => Some(rwr_update(&pi, mdp, &batch, config)?),
            Method::RicolStage2 => {
                let cfg = RicolConfig { stage2: Stage2 { enabled: true, ..config.stage2 }, ..*config };
                stage2_update(&pi, mdp, &batch, &cfg, k)?
            }
        };
        let next = match stage2 {
            Some(p) => p,
            None => {
                let (p, stats) = ricol_update(&pi, mdp, &batch, reflector, config, rng)?;
                dropped += stats.dropped;
                p
            }
        };
        let kl = mean_step_kl(&next, &pi, batch.visited_states())?;
        pi = next;
        let (success, ret) = evaluate(&pi, mdp, config.eval_episodes, eval_rng)?;
        rows.push(TrainRow { iteration: k + 1, env_steps, success_rate: success, mean_return: ret, mean_kl_step: kl });
    }
    Ok(TrainReport { rows, policy: pi, dropped })
}
