//! Hindsight reflection: per-step maintain/change feedback and the in-context update it induces.
//!
//! The oracle reflector judges the taken action against exact advantages of the sampling
//! policy and corrupts its verdict with a configurable error rate. The remote reflector asks a
//! chat-completion endpoint for the same verdict.

mod remote;

pub use remote::{parse_reply, render_hindsight, RemoteReflector, RemoteReflectorConfig};

use crate::error::{invalid_arg, Result};
use crate::mdp::{TabularMdp, Trajectory, ValueTable};
use crate::policy::{log_normalize, TabularPolicy};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

/// Advantage gap below which two actions count as tied.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Directive {
    Maintain,
    Change,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Feedback {
    pub state: usize,
    /// The action the trajectory took at `state`.
    pub referenced_action: usize,
    pub directive: Directive,
    /// The oracle's verdict before label noise.
    pub true_label_correct: bool,
}

impl Feedback {
    /// Sentence form of the feedback, as a policy prompt would receive it.
    pub fn render(&self, action_label: &str) -> String {
        let verb = match self.directive {
            Directive::Maintain => "maintain",
            Directive::Change => "change",
        };
        format!("In the previous attempt, I chose action {action_label}. This time, I will {verb} the selected action.")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JudgmentRule {
    /// The taken action is correct iff it maximizes the advantage.
    #[default]
    ArgmaxAdvantage,
    /// The taken action is correct iff its advantage is non-negative.
    NonnegativeAdvantage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleReflectorConfig {
    /// Probability that the emitted label matches the noiseless verdict.
    pub accuracy: f64,
    /// Log-odds shift applied to the referenced action.
    pub eta: f64,
    pub judgment_rule: JudgmentRule,
}

impl Default for OracleReflectorConfig {
    fn default() -> Self {
        Self { accuracy: 1.0, eta: 2.0, judgment_rule: JudgmentRule::ArgmaxAdvantage }
    }
}

impl OracleReflectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.accuracy) {
            return Err(invalid_arg(format!("accuracy {} outside [0.5, 1]", self.accuracy)));
        }
        check_eta(self.eta)
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(invalid_arg(format!("eta must be positive, got {eta}")));
    }
    Ok(())
}

/// Noiseless verdict on action `a` given one advantage row.
pub fn judge(rule: JudgmentRule, advantages: &[f64], a: usize) -> bool {
    match rule {
        JudgmentRule::ArgmaxAdvantage => {
            let best = advantages.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            advantages[a] >= best - TIE_TOL
        }
        JudgmentRule::NonnegativeAdvantage => advantages[a] >= -TIE_TOL,
    }
}

/// Judges step `t` of `traj` against the exact advantages in `gt` and flips the verdict with
/// probability `1 - accuracy`. Always consumes exactly one draw from `rng`.
pub fn reflect_oracle<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    gt: &ValueTable,
    traj: &Trajectory,
    t: usize,
    config: &OracleReflectorConfig,
    rng: &mut R,
) -> Result<Feedback> {
    config.validate()?;
    let step = traj
        .steps
        .get(t)
        .ok_or_else(|| invalid_arg(format!("step {t} outside trajectory of length {}", traj.len())))?;
    mdp.check_state(step.state)?;
    let correct = judge(config.judgment_rule, gt.a_row(step.state), step.action);
    let flip = rng.gen::<f64>() < 1.0 - config.accuracy;
    let label = correct != flip;
    Ok(Feedback {
        state: step.state,
        referenced_action: step.action,
        directive: if label { Directive::Maintain } else { Directive::Change },
        true_label_correct: correct,
    })
}

/// Shifts the log-odds of `action` by `delta` and renormalizes.
pub fn shift_distribution(probs: &[f64], action: usize, delta: f64) -> Vec<f64> {
    let mut logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    logits[action] += delta;
    log_normalize(&mut logits);
    logits.into_iter().map(f64::exp).collect()
}

/// In-context update of `pi0` at the feedback's state: the referenced action's log-odds move
/// by `+eta` on maintain and `-eta` on change.
pub fn apply_feedback(pi0: &TabularPolicy, fb: &Feedback, eta: f64) -> Result<Vec<f64>> {
    check_eta(eta)?;
    pi0.log_prob(fb.state, fb.referenced_action)?;
    Ok(apply_feedback_to(pi0.probs_row(fb.state), fb, eta))
}

/// [`apply_feedback`] on an explicit distribution for the feedback's state.
pub fn apply_feedback_to(probs: &[f64], fb: &Feedback, eta: f64) -> Vec<f64> {
    let delta = match fb.directive {
        Directive::Maintain => eta,
        Directive::Change => -eta,
    };
    shift_distribution(probs, fb.referenced_action, delta)
}

/// What a reflector sees when asked about a step: the environment, the sampling policy and
/// its exact values.
pub struct ReflectionContext<'a> {
    pub mdp: &'a TabularMdp,
    pub policy: &'a TabularPolicy,
    pub values: &'a ValueTable,
}

/// Produces the in-context updated distribution `pi'(.|s_t)` for one hindsight slice.
pub trait Reflector: Sync {
    fn updated_distribution(
        &self,
        ctx: &ReflectionContext<'_>,
        traj: &Trajectory,
        t: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>>;
}

/// Oracle verdicts turned into a log-odds shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReflector {
    pub config: OracleReflectorConfig,
}

impl Reflector for OracleReflector {
    fn updated_distribution(
        &self,
        ctx: &ReflectionContext<'_>,
        traj: &Trajectory,
        t: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        let fb = reflect_oracle(ctx.mdp, ctx.values, traj, t, &self.config, rng)?;
        apply_feedback(ctx.policy, &fb, self.config.eta)
    }
}

/// Returns the sampling policy unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityReflector;

impl Reflector for IdentityReflector {
    fn updated_distribution(
        &self,
        ctx: &ReflectionContext<'_>,
        traj: &Trajectory,
        t: usize,
        _rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        let step = traj.steps.get(t).ok_or_else(|| invalid_arg("step outside trajectory"))?;
        Ok(ctx.policy.probs_row(step.state).to_vec())
    }
}
