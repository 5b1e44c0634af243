use super::config::{EnvKind, ExperimentConfig, PriorKind, PriorSpec, ReflectorMode, SolvePolicy};
use super::{num, SeedPlan, Table};
use crate::credit::{
    critical_score, delta_estimate, estimation_error, frequency_critical_score, ground_truth_policy, induced_policy,
    mc_advantage, normalize_max, oracle_label, ricl_advantage, spearman, AdvantageEstimate, Centering,
};
use crate::error::{Error, Result};
use crate::mdp::{exact_value, optimal_policy, rollout, KeyDoorAction, KeyDoorState, Start, TabularMdp, ValueTable};
use crate::policy::{argmax, Policy, TabularPolicy};
use crate::reflector::{
    apply_feedback, Directive, Feedback, OracleReflector, OracleReflectorConfig, ReflectionContext, Reflector,
    RemoteReflector,
};
use crate::train::{train, Method, RicolConfig, TrainRow};
use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;

/// Key-Door policy with a preferred action per state group; remaining mass is spread evenly.
pub fn key_door_prior(length: usize, spec: &PriorSpec) -> Result<TabularPolicy> {
    let num_states = 2 * length + 1;
    let spread = |best: usize, p: f64| -> Vec<f64> {
        let rest = (1.0 - p) / 3.0;
        (0..4).map(|a| if a == best { p } else { rest }).collect()
    };
    let rows: Vec<Vec<f64>> = (0..num_states)
        .map(|s| match KeyDoorState::from_index(s, length) {
            None => vec![0.25; 4],
            Some(KeyDoorState { position: 0, has_key: false }) => spread(KeyDoorAction::PickUp as usize, spec.pickup),
            Some(KeyDoorState { has_key: false, .. }) => {
                vec![spec.toward_key, 1.0 - spec.toward_key - 2.0 * spec.slack, spec.slack, spec.slack]
            }
            Some(KeyDoorState { position, has_key: true }) if position + 1 == length => {
                spread(KeyDoorAction::Unlock as usize, spec.unlock)
            }
            Some(_) => spread(KeyDoorAction::Right as usize, spec.toward_door),
        })
        .collect();
    TabularPolicy::from_distributions(&rows)
}

fn starting_policy(cfg: &ExperimentConfig, mdp: &TabularMdp, kind: PriorKind) -> Result<TabularPolicy> {
    match (kind, cfg.environment.kind) {
        (PriorKind::Uniform, _) => Ok(TabularPolicy::uniform(mdp.num_states(), mdp.num_actions())),
        (PriorKind::Imperfect, EnvKind::KeyDoor) => key_door_prior(cfg.environment.length, &cfg.estimator.prior),
        (PriorKind::Imperfect, EnvKind::GridGoto) => {
            Err(Error::Config("the imperfect prior is only defined for key-door".into()))
        }
    }
}

fn build_reflector(cfg: &ExperimentConfig, oracle: OracleReflectorConfig) -> Result<Box<dyn Reflector>> {
    Ok(match cfg.reflector.mode {
        ReflectorMode::Oracle => Box::new(OracleReflector { config: oracle }),
        ReflectorMode::Remote => Box::new(RemoteReflector::new(cfg.reflector.remote.clone())?),
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Log-ratio advantage at `s` from `n` reflections per action, each on a fresh rollout that
/// starts with that action. Returns the estimate and the number of failed reflections.
#[allow(clippy::too_many_arguments)]
fn ricl_at_state<R: Rng>(
    mdp: &TabularMdp,
    pi0: &TabularPolicy,
    values: &ValueTable,
    reflector: &dyn Reflector,
    s: usize,
    n: usize,
    beta: f64,
    centering: Centering,
    rng: &mut R,
) -> Result<(Option<AdvantageEstimate>, usize)> {
    let ctx = ReflectionContext { mdp, policy: pi0, values };
    let mut samples = Vec::with_capacity(n * mdp.num_actions());
    let mut dropped = 0;
    for a in 0..mdp.num_actions() {
        for _ in 0..n {
            let traj = rollout(mdp, pi0, Start::StateAction(s, a), rng)?;
            match reflector.updated_distribution(&ctx, &traj, 0, rng) {
                Ok(p) => samples.push(p),
                Err(e) => {
                    dropped += 1;
                    warn!("reflection at state {s} failed: {e}");
                }
            }
        }
    }
    if samples.is_empty() {
        return Ok((None, dropped));
    }
    Ok((Some(ricl_advantage(pi0, &samples, s, beta, centering)?), dropped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig2Trial {
    pub method: &'static str,
    pub n: usize,
    pub seed: u64,
    pub error: f64,
    pub estimate: AdvantageEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig2Output {
    /// Sorted by method, n, seed.
    pub trials: Vec<Fig2Trial>,
    pub dropped: usize,
}

impl Fig2Output {
    pub fn errors(&self, method: &str, n: usize) -> Vec<f64> {
        self.trials.iter().filter(|t| t.method == method && t.n == n).map(|t| t.error).collect()
    }

    /// Mean and sample standard deviation across seeds.
    pub fn summary(&self, method: &str, n: usize) -> Option<(f64, f64)> {
        let e = self.errors(method, n);
        (!e.is_empty()).then(|| mean_std(&e))
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new("fig2/1", vec!["kind", "method", "n", "seed", "error", "std"]);
        for tr in &self.trials {
            t.push(vec!["trial".into(), tr.method.into(), tr.n.to_string(), tr.seed.to_string(), num(tr.error), String::new()]);
        }
        let mut keys: Vec<(&str, usize)> = self.trials.iter().map(|t| (t.method, t.n)).collect();
        keys.dedup();
        for (method, n) in keys {
            let (mean, std) = self.summary(method, n).unwrap_or_default();
            t.push(vec!["summary".into(), method.into(), n.to_string(), String::new(), num(mean), num(std)]);
        }
        t
    }

    /// Per-trial advantage estimates, one row per (state, action).
    pub fn estimates_table(&self) -> Table {
        let mut t = Table::new("estimates/1", vec!["state", "action", "a_hat", "n", "method", "seed"]);
        for tr in &self.trials {
            for (s, row) in tr.estimate.rows() {
                for (a, x) in row.iter().enumerate() {
                    t.push(vec![s.to_string(), a.to_string(), num(*x), tr.n.to_string(), tr.method.into(), tr.seed.to_string()]);
                }
            }
        }
        t
    }

    pub fn check(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let (Some((ricl, _)), Some((mc, _))) = (self.summary("ricl", 10), self.summary("mc", 100)) {
            if !(ricl < mc) {
                v.push(format!("mean RICL error at n=10 ({ricl:e}) is not below mean MC error at n=100 ({mc:e})"));
            }
        }
        for n in [10, 100] {
            if let (Some((_, sr)), Some((_, sm))) = (self.summary("ricl", n), self.summary("mc", n)) {
                if !(sr < sm) {
                    v.push(format!("RICL std ({sr:e}) is not below MC std ({sm:e}) at n={n}"));
                }
            }
        }
        v
    }
}

/// Estimation error of Monte Carlo and log-ratio advantages against the exact advantage, per
/// trajectory count and seed, over the initial-state distribution.
pub fn run_fig2(cfg: &ExperimentConfig) -> Result<Fig2Output> {
    let mdp = cfg.environment.build()?;
    let est = &cfg.estimator;
    let pi0 = starting_policy(cfg, &mdp, est.prior.kind)?;
    let gt = exact_value(&mdp, &pi0)?;
    let pi_gt = ground_truth_policy(&pi0, &gt, est.beta)?;
    let reflector = build_reflector(cfg, est.oracle())?;
    let plan = SeedPlan::new(cfg.root_seed);
    let starts = mdp.start_states();

    let mut jobs = Vec::new();
    for method in ["mc", "ricl"] {
        for &n in &est.n_grid {
            for seed in cfg.trials() {
                jobs.push((method, n, seed, format!("fig2/n={n}/{method}")));
            }
        }
    }
    plan.check_unique(jobs.iter().map(|(_, _, s, l)| (l.as_str(), *s)))?;
    let results: Vec<(Fig2Trial, usize)> = jobs
        .par_iter()
        .map(|(method, n, seed, label)| -> Result<(Fig2Trial, usize)> {
            let mut rng = plan.rng(label, *seed);
            let mut estimate = AdvantageEstimate::new(mdp.num_actions(), est.centering);
            let mut dropped = 0;
            for &s in &starts {
                let part = if *method == "mc" {
                    Some(mc_advantage(&mdp, &pi0, s, *n, &mut rng)?)
                } else {
                    let (e, d) = ricl_at_state(&mdp, &pi0, &gt, reflector.as_ref(), s, *n, est.beta, est.centering, &mut rng)?;
                    dropped += d;
                    e
                };
                if let Some(p) = part {
                    estimate.extend(p);
                }
            }
            let induced = induced_policy(&pi0, &estimate, est.beta)?;
            let error = estimation_error(&induced, &pi_gt, mdp.rho0())?;
            Ok((Fig2Trial { method, n: *n, seed: *seed, error, estimate }, dropped))
        })
        .collect::<Result<_>>()?;
    let dropped = results.iter().map(|r| r.1).sum();
    let mut trials: Vec<Fig2Trial> = results.into_iter().map(|r| r.0).collect();
    trials.sort_by(|a, b| (a.method, a.n, a.seed).cmp(&(b.method, b.n, b.seed)));
    Ok(Fig2Output { trials, dropped })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig6Row {
    pub index: usize,
    pub state: usize,
    pub label: String,
    pub score_gt: f64,
    pub score_ricl: f64,
    pub score_frequency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig6Output {
    pub seed: u64,
    /// Canonical path order: walk to the key, pick it up, walk to the door, unlock.
    pub rows: Vec<Fig6Row>,
    /// Path index of the pick-up state.
    pub pickup_index: usize,
}

impl Fig6Output {
    fn column(&self, f: impl Fn(&Fig6Row) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn scores_gt(&self) -> Vec<f64> {
        self.column(|r| r.score_gt)
    }

    pub fn scores_ricl(&self) -> Vec<f64> {
        self.column(|r| r.score_ricl)
    }

    pub fn scores_frequency(&self) -> Vec<f64> {
        self.column(|r| r.score_frequency)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(
            "fig6/1",
            vec!["seed", "index", "state", "label", "score_gt", "score_ricl", "score_frequency"],
        );
        for r in &self.rows {
            t.push(vec![
                self.seed.to_string(),
                r.index.to_string(),
                r.state.to_string(),
                r.label.clone(),
                num(r.score_gt),
                num(r.score_ricl),
                num(r.score_frequency),
            ]);
        }
        t
    }

    pub fn check(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, scores) in [("ground-truth", self.scores_gt()), ("RICL", self.scores_ricl())] {
            if argmax(&scores) != self.pickup_index {
                v.push(format!("{name} score peaks at path index {}, not at the pick-up state", argmax(&scores)));
            }
        }
        match spearman(&self.scores_gt(), &self.scores_ricl()) {
            Ok(rho) if rho > 0.8 => {}
            Ok(rho) => v.push(format!("Spearman correlation {rho:.3} is not above 0.8")),
            Err(e) => v.push(format!("Spearman correlation undefined: {e}")),
        }
        let freq = self.scores_frequency();
        if let Some(i) = (0..self.pickup_index).find(|i| freq[*i] >= 0.05) {
            v.push(format!("frequency score {} at pre-pick-up index {i}", freq[i]));
        }
        v
    }
}

/// Critical-state scores along the canonical successful Key-Door path.
pub fn run_fig6(cfg: &ExperimentConfig) -> Result<Vec<Fig6Output>> {
    let mdp = cfg.environment.build()?;
    let est = &cfg.estimator;
    let length = cfg.environment.length;
    let pi0 = starting_policy(cfg, &mdp, est.prior.kind)?;
    let gt = exact_value(&mdp, &pi0)?;
    let pi_gt = ground_truth_policy(&pi0, &gt, est.beta)?;
    let reflector = build_reflector(cfg, est.oracle())?;
    let plan = SeedPlan::new(cfg.root_seed);
    let path = KeyDoorState::canonical_path(length);
    let trials = cfg.trials();
    plan.check_unique(trials.iter().flat_map(|s| [("fig6/ricl", *s), ("fig6/labeler", *s)]))?;
    let score_gt = critical_score(&pi_gt, &pi0, &path)?;

    trials
        .par_iter()
        .map(|&seed| -> Result<Fig6Output> {
            let mut rng = plan.rng("fig6/ricl", seed);
            let mut estimate = AdvantageEstimate::new(mdp.num_actions(), est.centering);
            for &s in &path {
                let (e, _) = ricl_at_state(&mdp, &pi0, &gt, reflector.as_ref(), s, est.ricl_samples, est.beta, est.centering, &mut rng)?;
                if let Some(e) = e {
                    estimate.extend(e);
                }
            }
            let pi_ricl = induced_policy(&pi0, &estimate, est.beta)?;
            let score_ricl = critical_score(&pi_ricl, &pi0, &path)?;

            let mut rng = plan.rng("fig6/labeler", seed);
            let mut labels = Vec::with_capacity(est.labeler_trajectories);
            let max_attempts = 1000 * est.labeler_trajectories;
            let mut attempts = 0;
            while labels.len() < est.labeler_trajectories && attempts < max_attempts {
                attempts += 1;
                let traj = rollout(&mdp, &pi0, Start::State(path[0]), &mut rng)?;
                if est.labeler_successes_only && !traj.succeeded() {
                    continue;
                }
                labels.extend(oracle_label(&gt, &traj));
            }
            if labels.len() < est.labeler_trajectories {
                warn!("labeler found {} of {} episodes", labels.len(), est.labeler_trajectories);
            }
            let freq = normalize_max(frequency_critical_score(&labels, &path)?);
            let rows = path
                .iter()
                .enumerate()
                .map(|(i, &s)| Fig6Row {
                    index: i,
                    state: s,
                    label: mdp.state_label(s).to_string(),
                    score_gt: score_gt[i],
                    score_ricl: score_ricl[i],
                    score_frequency: freq[i],
                })
                .collect();
            Ok(Fig6Output { seed, rows, pickup_index: length - 1 })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub method: Method,
    pub accuracy: f64,
    pub seed: u64,
    /// Row 0 is the untrained policy.
    pub rows: Vec<TrainRow>,
}

impl TrainTrace {
    pub fn initial_success(&self) -> f64 {
        self.rows[0].success_rate
    }

    pub fn final_success(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.success_rate)
    }
}

fn train_traces(cfg: &ExperimentConfig, runs: &[(Method, f64)], tag: &str) -> Result<Vec<TrainTrace>> {
    let mdp = cfg.environment.build()?;
    let init = starting_policy(cfg, &mdp, cfg.training.init)?;
    let plan = SeedPlan::new(cfg.root_seed);
    let ricol: RicolConfig = cfg.training.ricol;
    let mut jobs = Vec::new();
    for &(method, accuracy) in runs {
        for seed in cfg.trials() {
            let label = format!("{tag}/{}/acc={accuracy}", method.name());
            jobs.push((method, accuracy, seed, format!("{label}/train"), format!("{label}/eval")));
        }
    }
    plan.check_unique(jobs.iter().flat_map(|j| [(j.3.as_str(), j.2), (j.4.as_str(), j.2)]))?;
    jobs.par_iter()
        .map(|(method, accuracy, seed, train_label, eval_label)| -> Result<TrainTrace> {
            let oracle = OracleReflectorConfig { accuracy: *accuracy, ..cfg.estimator.oracle() };
            let reflector = build_reflector(cfg, oracle)?;
            let mut rng = plan.rng(train_label, *seed);
            let mut eval_rng = plan.rng(eval_label, *seed);
            let report = train(&mdp, &init, *method, reflector.as_ref(), &ricol, &mut rng, &mut eval_rng)?;
            if report.dropped > 0 {
                info!("{} reflections dropped in {train_label} seed {seed}", report.dropped);
            }
            Ok(TrainTrace { method: *method, accuracy: *accuracy, seed: *seed, rows: report.rows })
        })
        .collect()
}

fn trace_table(schema: &'static str, traces: &[TrainTrace]) -> Table {
    let mut t = Table::new(
        schema,
        vec!["method", "accuracy", "seed", "iteration", "env_steps", "success_rate", "mean_return", "mean_kl_step"],
    );
    for tr in traces {
        for r in &tr.rows {
            t.push(vec![
                tr.method.name().into(),
                num(tr.accuracy),
                tr.seed.to_string(),
                r.iteration.to_string(),
                r.env_steps.to_string(),
                num(r.success_rate),
                num(r.mean_return),
                num(r.mean_kl_step),
            ]);
        }
    }
    t
}

fn mean_of(traces: &[TrainTrace], pick: impl Fn(&TrainTrace) -> bool, f: impl Fn(&TrainTrace) -> f64) -> Option<f64> {
    let xs: Vec<f64> = traces.iter().filter(|t| pick(t)).map(f).collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig7Output {
    pub traces: Vec<TrainTrace>,
}

impl Fig7Output {
    /// Mean final success across seeds at `accuracy`.
    pub fn final_success(&self, accuracy: f64) -> Option<f64> {
        mean_of(&self.traces, |t| t.accuracy == accuracy, TrainTrace::final_success)
    }

    /// Mean success of the untrained policy across all runs.
    pub fn untrained_success(&self) -> f64 {
        mean_of(&self.traces, |_| true, TrainTrace::initial_success).unwrap_or(0.0)
    }

    pub fn table(&self) -> Table {
        trace_table("fig7/1", &self.traces)
    }

    pub fn check(&self) -> Vec<String> {
        let mut v = Vec::new();
        let finals: Vec<f64> = [1.0, 0.9, 0.7].iter().filter_map(|a| self.final_success(*a)).collect();
        if finals.len() > 1 {
            let spread = finals.iter().copied().fold(f64::MIN, f64::max) - finals.iter().copied().fold(f64::MAX, f64::min);
            if !(spread < 0.15) {
                v.push(format!("final success at accuracies 1.0/0.9/0.7 spreads by {spread:.3}"));
            }
        }
        let mut accuracies: Vec<f64> = self.traces.iter().map(|t| t.accuracy).collect();
        accuracies.sort_by(f64::total_cmp);
        accuracies.dedup();
        if accuracies.len() > 2 {
            let means: Vec<f64> = accuracies.iter().filter_map(|a| self.final_success(*a)).collect();
            match spearman(&accuracies, &means) {
                Ok(rho) if rho > 0.8 => {}
                Ok(rho) => v.push(format!("rank correlation of final success with accuracy is {rho:.3}")),
                Err(e) => v.push(format!("rank correlation with accuracy undefined: {e}")),
            }
        }
        if let Some(random) = self.final_success(0.5) {
            let base = self.untrained_success();
            if !((random - base).abs() <= 0.05) {
                v.push(format!("accuracy 0.5 ends at {random:.3}, untrained policy at {base:.3}"));
            }
        }
        v
    }
}

/// Training under oracle feedback of decreasing accuracy.
pub fn run_fig7(cfg: &ExperimentConfig) -> Result<Fig7Output> {
    let runs: Vec<(Method, f64)> = cfg.training.accuracy_grid.iter().map(|a| (Method::Ricol, *a)).collect();
    Ok(Fig7Output { traces: train_traces(cfg, &runs, "fig7")? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub traces: Vec<TrainTrace>,
}

impl TrainOutput {
    pub fn final_success(&self, method: Method) -> Option<f64> {
        mean_of(&self.traces, |t| t.method == method, TrainTrace::final_success)
    }

    pub fn initial_success(&self) -> f64 {
        mean_of(&self.traces, |_| true, TrainTrace::initial_success).unwrap_or(0.0)
    }

    pub fn table(&self) -> Table {
        trace_table("train/1", &self.traces)
    }

    /// Sparse task (base success below 5%): the main loop must beat return weighting by 0.3.
    /// Denser task: return weighting must improve on the base policy.
    pub fn check(&self) -> Vec<String> {
        let mut v = Vec::new();
        let base = self.initial_success();
        let rwr = self.final_success(Method::Rwr);
        if base < 0.05 {
            if let (Some(r), Some(w)) = (self.final_success(Method::Ricol), rwr) {
                if !(r - w >= 0.3) {
                    v.push(format!("RICOL final {r:.3} does not beat RWR final {w:.3} by 0.3"));
                }
            }
        } else if let Some(w) = rwr {
            if !(w > base) {
                v.push(format!("RWR final {w:.3} does not improve on base {base:.3}"));
            }
        }
        v
    }
}

/// Learning curves for each configured method at equal environment-step budgets.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutput> {
    let runs: Vec<(Method, f64)> = cfg.training.methods.iter().map(|m| (*m, cfg.estimator.accuracy)).collect();
    Ok(TrainOutput { traces: train_traces(cfg, &runs, "train")? })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table5Trial {
    pub budget: usize,
    pub seed: u64,
    pub mse_advantage: f64,
    pub mse_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table5Output {
    pub trials: Vec<Table5Trial>,
}

impl Table5Output {
    /// Mean `(mse_advantage, mse_delta)` across seeds.
    pub fn mean(&self, budget: usize) -> Option<(f64, f64)> {
        let sel: Vec<&Table5Trial> = self.trials.iter().filter(|t| t.budget == budget).collect();
        if sel.is_empty() {
            return None;
        }
        let n = sel.len() as f64;
        Some((sel.iter().map(|t| t.mse_advantage).sum::<f64>() / n, sel.iter().map(|t| t.mse_delta).sum::<f64>() / n))
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new("table5/1", vec!["budget", "seed", "mse_advantage", "mse_delta"]);
        for tr in &self.trials {
            t.push(vec![tr.budget.to_string(), tr.seed.to_string(), num(tr.mse_advantage), num(tr.mse_delta)]);
        }
        t
    }

    /// Median `(mse_advantage, mse_delta)` across seeds.
    pub fn median(&self, budget: usize) -> Option<(f64, f64)> {
        let med = |f: fn(&Table5Trial) -> f64| {
            let mut xs: Vec<f64> = self.trials.iter().filter(|t| t.budget == budget).map(f).collect();
            xs.sort_by(f64::total_cmp);
            let m = xs.len();
            (m > 0).then(|| if m % 2 == 1 { xs[m / 2] } else { 0.5 * (xs[m / 2 - 1] + xs[m / 2]) })
        };
        Some((med(|t| t.mse_advantage)?, med(|t| t.mse_delta)?))
    }

    pub fn budgets(&self) -> Vec<usize> {
        let mut budgets: Vec<usize> = self.trials.iter().map(|t| t.budget).collect();
        budgets.sort_unstable();
        budgets.dedup();
        budgets
    }

    pub fn check(&self) -> Vec<String> {
        let budgets = self.budgets();
        let mut v: Vec<String> = budgets
            .iter()
            .filter_map(|&b| {
                let (a, d) = self.mean(b)?;
                (!(a < d)).then(|| format!("at budget {b}: advantage MSE {a:e} is not below value-difference MSE {d:e}"))
            })
            .collect();
        for w in budgets.windows(2) {
            if let (Some(lo), Some(hi)) = (self.median(w[0]), self.median(w[1])) {
                if hi.0 > lo.0 || hi.1 > lo.1 {
                    v.push(format!("median MSE rises from budget {} to {}", w[0], w[1]));
                }
            }
        }
        v
    }
}

/// The policy after noiseless feedback at every live state: maintain the action with the
/// largest exact advantage.
pub fn feedback_policy(mdp: &TabularMdp, pi0: &TabularPolicy, gt: &ValueTable, eta: f64) -> Result<TabularPolicy> {
    let mut rows = Vec::new();
    for s in (0..mdp.num_states()).filter(|s| !mdp.is_terminal(*s)) {
        let best = argmax(gt.a_row(s));
        let fb = Feedback { state: s, referenced_action: best, directive: Directive::Maintain, true_label_correct: true };
        let p = apply_feedback(pi0, &fb, eta)?;
        rows.push((s, p.iter().map(|x| x.ln()).collect::<Vec<f64>>()));
    }
    pi0.with_rows(rows.iter().map(|(s, r)| (*s, r.as_slice())))
}

/// Squared error of the Monte Carlo advantage and of the return-difference estimate at matched
/// total trajectory budgets, from the far end of the corridor.
pub fn run_table5(cfg: &ExperimentConfig) -> Result<Table5Output> {
    let mdp = cfg.environment.build()?;
    let est = &cfg.estimator;
    let pi0 = starting_policy(cfg, &mdp, est.prior.kind)?;
    let gt = exact_value(&mdp, &pi0)?;
    let pi_prime = feedback_policy(&mdp, &pi0, &gt, est.eta)?;
    let s0 = KeyDoorState::canonical_path(cfg.environment.length)[0];
    let na = mdp.num_actions();
    let plan = SeedPlan::new(cfg.root_seed);
    let mut jobs = Vec::new();
    for &budget in &est.budget_grid {
        if budget < 2 * na {
            return Err(Error::Config(format!("budget {budget} is too small to split")));
        }
        for seed in cfg.trials() {
            jobs.push((budget, seed, format!("table5/b={budget}/adv"), format!("table5/b={budget}/delta")));
        }
    }
    plan.check_unique(jobs.iter().flat_map(|j| [(j.2.as_str(), j.1), (j.3.as_str(), j.1)]))?;
    let trials = jobs
        .par_iter()
        .map(|(budget, seed, adv_label, delta_label)| -> Result<Table5Trial> {
            let mut rng = plan.rng(adv_label, *seed);
            let a = mc_advantage(&mdp, &pi0, s0, budget / na, &mut rng)?;
            let mse_advantage = a
                .row(s0)
                .unwrap_or_default()
                .iter()
                .zip(gt.a_row(s0))
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                / na as f64;
            let mut rng = plan.rng(delta_label, *seed);
            let d = delta_estimate(&mdp, &pi0, &pi_prime, s0, budget / 2, &mut rng)?;
            Ok(Table5Trial {
                budget: *budget,
                seed: *seed,
                mse_advantage,
                mse_delta: (d.delta_hat - d.ground_truth_delta).powi(2),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table5Output { trials })
}

/// Exact value tables of a named policy.
pub fn run_solve(cfg: &ExperimentConfig) -> Result<(Table, Vec<String>)> {
    let mdp = cfg.environment.build()?;
    let (policy, name): (Box<dyn Policy + Sync>, &str) = match cfg.solve.policy {
        SolvePolicy::Uniform => (Box::new(TabularPolicy::uniform(mdp.num_states(), mdp.num_actions())), "uniform"),
        SolvePolicy::Optimal => (Box::new(optimal_policy(&mdp)?), "optimal"),
        SolvePolicy::Prior => (Box::new(starting_policy(cfg, &mdp, PriorKind::Imperfect)?), "prior"),
        SolvePolicy::Checkpoint => {
            let path = cfg.solve.checkpoint.as_ref().ok_or_else(|| Error::Config("missing checkpoint path".into()))?;
            let file = std::fs::File::open(path)
                .map_err(|e| Error::Load(format!("cannot open {}: {e}", path.display())))?;
            (Box::new(TabularPolicy::read_checkpoint(file, mdp.num_states(), mdp.num_actions())?), "checkpoint")
        }
    };
    let values = exact_value(&mdp, policy.as_ref())?;
    let mut t = Table::new("solve/1", vec!["policy", "table", "state", "state_label", "action", "action_label", "value"]);
    for s in 0..mdp.num_states() {
        t.push(vec![name.into(), "v".into(), s.to_string(), mdp.state_label(s).into(), String::new(), String::new(), num(values.v[s])]);
    }
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let i = s * mdp.num_actions() + a;
            for (table, x) in [("q", values.q[i]), ("a", values.a[i])] {
                t.push(vec![
                    name.into(),
                    table.into(),
                    s.to_string(),
                    mdp.state_label(s).into(),
                    a.to_string(),
                    mdp.action_label(a).into(),
                    num(x),
                ]);
            }
        }
    }
    let mut violations = Vec::new();
    let residual = values.bellman_residual(&mdp, policy.as_ref());
    if !(residual < 1e-8) {
        violations.push(format!("Bellman residual {residual:e}"));
    }
    for s in (0..mdp.num_states()).filter(|s| mdp.is_terminal(*s)) {
        if values.v[s] != 0.0 || values.a_row(s).iter().any(|a| *a != 0.0) {
            violations.push(format!("terminal state {s} has non-zero value"));
        }
    }
    Ok((t, violations))
}

/// Result of any experiment.
#[derive(Debug, Clone)]
pub enum Outcome {
    Fig2(Fig2Output),
    Fig6(Vec<Fig6Output>),
    Fig7(Fig7Output),
    Table5(Table5Output),
    Train(TrainOutput),
    Solve(Table, Vec<String>),
}

impl Outcome {
    pub fn table(&self) -> Table {
        match self {
            Outcome::Fig2(o) => o.table(),
            Outcome::Fig6(outs) => {
                let mut t = outs.first().map(Fig6Output::table).unwrap_or_else(|| Fig6Output {
                    seed: 0,
                    rows: vec![],
                    pickup_index: 0,
                }.table());
                for o in outs.iter().skip(1) {
                    t.rows.extend(o.table().rows);
                }
                t
            }
            Outcome::Fig7(o) => o.table(),
            Outcome::Table5(o) => o.table(),
            Outcome::Train(o) => o.table(),
            Outcome::Solve(t, _) => t.clone(),
        }
    }

    /// Acceptance properties of the experiment that do not hold on this output.
    pub fn check(&self) -> Vec<String> {
        match self {
            Outcome::Fig2(o) => o.check(),
            Outcome::Fig6(outs) => outs.iter().flat_map(|o| o.check().into_iter().map(move |m| format!("seed {}: {m}", o.seed))).collect(),
            Outcome::Fig7(o) => o.check(),
            Outcome::Table5(o) => o.check(),
            Outcome::Train(o) => o.check(),
            Outcome::Solve(_, v) => v.clone(),
        }
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    use super::config::Experiment::*;
    cfg.validate()?;
    Ok(match cfg.experiment {
        Fig2 => Outcome::Fig2(run_fig2(cfg)?),
        Fig6 => Outcome::Fig6(run_fig6(cfg)?),
        Fig7 => Outcome::Fig7(run_fig7(cfg)?),
        Table5 => Outcome::Table5(run_table5(cfg)?),
        Train => Outcome::Train(run_train(cfg)?),
        Solve => {
            let (t, v) = run_solve(cfg)?;
            Outcome::Solve(t, v)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Experiment;

    fn small(experiment: Experiment, sets: &[&str]) -> ExperimentConfig {
        let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
        let mut cfg = ExperimentConfig::load(None, &sets).unwrap();
        cfg.experiment = experiment;
        cfg
    }

    #[test]
    fn prior_rows_are_distributions() {
        let pi = key_door_prior(10, &PriorSpec::default()).unwrap();
        let pick = KeyDoorState { position: 0, has_key: false }.index(10);
        assert!((pi.probs_row(pick)[KeyDoorAction::PickUp as usize] - 0.3).abs() < 1e-12);
        assert!((pi.probs_row(3)[KeyDoorAction::Left as usize] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fig2_row_counts() {
        let cfg = small(Experiment::Fig2, &["estimator.n_grid=[1, 3]", "seeds=[0, 1, 2]", "environment.length=4"]);
        let out = run_fig2(&cfg).unwrap();
        assert_eq!(out.trials.len(), 2 * 2 * 3);
        assert_eq!(out.table().rows.len(), 2 * 2 * 3 + 4);
        assert!(out.trials.iter().all(|t| t.error >= 0.0));
    }

    #[test]
    fn solve_rows_and_checkpoint_errors() {
        let cfg = small(Experiment::Solve, &["solve.policy=optimal"]);
        let (t, v) = run_solve(&cfg).unwrap();
        assert_eq!(t.rows.len(), 21 + 2 * 21 * 4);
        assert!(v.is_empty());
        let v_far = t.rows.iter().find(|r| r[1] == "v" && r[2] == "9").unwrap();
        assert!((v_far[6].parse::<f64>().unwrap() - 0.13509).abs() < 1e-5);
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "state,action,logit\n0,0,zz\n").unwrap();
        let cfg = small(Experiment::Solve, &["solve.policy=checkpoint", &format!("solve.checkpoint=\"{}\"", bad.display())]);
        assert!(matches!(run_solve(&cfg), Err(Error::Load(_))));
    }
}
