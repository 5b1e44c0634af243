//! Acceptance criteria. Each prints one PASS or FAIL line; the binary exits non-zero if any fail.
//! Pass a substring as the first argument to run a subset.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use ricl_core::credit::{delta_estimate, mc_advantage, recover_reward};
use ricl_core::harness::{
    self, feedback_policy, key_door_prior, run_fig2, run_fig6, run_fig7, run_table5, run_train, Experiment,
    ExperimentConfig, PriorSpec,
};
use ricl_core::mdp::{build_key_door, exact_value, KeyDoorState, TabularMdp};
use ricl_core::policy::{argmax, Policy, TabularPolicy};
use ricl_core::reflector::{IdentityReflector, OracleReflector, OracleReflectorConfig};
use ricl_core::train::{
    build_target, collect, evaluate_phase, project, ricol_iteration, Method, Projection, RicolConfig, TrainRow,
};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn config(experiment: Experiment, sets: &[&str]) -> ExperimentConfig {
    let sets: Vec<String> = std::iter::once(format!("experiment=\"{}\"", experiment.id()))
        .chain(sets.iter().map(|s| s.to_string()))
        .collect();
    ExperimentConfig::load(None, &sets).expect("valid config")
}

fn key_door_setup() -> (TabularMdp, TabularPolicy, common::Values) {
    let mdp = build_key_door(10, 0.9).unwrap();
    let pi0 = key_door_prior(10, &PriorSpec::default()).unwrap();
    let gt = common::evaluate(&mdp, &common::rows(&pi0));
    (mdp, pi0, gt)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_residual, mut worst_dev): (f64, f64) = (0.0, 0.0);
    for i in 0..100 {
        let ns = 2 + i % 5;
        let na = 2 + (i / 5) % 3;
        let (mdp, pi0, pi1) = common::random_instance(&mut rng, ns, na);
        let sys = recover_reward(&mdp, &pi0, &pi1, 1.0).map_err(|e| format!("instance {i}: {e}"))?;
        // Soft advantage of pi0 under the recovered reward, by fixed-point iteration.
        let recovered = mdp.with_rewards(sys.recovered_r.clone()).unwrap();
        let soft = common::soft_evaluate(&recovered, &common::rows(&pi0), 1.0);
        for s in 0..ns {
            let diff: Vec<f64> = (0..na)
                .map(|a| soft.a[s][a] - (pi1.probs_row(s)[a].ln() - pi0.probs_row(s)[a].ln()))
                .collect();
            let spread = diff.iter().copied().fold(f64::MIN, f64::max) - diff.iter().copied().fold(f64::MAX, f64::min);
            worst_dev = worst_dev.max(spread);
        }
        worst_residual = worst_residual.max(sys.residual);
    }
    ensure(worst_residual < 1e-6, || format!("residual {worst_residual:e}"))?;
    ensure(worst_dev < 1e-8, || format!("advantage deviation {worst_dev:e}"))?;
    Ok(format!("max residual {worst_residual:.1e}, max deviation {worst_dev:.1e}"))
}

fn criterion_2() -> Outcome {
    let cfg = config(Experiment::Fig2, &["estimator.n_grid=[10, 100]"]);
    let out = run_fig2(&cfg).map_err(|e| e.to_string())?;
    let (mdp, pi0, gt) = key_door_setup();
    let p0 = common::rows(&pi0);
    let pi_gt = common::tilt(&p0, &gt.a, 1.0);
    // Recompute each reported error from its estimate.
    for t in &out.trials {
        let mut e = 0.0;
        for (s, row) in t.estimate.rows() {
            let p = common::tilt(&p0[s..s + 1], &[row.to_vec()], 1.0);
            e += mdp.rho0()[s] * common::kl(&p[0], &pi_gt[s]);
        }
        ensure((e - t.error).abs() <= 1e-9 * (1.0 + e), || format!("error mismatch {e} vs {}", t.error))?;
    }
    let errs = |m: &str, n: usize| out.errors(m, n);
    ensure(errs("ricl", 10).len() == 8 && errs("mc", 100).len() == 8, || "expected 8 seeds".into())?;
    let ricl10 = common::mean(&errs("ricl", 10));
    let mc100 = common::mean(&errs("mc", 100));
    let mut detail = format!("mean e_RICL(10) {ricl10:.3e} vs mean e_MC(100) {mc100:.3e}");
    for n in [10, 100] {
        let (sr, sm) = (common::std(&errs("ricl", n)), common::std(&errs("mc", n)));
        detail += &format!("; std at n={n}: {sr:.2e} vs {sm:.2e}");
        ensure(sr < sm, || detail.clone())?;
    }
    ensure(ricl10 < mc100, || detail.clone())?;
    Ok(detail)
}

fn criterion_3() -> Outcome {
    let cfg = config(Experiment::Fig2, &["estimator.n_grid=[10, 100, 1000]"]);
    let out = run_fig2(&cfg).map_err(|e| e.to_string())?;
    let medians: Vec<f64> = [10, 100, 1000].iter().map(|n| common::median(&out.errors("mc", *n))).collect();
    ensure(medians.windows(2).all(|w| w[1] < w[0]), || format!("medians {medians:?}"))?;

    let (mdp, pi0, gt) = key_door_setup();
    let live: Vec<usize> = (0..mdp.num_states()).filter(|s| !mdp.is_terminal(*s)).collect();
    let worst = live
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(77 + s as u64);
            let est = mc_advantage(&mdp, &pi0, s, 100_000, &mut rng).unwrap();
            est.row(s).unwrap().iter().zip(&gt.a[s]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    ensure(worst < 0.01, || format!("max |A_hat - A| = {worst:.4}"))?;
    Ok(format!("median e_MC {:.2e} > {:.2e} > {:.2e}; n=1e5 max-abs {worst:.4}", medians[0], medians[1], medians[2]))
}

fn criterion_4() -> Outcome {
    let cfg = config(Experiment::Fig6, &[]);
    let outs = run_fig6(&cfg).map_err(|e| e.to_string())?;
    let (_, pi0, gt) = key_door_setup();
    let p0 = common::rows(&pi0);
    let pi_gt = common::tilt(&p0, &gt.a, 1.0);
    let path = KeyDoorState::canonical_path(10);
    let raw: Vec<f64> = path.iter().map(|s| common::kl(&pi_gt[*s], &p0[*s])).collect();
    let max = raw.iter().copied().fold(0.0, f64::max);
    let mut details = Vec::new();
    let mut failures = Vec::new();
    for out in &outs {
        ensure(out.rows.len() == 20, || format!("{} rows", out.rows.len()))?;
        for (r, x) in out.rows.iter().zip(&raw) {
            ensure((r.score_gt - x / max).abs() < 1e-9, || format!("score_gt mismatch at {}", r.index))?;
        }
        let pick = out.pickup_index;
        let (gt_scores, ricl) = (out.scores_gt(), out.scores_ricl());
        let rho = common::rank_correlation(&gt_scores, &ricl);
        let freq_max = out.scores_frequency()[..pick].iter().copied().fold(0.0, f64::max);
        details.push(format!(
            "argmax gt {} ricl {} (pickup {pick}), spearman {rho:.3}, max pre-pickup frequency {freq_max:.3}",
            argmax(&gt_scores),
            argmax(&ricl)
        ));
        if argmax(&gt_scores) != pick || argmax(&ricl) != pick {
            failures.push("pickup is not the argmax of both scores");
        }
        if !(rho > 0.8) {
            failures.push("Spearman correlation not above 0.8");
        }
        if !(freq_max < 0.05) {
            failures.push("frequency baseline detects pre-pickup states");
        }
    }
    let detail = details.join("; ");
    ensure(failures.is_empty(), || format!("{}: {detail}", failures.join(", ")))?;
    Ok(detail)
}

fn uniform_key_door_success() -> f64 {
    let mdp = build_key_door(10, 0.9).unwrap();
    common::success_probability(&mdp, &vec![vec![0.25; 4]; mdp.num_states()])
}

fn criterion_5() -> Outcome {
    let cfg = config(Experiment::Fig7, &["training.accuracy_grid=[1.0, 0.9, 0.7, 0.5]"]);
    let out = run_fig7(&cfg).map_err(|e| e.to_string())?;
    let fin = |acc: f64| {
        let xs: Vec<f64> = out.traces.iter().filter(|t| t.accuracy == acc).map(|t| t.final_success()).collect();
        assert_eq!(xs.len(), 3);
        common::mean(&xs)
    };
    let finals: Vec<f64> = [1.0, 0.9, 0.7].iter().map(|a| fin(*a)).collect();
    let spread = finals.iter().copied().fold(f64::MIN, f64::max) - finals.iter().copied().fold(f64::MAX, f64::min);
    let base = uniform_key_door_success();
    let random = fin(0.5);
    let detail = format!(
        "final success 1.0/0.9/0.7 = {:.3}/{:.3}/{:.3} (spread {spread:.3}); 0.5 -> {random:.3} vs untrained {base:.3}",
        finals[0], finals[1], finals[2]
    );
    ensure(spread < 0.15 && (random - base).abs() <= 0.05, || detail.clone())?;
    Ok(detail)
}

fn criterion_6() -> Outcome {
    let cfg = config(Experiment::Table5, &[]);
    let out = run_table5(&cfg).map_err(|e| e.to_string())?;
    let (mdp, pi0, gt) = key_door_setup();
    let s0 = KeyDoorState::canonical_path(10)[0];
    let pi_prime = feedback_policy(&mdp, &pi0, &exact_value(&mdp, &pi0).unwrap(), 2.0).unwrap();
    let delta_gt = common::evaluate(&mdp, &common::rows(&pi_prime)).v[s0] - gt.v[s0];
    let d = delta_estimate(&mdp, &pi0, &pi_prime, s0, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    ensure((d.ground_truth_delta - delta_gt).abs() < 1e-9, || "value-difference ground truth mismatch".into())?;
    let mut detail = Vec::new();
    for budget in [1000, 10_000] {
        let sel: Vec<_> = out.trials.iter().filter(|t| t.budget == budget).collect();
        ensure(sel.len() == 8, || format!("{} seeds at budget {budget}", sel.len()))?;
        let a = common::mean(&sel.iter().map(|t| t.mse_advantage).collect::<Vec<_>>());
        let dd = common::mean(&sel.iter().map(|t| t.mse_delta).collect::<Vec<_>>());
        detail.push(format!("budget {budget}: {a:.3e} < {dd:.3e}"));
        ensure(a < dd, || detail.join("; "))?;
    }
    Ok(detail.join("; "))
}

/// Success of `rows` at the last evaluation within `budget` environment steps.
fn success_within(rows: &[TrainRow], budget: usize) -> f64 {
    rows.iter().rev().find(|r| r.env_steps <= budget).map_or(0.0, |r| r.success_rate)
}

fn criterion_7() -> Outcome {
    let sparse = config(Experiment::Train, &["training.methods=[\"ricol\", \"rwr\"]"]);
    let base = uniform_key_door_success();
    ensure(base < 0.05, || format!("base success {base:.3}"))?;
    let out = run_train(&sparse).map_err(|e| e.to_string())?;
    let mut gaps = Vec::new();
    let (mut ricol, mut rwr) = (Vec::new(), Vec::new());
    for seed in sparse.trials() {
        let r = out.traces.iter().find(|t| t.method == Method::Ricol && t.seed == seed).unwrap();
        let w = out.traces.iter().find(|t| t.method == Method::Rwr && t.seed == seed).unwrap();
        let budget = r.rows.last().unwrap().env_steps.min(w.rows.last().unwrap().env_steps);
        ricol.push(success_within(&r.rows, budget));
        rwr.push(success_within(&w.rows, budget));
        gaps.push(ricol.last().unwrap() - rwr.last().unwrap());
    }
    let gap = common::mean(&gaps);

    let dense = config(Experiment::Train, &["environment.kind=\"grid-goto\"", "training.methods=[\"rwr\"]"]);
    let mdp = dense.environment.build().unwrap();
    let dense_base = common::success_probability(&mdp, &vec![vec![1.0 / mdp.num_actions() as f64; mdp.num_actions()]; mdp.num_states()]);
    let out = run_train(&dense).map_err(|e| e.to_string())?;
    let dense_final = common::mean(&out.traces.iter().map(|t| t.final_success()).collect::<Vec<_>>());
    let detail = format!(
        "key-door base {base:.3}: RICOL {:.3} vs RWR {:.3} at equal steps (gap {gap:.3}); goto base {dense_base:.3} -> RWR {dense_final:.3}",
        common::mean(&ricol),
        common::mean(&rwr)
    );
    ensure(gap >= 0.3 && dense_final > dense_base, || detail.clone())?;
    Ok(detail)
}

fn max_prob_change(a: &TabularPolicy, b: &TabularPolicy) -> f64 {
    (0..a.num_states())
        .flat_map(|s| a.probs_row(s).iter().zip(b.probs_row(s)).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

fn criterion_8() -> Outcome {
    let (mdp, pi0, _) = key_door_setup();
    let oracle = OracleReflector { config: OracleReflectorConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let frozen = RicolConfig { alpha: 0.0, ..RicolConfig::default() };
    let (next, _) = ricol_iteration(&pi0, &mdp, &oracle, &frozen, &mut rng).map_err(|e| e.to_string())?;
    let d0 = max_prob_change(&next, &pi0);
    ensure(d0 < 1e-12, || format!("alpha = 0 moved the policy by {d0:e}"))?;
    let (next, _) = ricol_iteration(&pi0, &mdp, &IdentityReflector, &RicolConfig::default(), &mut rng).map_err(|e| e.to_string())?;
    let d1 = max_prob_change(&next, &pi0);
    ensure(d1 < 1e-12, || format!("identity reflector moved the policy by {d1:e}"))?;

    let greedy = RicolConfig { alpha: 1.0, beta: 0.05, trajectories: 16, ..RicolConfig::default() };
    let optimal = common::optimal(&mdp);
    let mut pi = TabularPolicy::uniform(mdp.num_states(), 4);
    let mut visits = vec![0usize; mdp.num_states()];
    let total = 40;
    for k in 0..total {
        let (next, _) = ricol_iteration(&pi, &mdp, &oracle, &greedy, &mut rng).map_err(|e| e.to_string())?;
        pi = next;
        if k >= total - 10 {
            let batch = collect(&mdp, &pi, 16, &mut ChaCha8Rng::seed_from_u64(k as u64)).unwrap();
            batch.visited_states().for_each(|s| visits[s] += 1);
        }
    }
    let recurrent: Vec<usize> = (0..mdp.num_states()).filter(|s| visits[*s] >= 5).collect();
    ensure(!recurrent.is_empty(), || "no recurrently visited states".into())?;
    let wrong: Vec<usize> = recurrent.iter().copied().filter(|s| argmax(pi.probs_row(*s)) != argmax(&optimal.q[*s])).collect();
    ensure(wrong.is_empty(), || format!("non-optimal argmax at states {wrong:?}"))?;
    Ok(format!("no-op changes {d0:.0e}/{d1:.0e}; {} recurrent states all optimal", recurrent.len()))
}

fn criterion_9() -> Outcome {
    let (mdp, pi0, _) = key_door_setup();
    let oracle = OracleReflector { config: OracleReflectorConfig::default() };
    let cfg = RicolConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batch = collect(&mdp, &pi0, 16, &mut rng).unwrap();
    let phase = evaluate_phase(&mdp, &pi0, &batch, &oracle, &cfg, &mut rng).map_err(|e| e.to_string())?;
    let targets = build_target(&pi0, &phase.updated, 0.5).map_err(|e| e.to_string())?;
    let weights = batch.weights(cfg.weighting, mdp.gamma());
    let worst = |pi: &TabularPolicy| targets.iter().map(|t| common::kl(&t.probs, pi.probs_row(t.state))).fold(0.0, f64::max);
    let exact = project(&pi0, &targets, &weights, Projection::ExactTabular).map_err(|e| e.to_string())?;
    let grad = project(&pi0, &targets, &weights, Projection::Gradient { learning_rate: 2.0, steps: 20_000 })
        .map_err(|e| e.to_string())?;
    let (ke, kg) = (worst(&exact), worst(&grad));
    ensure(ke.abs() < 1e-15, || format!("exact projection KL {ke:e}"))?;
    ensure(kg < 1e-6, || format!("gradient projection KL {kg:e}"))?;
    Ok(format!("{} visited states; exact {ke:.0e}, gradient {kg:.1e}", targets.len()))
}

fn criterion_10() -> Outcome {
    let cases: Vec<(Experiment, Vec<&str>)> = vec![
        (Experiment::Solve, vec!["solve.policy=\"prior\""]),
        (Experiment::Fig2, vec!["estimator.n_grid=[1, 10, 30]"]),
        (Experiment::Fig6, vec![]),
        (Experiment::Fig7, vec!["training.accuracy_grid=[1.0, 0.7]", "training.ricol.iterations=4"]),
        (Experiment::Table5, vec!["estimator.budget_grid=[1000]"]),
        (Experiment::Train, vec!["training.methods=[\"ricol\", \"rwr\", \"ricol+stage2\"]", "training.ricol.iterations=6"]),
        (Experiment::Train, vec!["environment.kind=\"grid-goto\"", "training.ricol.iterations=4"]),
    ];
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut bytes = 0;
    for (experiment, sets) in cases {
        let cfg = config(experiment, &sets);
        let a = harness::run(&cfg).and_then(|o| o.table().to_bytes()).map_err(|e| e.to_string())?;
        let b = harness::run(&cfg).and_then(|o| o.table().to_bytes()).map_err(|e| e.to_string())?;
        let c = single.install(|| harness::run(&cfg).and_then(|o| o.table().to_bytes())).map_err(|e| e.to_string())?;
        ensure(a == b && a == c, || format!("{} output differs between runs", experiment.id()))?;
        bytes += a.len();
    }
    Ok(format!("7 configurations, {bytes} bytes identical across reruns and thread counts"))
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "reward recovery certificate", limit: Some(Duration::from_secs(10)), run: criterion_1 },
    Criterion { id: 2, name: "estimator crossover and variance", limit: Some(Duration::from_secs(120)), run: criterion_2 },
    Criterion { id: 3, name: "Monte Carlo consistency", limit: Some(Duration::from_secs(300)), run: criterion_3 },
    Criterion { id: 4, name: "critical states", limit: Some(Duration::from_secs(60)), run: criterion_4 },
    Criterion { id: 5, name: "robustness to noisy feedback", limit: Some(Duration::from_secs(300)), run: criterion_5 },
    Criterion { id: 6, name: "advantage vs value-difference error", limit: Some(Duration::from_secs(180)), run: criterion_6 },
    Criterion { id: 7, name: "credit assignment vs return weighting", limit: None, run: criterion_7 },
    Criterion { id: 8, name: "iteration identities", limit: Some(Duration::from_secs(30)), run: criterion_8 },
    Criterion { id: 9, name: "projection exactness", limit: Some(Duration::from_secs(30)), run: criterion_9 },
    Criterion { id: 10, name: "determinism", limit: None, run: criterion_10 },
];

fn main() {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for c in CRITERIA {
        let label = format!("criterion {:>2}: {}", c.id, c.name);
        if filter.as_ref().is_some_and(|f| !label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let elapsed = start.elapsed();
        let result = match (result, c.limit) {
            (Ok(d), Some(limit)) if elapsed > limit => Err(format!("{d}; exceeded {}s", limit.as_secs())),
            (r, _) => r,
        };
        match result {
            Ok(d) => println!("PASS {label} ({:.1}s): {d}", elapsed.as_secs_f64()),
            Err(d) => {
                failed += 1;
                println!("FAIL {label} ({:.1}s): {d}", elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
