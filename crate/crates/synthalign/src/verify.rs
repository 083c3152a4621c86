//! Self-checks of the preference math, run by `synthalign verify-math`.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use synthalign_core::preference::*;

pub const GRADIENT_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Headline number of the check.
    pub value: f64,
    pub detail: String,
    #[serde(serialize_with = "as_millis")]
    pub elapsed: Duration,
}

fn as_millis<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

fn timed(name: &'static str, f: impl FnOnce() -> (bool, f64, String)) -> CheckResult {
    let start = Instant::now();
    let (passed, value, detail) = f();
    CheckResult {
        name,
        passed,
        value,
        detail,
        elapsed: start.elapsed(),
    }
}

fn random_log_prob(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-50.0..0.0)
}

/// `n` random pairs with policy equal to reference and β in (0, 5]; returns
/// the loss farthest from ln 2 and its error.
pub fn dpo_identity(n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (core::f64::consts::LN_2, 0.0);
    for _ in 0..n {
        let c = random_log_prob(&mut rng);
        let r = random_log_prob(&mut rng);
        let beta = 5.0 - rng.random_range(0.0..5.0);
        let pair = PairLogProbs::new(c, c, r, r).expect("log-probs are valid");
        let loss = dpo_loss(&pair, &DpoConfig::new(beta).expect("beta is positive"));
        let err = (loss - core::f64::consts::LN_2).abs();
        if err >= worst.1 {
            worst = (loss, err);
        }
    }
    worst
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Largest relative error between [`dpo_grad`] and central differences over
/// `n` random configurations.
pub fn gradient_check(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = GRADIENT_STEP;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (c, rc, r, rr) = (
            rng.random_range(-20.0..-1.0),
            rng.random_range(-20.0..-1.0),
            rng.random_range(-20.0..-1.0),
            rng.random_range(-20.0..-1.0),
        );
        let cfg = DpoConfig::new(rng.random_range(0.01..1.0)).expect("beta is positive");
        let loss = |c: f64, r: f64| dpo_loss(&PairLogProbs::new(c, rc, r, rr).expect("valid"), &cfg);
        let g = dpo_grad(&PairLogProbs::new(c, rc, r, rr).expect("valid"), &cfg);
        let fc = (loss(c + h, r) - loss(c - h, r)) / (2.0 * h);
        let fr = (loss(c, r + h) - loss(c, r - h)) / (2.0 * h);
        worst = worst.max(relative_error(g.chosen, fc)).max(relative_error(g.rejected, fr));
    }
    worst
}

/// Noise-free preferences consistent with a random total order. Returns the
/// pairs and the generating scores (higher is better).
pub fn transitive_preferences(n_items: usize, n_pairs: usize, seed: u64) -> (Vec<(usize, usize)>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n_items).collect();
    order.shuffle(&mut rng);
    let mut truth = vec![0.0; n_items];
    for (rank, &item) in order.iter().enumerate() {
        truth[item] = (n_items - rank) as f64;
    }
    let mut prefs = Vec::with_capacity(n_pairs);
    while prefs.len() < n_pairs {
        let a = rng.random_range(0..n_items);
        let b = rng.random_range(0..n_items);
        if a != b {
            prefs.push(if truth[a] > truth[b] { (a, b) } else { (b, a) });
        }
    }
    (prefs, truth)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BtRecovery {
    pub tau: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub fn bt_recovery(n_items: usize, n_pairs: usize, steps: usize, seed: u64) -> BtRecovery {
    let (prefs, truth) = transitive_preferences(n_items, n_pairs, seed);
    let zeros = BtRewardParams {
        item_scores: vec![0.0; n_items],
    };
    let fit = fit_bt_reward(&prefs, n_items, steps, DEFAULT_LEARNING_RATE).expect("valid preferences");
    BtRecovery {
        tau: kendall_tau(&fit.item_scores, &truth).expect("same length"),
        initial_loss: zeros.loss(&prefs).expect("valid"),
        final_loss: fit.loss(&prefs).expect("valid"),
    }
}

/// Random chosen/rejected candidates for `n_prompts` prompts of `k`
/// candidates each.
pub fn toy_dataset(n_prompts: u64, k: usize, seed: u64) -> Vec<ToyPreference> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_prompts)
        .map(|prompt_id| {
            let mut idx: Vec<usize> = (0..k).collect();
            idx.shuffle(&mut rng);
            ToyPreference {
                prompt_id,
                chosen: idx[0],
                rejected: idx[1],
                candidate_count: k,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyTraining {
    pub prompts: usize,
    pub prefers_chosen: usize,
    pub initial_margin: f64,
    pub final_margin: f64,
}

pub fn toy_training(n_prompts: u64, steps: usize, seed: u64) -> ToyTraining {
    let data = toy_dataset(n_prompts, 4, seed);
    let cfg = DpoConfig::default();
    let start = ToyPolicy::uniform(&data).expect("valid dataset");
    let policy = toy_dpo_train(&data, &cfg, steps, DEFAULT_LEARNING_RATE).expect("valid dataset");
    let prefers_chosen = data
        .iter()
        .filter(|p| {
            let probs = policy.probabilities(p.prompt_id).expect("trained prompt");
            probs[p.chosen] > probs[p.rejected]
        })
        .count();
    ToyTraining {
        prompts: data.len(),
        prefers_chosen,
        initial_margin: toy_mean_margin(&start, &data, &cfg).expect("valid"),
        final_margin: toy_mean_margin(&policy, &data, &cfg).expect("valid"),
    }
}

/// Runs the four checks with their fixed sizes and seeds.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        timed("dpo_identity", || {
            let (loss, err) = dpo_identity(1000, 1);
            (err <= IDENTITY_TOLERANCE, loss, format!("loss {loss:.6}, max |loss - ln 2| = {err:.1e}"))
        }),
        timed("gradient_check", || {
            let worst = gradient_check(100, 11);
            (worst <= GRADIENT_TOLERANCE, worst, format!("max relative error {worst:.2e}"))
        }),
        timed("bt_recovery", || {
            let r = bt_recovery(10, 200, 2000, 5);
            (
                r.tau == 1.0 && r.final_loss < r.initial_loss,
                r.tau,
                format!("Kendall-tau {:.1}, loss {:.4} -> {:.4}", r.tau, r.initial_loss, r.final_loss),
            )
        }),
        timed("toy_dpo", || {
            let t = toy_training(100, 500, 3);
            let share = 100.0 * t.prefers_chosen as f64 / t.prompts as f64;
            (
                share >= 95.0 && t.final_margin > t.initial_margin,
                share,
                format!(
                    "{}/{} prompts prefer chosen, mean margin {:.4} -> {:.4}",
                    t.prefers_chosen, t.prompts, t.initial_margin, t.final_margin
                ),
            )
        }),
    ]
}

/// Fixed-width pass/fail table.
pub fn render_table(results: &[CheckResult]) -> String {
    let mut out = format!("{:<16} {:<6} {:>10}  {}\n", "check", "result", "ms", "detail");
    for r in results {
        out.push_str(&format!(
            "{:<16} {:<6} {:>10.1}  {}\n",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.elapsed.as_secs_f64() * 1e3,
            r.detail
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_loss_value() {
        let (loss, err) = dpo_identity(50, 2);
        assert!(err <= IDENTITY_TOLERANCE);
        assert_eq!(format!("{loss:.6}"), "0.693147");
    }
}
