//! Bradley–Terry and DPO mathematics.
//!
//! Every loss here is evaluated through [`softplus`], never through a naive
//! `ln(1 / (1 + exp(-x)))`, so the functions stay finite for margins far
//! outside the range where `exp` overflows.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{domain, Result};

/// Tolerance used when checking that a probability vector sums to one.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

/// Default KL penalty coefficient.
pub const DEFAULT_BETA: f64 = 0.1;

/// Default gradient-descent step size for the desk-scale trainers.
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;

/// `ln(1 + e^x)` without overflow for large `x` or loss of precision for very
/// negative `x`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// `ln σ(x)`, computed as `-softplus(-x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Logistic function, branching on the sign so `exp` only sees non-positive
/// arguments.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("{name} must be finite, got {value}")))
    }
}

/// Probability that the item with reward `r_w` is preferred over the item with
/// reward `r_l` under the Bradley–Terry model: `σ(r_w − r_l)`.
pub fn bt_probability(r_w: f64, r_l: f64) -> Result<f64> {
    ensure_finite("r_w", r_w)?;
    ensure_finite("r_l", r_l)?;
    Ok(sigmoid(r_w - r_l))
}

/// Mean negative log-likelihood of `(r_w, r_l)` reward pairs.
pub fn rm_loss(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(domain("rm_loss needs at least one pair"));
    }
    let mut total = 0.0;
    for &(r_w, r_l) in pairs {
        ensure_finite("r_w", r_w)?;
        ensure_finite("r_l", r_l)?;
        total += softplus(r_l - r_w);
    }
    Ok(total / pairs.len() as f64)
}

/// Latent per-item rewards fitted from pairwise preferences.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BtRewardParams {
    pub item_scores: Vec<f64>,
}

impl BtRewardParams {
    /// Preference probability of item `winner` over item `loser`.
    pub fn probability(&self, winner: usize, loser: usize) -> Result<f64> {
        let w = self.score(winner)?;
        let l = self.score(loser)?;
        bt_probability(w, l)
    }

    fn score(&self, id: usize) -> Result<f64> {
        self.item_scores
            .get(id)
            .copied()
            .ok_or_else(|| domain(format!("item id {id} out of range")))
    }

    /// Reward-model loss of these scores over a preference list.
    pub fn loss(&self, preferences: &[(usize, usize)]) -> Result<f64> {
        let mut pairs = Vec::with_capacity(preferences.len());
        for &(w, l) in preferences {
            pairs.push((self.score(w)?, self.score(l)?));
        }
        rm_loss(&pairs)
    }
}

fn check_preferences(preferences: &[(usize, usize)], n_items: usize) -> Result<()> {
    if preferences.is_empty() {
        return Err(domain("at least one preference is required"));
    }
    for &(w, l) in preferences {
        if w >= n_items || l >= n_items {
            return Err(domain(format!(
                "preference ({w}, {l}) references an item outside 0..{n_items}"
            )));
        }
        if w == l {
            return Err(domain(format!("item {w} cannot be preferred over itself")));
        }
    }
    Ok(())
}

/// Fits item-level rewards by full-batch gradient descent on [`rm_loss`].
///
/// Scores start at zero. The loss only depends on score differences, so after
/// training every score is shifted so that `item_scores[0] == 0`.
pub fn fit_bt_reward(
    preferences: &[(usize, usize)],
    n_items: usize,
    steps: usize,
    learning_rate: f64,
) -> Result<BtRewardParams> {
    check_preferences(preferences, n_items)?;
    if !(learning_rate.is_finite() && learning_rate > 0.0) {
        return Err(domain("learning_rate must be positive and finite"));
    }
    let inv_n = 1.0 / preferences.len() as f64;
    let mut scores = vec![0.0; n_items];
    let mut grad = vec![0.0; n_items];
    for _ in 0..steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for &(w, l) in preferences {
            // d/dx_w softplus(x_l - x_w) = -σ(x_l - x_w)
            let s = sigmoid(scores[l] - scores[w]) * inv_n;
            grad[w] -= s;
            grad[l] += s;
        }
        for (x, g) in scores.iter_mut().zip(&grad) {
            *x -= learning_rate * g;
        }
    }
    let anchor = scores[0];
    scores.iter_mut().for_each(|x| *x -= anchor);
    Ok(BtRewardParams {
        item_scores: scores,
    })
}

/// Kendall rank correlation (tau-a) between two score vectors. Tied pairs in
/// either vector count as neither concordant nor discordant.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(domain("kendall_tau needs equal-length inputs"));
    }
    let n = a.len();
    if n < 2 {
        return Err(domain("kendall_tau needs at least two items"));
    }
    let mut balance: i64 = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            let s = da * db;
            if s > 0.0 {
                balance += 1;
            } else if s < 0.0 {
                balance -= 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(balance as f64 / pairs)
}

/// `D_KL(p || q)` for categorical distributions, with `0 · ln(0 / q) = 0`.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(domain(format!(
            "distributions differ in length ({} vs {})",
            p.len(),
            q.len()
        )));
    }
    if p.is_empty() {
        return Err(domain("distributions must be non-empty"));
    }
    check_distribution("p", p)?;
    check_distribution("q", q)?;
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(domain(format!(
                "support violation at index {i}: p = {pi} but q = 0"
            )));
        }
        total += pi * libm::log(pi / qi);
    }
    Ok(total.max(0.0))
}

fn check_distribution(name: &str, v: &[f64]) -> Result<()> {
    let mut sum = 0.0;
    for &x in v {
        if !(x.is_finite() && (0.0..=1.0).contains(&x)) {
            return Err(domain(format!("{name} has entry {x} outside [0, 1]")));
        }
        sum += x;
    }
    if libm::fabs(sum - 1.0) > PROBABILITY_SUM_TOLERANCE {
        return Err(domain(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

/// How per-token log-probabilities are reduced to a sequence log-probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthNormalization {
    /// `log π(y|x) = Σ_t log π(y_t | x, y_<t)`.
    #[default]
    Sum,
    /// Sum divided by the token count.
    Mean,
}

/// Reduces per-token log-probabilities to one sequence value.
pub fn sequence_log_prob(token_log_probs: &[f64], norm: LengthNormalization) -> Result<f64> {
    if token_log_probs.is_empty() {
        return Err(domain("a response has at least one token"));
    }
    let mut sum = 0.0;
    for &lp in token_log_probs {
        if !(lp.is_finite() && lp <= 0.0) {
            return Err(domain(format!("token log-probability {lp} is not in (-inf, 0]")));
        }
        sum += lp;
    }
    Ok(match norm {
        LengthNormalization::Sum => sum,
        LengthNormalization::Mean => sum / token_log_probs.len() as f64,
    })
}

/// Sequence log-probabilities of a chosen and a rejected response under the
/// policy and the frozen reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLogProbs {
    logp_policy_chosen: f64,
    logp_ref_chosen: f64,
    logp_policy_rejected: f64,
    logp_ref_rejected: f64,
}

impl PairLogProbs {
    pub fn new(
        logp_policy_chosen: f64,
        logp_ref_chosen: f64,
        logp_policy_rejected: f64,
        logp_ref_rejected: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("logp_policy_chosen", logp_policy_chosen),
            ("logp_ref_chosen", logp_ref_chosen),
            ("logp_policy_rejected", logp_policy_rejected),
            ("logp_ref_rejected", logp_ref_rejected),
        ] {
            if !(v.is_finite() && v <= 0.0) {
                return Err(domain(format!("{name} = {v} is not a finite log-probability")));
            }
        }
        Ok(Self {
            logp_policy_chosen,
            logp_ref_chosen,
            logp_policy_rejected,
            logp_ref_rejected,
        })
    }

    pub fn logp_policy_chosen(&self) -> f64 {
        self.logp_policy_chosen
    }

    pub fn logp_ref_chosen(&self) -> f64 {
        self.logp_ref_chosen
    }

    pub fn logp_policy_rejected(&self) -> f64 {
        self.logp_policy_rejected
    }

    pub fn logp_ref_rejected(&self) -> f64 {
        self.logp_ref_rejected
    }

    /// `log π_θ(y_w|x) − log π_ref(y_w|x)`.
    pub fn chosen_log_ratio(&self) -> f64 {
        self.logp_policy_chosen - self.logp_ref_chosen
    }

    /// `log π_θ(y_l|x) − log π_ref(y_l|x)`.
    pub fn rejected_log_ratio(&self) -> f64 {
        self.logp_policy_rejected - self.logp_ref_rejected
    }
}

/// DPO hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpoConfig {
    beta: f64,
}

impl DpoConfig {
    /// `beta` must be finite and non-negative. Zero is accepted and makes the
    /// loss the constant `ln 2`.
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(domain(format!("beta must be finite and >= 0, got {beta}")));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self { beta: DEFAULT_BETA }
    }
}

/// `β · [(log-ratio chosen) − (log-ratio rejected)]`, the argument of σ in the
/// DPO loss.
pub fn dpo_margin(pair: &PairLogProbs, cfg: &DpoConfig) -> f64 {
    cfg.beta * (pair.chosen_log_ratio() - pair.rejected_log_ratio())
}

/// DPO loss of one pair: `−ln σ(margin)`.
pub fn dpo_loss(pair: &PairLogProbs, cfg: &DpoConfig) -> f64 {
    softplus(-dpo_margin(pair, cfg))
}

/// Gradient of [`dpo_loss`] with respect to the two policy log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpoGradient {
    pub chosen: f64,
    pub rejected: f64,
}

pub fn dpo_grad(pair: &PairLogProbs, cfg: &DpoConfig) -> DpoGradient {
    let s = sigmoid(-dpo_margin(pair, cfg));
    DpoGradient {
        chosen: -cfg.beta * s,
        rejected: cfg.beta * s,
    }
}

/// One preference over the candidates of a toy prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ToyPreference {
    pub prompt_id: u64,
    pub chosen: usize,
    pub rejected: usize,
    pub candidate_count: usize,
}

/// Tabular softmax policy: one logit per candidate response per prompt.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ToyPolicy {
    pub logits: BTreeMap<u64, Vec<f64>>,
}

impl ToyPolicy {
    /// All-zero logits, i.e. the uniform policy, for every prompt in the
    /// dataset.
    pub fn uniform(dataset: &[ToyPreference]) -> Result<Self> {
        let mut logits = BTreeMap::new();
        for pref in dataset {
            check_toy_preference(pref)?;
            let entry = logits
                .entry(pref.prompt_id)
                .or_insert_with(|| vec![0.0; pref.candidate_count]);
            if entry.len() != pref.candidate_count {
                return Err(domain(format!(
                    "prompt {} declared with {} and {} candidates",
                    pref.prompt_id,
                    entry.len(),
                    pref.candidate_count
                )));
            }
        }
        Ok(Self { logits })
    }

    /// Softmax over the prompt's logits.
    pub fn probabilities(&self, prompt_id: u64) -> Option<Vec<f64>> {
        self.logits.get(&prompt_id).map(|l| softmax(l))
    }

    /// `log π(candidate | prompt)`.
    pub fn log_prob(&self, prompt_id: u64, candidate: usize) -> Option<f64> {
        let logits = self.logits.get(&prompt_id)?;
        let x = *logits.get(candidate)?;
        Some(x - log_sum_exp(logits))
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&x| libm::exp(x - lse)).collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| libm::exp(x - max)).sum();
    max + libm::log(sum)
}

fn check_toy_preference(pref: &ToyPreference) -> Result<()> {
    if pref.candidate_count < 2 {
        return Err(domain(format!(
            "prompt {} needs at least two candidates",
            pref.prompt_id
        )));
    }
    if pref.chosen >= pref.candidate_count || pref.rejected >= pref.candidate_count {
        return Err(domain(format!(
            "prompt {}: candidate index out of range 0..{}",
            pref.prompt_id, pref.candidate_count
        )));
    }
    if pref.chosen == pref.rejected {
        return Err(domain(format!(
            "prompt {}: chosen and rejected are both candidate {}",
            pref.prompt_id, pref.chosen
        )));
    }
    Ok(())
}

fn toy_pair(policy: &ToyPolicy, pref: &ToyPreference) -> Result<PairLogProbs> {
    let missing = || domain(format!("policy has no entry for prompt {}", pref.prompt_id));
    let reference = -libm::log(pref.candidate_count as f64);
    PairLogProbs::new(
        policy.log_prob(pref.prompt_id, pref.chosen).ok_or_else(missing)?,
        reference,
        policy.log_prob(pref.prompt_id, pref.rejected).ok_or_else(missing)?,
        reference,
    )
}

/// Mean DPO loss of `policy` over the dataset, against the uniform reference.
pub fn toy_mean_loss(policy: &ToyPolicy, dataset: &[ToyPreference], cfg: &DpoConfig) -> Result<f64> {
    toy_mean(policy, dataset, |pair| dpo_loss(pair, cfg))
}

/// Mean DPO margin of `policy` over the dataset, against the uniform reference.
pub fn toy_mean_margin(
    policy: &ToyPolicy,
    dataset: &[ToyPreference],
    cfg: &DpoConfig,
) -> Result<f64> {
    toy_mean(policy, dataset, |pair| dpo_margin(pair, cfg))
}

fn toy_mean(
    policy: &ToyPolicy,
    dataset: &[ToyPreference],
    f: impl Fn(&PairLogProbs) -> f64,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(domain("dataset is empty"));
    }
    let mut total = 0.0;
    for pref in dataset {
        total += f(&toy_pair(policy, pref)?);
    }
    Ok(total / dataset.len() as f64)
}

/// Trains a [`ToyPolicy`] by full-batch gradient descent on the mean DPO loss.
///
/// The reference policy is the uniform distribution over each prompt's
/// candidates, which is also the starting point of the policy. Gradients flow
/// through [`dpo_grad`] and the softmax Jacobian
/// `∂ log π_k / ∂ logit_j = δ_kj − π_j`.
pub fn toy_dpo_train(
    dataset: &[ToyPreference],
    cfg: &DpoConfig,
    steps: usize,
    learning_rate: f64,
) -> Result<ToyPolicy> {
    if dataset.is_empty() {
        return Err(domain("dataset is empty"));
    }
    if !(learning_rate.is_finite() && learning_rate > 0.0) {
        return Err(domain("learning_rate must be positive and finite"));
    }
    let mut policy = ToyPolicy::uniform(dataset)?;
    let inv_n = 1.0 / dataset.len() as f64;
    let mut grads: BTreeMap<u64, Vec<f64>> = policy
        .logits
        .iter()
        .map(|(&k, v)| (k, vec![0.0; v.len()]))
        .collect();

    for _ in 0..steps {
        grads
            .values_mut()
            .for_each(|g| g.iter_mut().for_each(|x| *x = 0.0));
        for pref in dataset {
            let pair = toy_pair(&policy, pref)?;
            let g = dpo_grad(&pair, cfg);
            let probs = softmax(&policy.logits[&pref.prompt_id]);
            let acc = grads.get_mut(&pref.prompt_id).expect("grad buffer per prompt");
            for (j, (slot, &pj)) in acc.iter_mut().zip(&probs).enumerate() {
                let dc = if j == pref.chosen { 1.0 } else { 0.0 } - pj;
                let dr = if j == pref.rejected { 1.0 } else { 0.0 } - pj;
                *slot += (g.chosen * dc + g.rejected * dr) * inv_n;
            }
        }
        for (k, logits) in policy.logits.iter_mut() {
            for (x, g) in logits.iter_mut().zip(&grads[k]) {
                *x -= learning_rate * g;
            }
        }
    }
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        libm::fabs(a - b) <= tol
    }

    #[test]
    fn bt_probability_examples() {
        assert_eq!(bt_probability(1.0, 1.0).unwrap(), 0.5);
        let far = bt_probability(0.0, 50.0).unwrap();
        assert!(far > 0.0 && far < 1e-20, "{far}");
        assert!(bt_probability(f64::NAN, 0.0).is_err());
        assert!(bt_probability(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn rm_loss_examples() {
        assert!(close(rm_loss(&[(1.0, 1.0)]).unwrap(), core::f64::consts::LN_2, 1e-15));
        assert_eq!(
            rm_loss(&[(1.0, 1.0), (1.0, 1.0)]).unwrap(),
            rm_loss(&[(1.0, 1.0)]).unwrap()
        );
        assert!(rm_loss(&[]).is_err());
    }

    #[test]
    fn softplus_stays_finite_at_extremes() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!(log_sigmoid(-800.0).is_finite());
    }

    #[test]
    fn fit_bt_single_preference_orders_items() {
        let fit = fit_bt_reward(&[(0, 1)], 2, 100, DEFAULT_LEARNING_RATE).unwrap();
        assert_eq!(fit.item_scores[0], 0.0);
        assert!(fit.item_scores[0] > fit.item_scores[1]);
    }

    #[test]
    fn fit_bt_rejects_bad_ids() {
        assert!(fit_bt_reward(&[(0, 3)], 3, 10, 0.1).is_err());
        assert!(fit_bt_reward(&[(1, 1)], 3, 10, 0.1).is_err());
        assert!(fit_bt_reward(&[], 3, 10, 0.1).is_err());
    }

    #[test]
    fn fit_bt_contradictory_preferences_stay_tied() {
        let fit = fit_bt_reward(&[(0, 1), (1, 0)], 2, 1000, 0.1).unwrap();
        assert!(libm::fabs(fit.item_scores[0] - fit.item_scores[1]) < 1e-3);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_categorical(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = kl_categorical(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!(close(v, core::f64::consts::LN_2, 1e-15));
        assert!(kl_categorical(&[0.5, 0.5], &[1.0, 0.0]).is_err());
        assert!(kl_categorical(&[0.5, 0.6], &[0.5, 0.5]).is_err());
        assert!(kl_categorical(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn pair_log_probs_rejects_positive_values() {
        assert!(PairLogProbs::new(0.1, -1.0, -1.0, -1.0).is_err());
        assert!(PairLogProbs::new(-1.0, f64::NEG_INFINITY, -1.0, -1.0).is_err());
        assert!(PairLogProbs::new(0.0, 0.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn dpo_identity_and_saturation() {
        let pair = PairLogProbs::new(-3.0, -3.0, -5.0, -5.0).unwrap();
        let loss = dpo_loss(&pair, &DpoConfig::default());
        assert!(close(loss, core::f64::consts::LN_2, 1e-15));

        let pair = PairLogProbs::new(0.0, -100.0, -1.0, -1.0).unwrap();
        let loss = dpo_loss(&pair, &DpoConfig::new(1.0).unwrap());
        assert!(loss < 1e-6 && !loss.is_nan());
    }

    #[test]
    fn dpo_grad_examples() {
        let pair = PairLogProbs::new(-2.0, -2.0, -4.0, -4.0).unwrap();
        let g = dpo_grad(&pair, &DpoConfig::new(0.1).unwrap());
        assert!(close(g.chosen, -0.05, 1e-15));
        assert!(close(g.rejected, 0.05, 1e-15));

        let g = dpo_grad(&pair, &DpoConfig::new(0.0).unwrap());
        assert_eq!((g.chosen, g.rejected), (0.0, 0.0));
    }

    #[test]
    fn dpo_config_validation() {
        assert!(DpoConfig::new(-0.1).is_err());
        assert!(DpoConfig::new(f64::NAN).is_err());
        assert_eq!(DpoConfig::default().beta(), 0.1);
    }

    #[test]
    fn sequence_log_prob_modes() {
        let toks = [-1.0, -2.0, -3.0];
        assert_eq!(sequence_log_prob(&toks, LengthNormalization::Sum).unwrap(), -6.0);
        assert_eq!(sequence_log_prob(&toks, LengthNormalization::Mean).unwrap(), -2.0);
        assert!(sequence_log_prob(&[], LengthNormalization::Sum).is_err());
        assert!(sequence_log_prob(&[0.5], LengthNormalization::Sum).is_err());
    }

    #[test]
    fn toy_train_single_prompt() {
        let data = [ToyPreference {
            prompt_id: 0,
            chosen: 0,
            rejected: 3,
            candidate_count: 4,
        }];
        let cfg = DpoConfig::default();
        let policy = toy_dpo_train(&data, &cfg, 50, DEFAULT_LEARNING_RATE).unwrap();
        let p = policy.probabilities(0).unwrap();
        assert!(p[0] > p[3]);
        assert!(close(p.iter().sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn toy_train_zero_steps_is_uniform() {
        let data = [ToyPreference {
            prompt_id: 7,
            chosen: 1,
            rejected: 2,
            candidate_count: 4,
        }];
        let policy = toy_dpo_train(&data, &DpoConfig::default(), 0, 0.1).unwrap();
        assert_eq!(policy, ToyPolicy::uniform(&data).unwrap());
        assert_eq!(policy.probabilities(7).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn toy_train_rejects_invalid_pairs() {
        let bad = [ToyPreference {
            prompt_id: 0,
            chosen: 2,
            rejected: 2,
            candidate_count: 4,
        }];
        assert!(toy_dpo_train(&bad, &DpoConfig::default(), 1, 0.1).is_err());
        let inconsistent = [
            ToyPreference {
                prompt_id: 0,
                chosen: 0,
                rejected: 1,
                candidate_count: 4,
            },
            ToyPreference {
                prompt_id: 0,
                chosen: 0,
                rejected: 1,
                candidate_count: 3,
            },
        ];
        assert!(ToyPolicy::uniform(&inconsistent).is_err());
    }

    #[test]
    fn kendall_tau_bounds() {
        assert_eq!(kendall_tau(&[3.0, 2.0, 1.0], &[30.0, 20.0, 10.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), -1.0);
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
    }
}
