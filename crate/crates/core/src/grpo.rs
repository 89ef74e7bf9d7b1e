//! Group relative policy optimisation on a softmax policy over a fixed list
//! of candidate answers.
//!
//! The policy assigns one logit per candidate. Each step samples a group of
//! `G` candidates from the snapshot policy, normalises their rewards within
//! the group and ascends the clipped surrogate minus a KL penalty towards a
//! reference policy. Importance ratios are per whole answer.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GrpoError {
    #[error("invalid GRPO configuration: {0}")]
    Config(String),
    #[error("candidate index {index} out of range for {len} candidates")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("need at least two candidates, got {0}")]
    TooFewCandidates(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig<T> {
    pub group_size: usize,
    pub eps_stab: T,
    /// Clip width.
    pub alpha: T,
    /// KL coefficient.
    pub beta: T,
    pub lr: T,
    pub steps: usize,
    pub seed: u64,
    /// Temperature of the rollout policy, also used inside the loss.
    pub train_temp: T,
    /// Temperature for the reported evaluation curve.
    pub eval_temp: T,
    /// Gradient steps per sampled group; the snapshot is refreshed after.
    pub inner_updates: usize,
}

impl<T: Scalar> Default for GrpoConfig<T> {
    fn default() -> Self {
        Self {
            group_size: 5,
            eps_stab: T::of_f64(1e-4),
            alpha: T::of_f64(0.2),
            beta: T::of_f64(1e-2),
            lr: T::of_f64(1e-2),
            steps: 500,
            seed: 0,
            train_temp: T::one(),
            eval_temp: T::of_f64(0.6),
            inner_updates: 1,
        }
    }
}

impl<T: Scalar> GrpoConfig<T> {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |msg: &str| Err(GrpoError::Config(msg.to_owned()));
        if self.group_size < 2 {
            return bad("group size must be at least 2");
        }
        if !(self.alpha > T::zero() && self.alpha < T::one()) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.beta >= T::zero()) {
            return bad("beta must be non-negative");
        }
        if !(self.eps_stab > T::zero()) {
            return bad("eps_stab must be positive");
        }
        if !(self.lr > T::zero()) {
            return bad("lr must be positive");
        }
        if !(self.train_temp > T::zero() && self.eval_temp > T::zero()) {
            return bad("temperatures must be positive");
        }
        if self.inner_updates < 1 {
            return bad("inner_updates must be at least 1");
        }
        Ok(())
    }
}

/// Current, snapshot and reference logits over one candidate list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyState<T> {
    pub theta: Vec<T>,
    pub theta_old: Vec<T>,
    pub theta_ref: Vec<T>,
}

impl<T: Scalar> PolicyState<T> {
    /// All-zero logits: every policy is uniform.
    pub fn uniform(n: usize) -> Self {
        Self {
            theta: vec![T::zero(); n],
            theta_old: vec![T::zero(); n],
            theta_ref: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn check(&self) -> Result<(), GrpoError> {
        let n = self.theta.len();
        for (what, v) in [("theta_old", &self.theta_old), ("theta_ref", &self.theta_ref)] {
            if v.len() != n {
                return Err(GrpoError::LengthMismatch {
                    what,
                    expected: n,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }
}

/// `log softmax(logits / temp)`.
pub fn log_softmax<T: Scalar>(logits: &[T], temp: T) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b / temp));
    let lse = logits
        .iter()
        .map(|&z| (z / temp - max).exp())
        .fold(T::zero(), |a, b| a + b)
        .ln()
        + max;
    logits.iter().map(|&z| z / temp - lse).collect()
}

/// `softmax(logits / temp)`.
pub fn softmax<T: Scalar>(logits: &[T], temp: T) -> Vec<T> {
    log_softmax(logits, temp).into_iter().map(T::exp).collect()
}

/// `(r_i - mean) / (std + eps)` with the population standard deviation.
pub fn advantages<T: Scalar>(rewards: &[T], eps_stab: T) -> Vec<T> {
    let n = T::of_usize(rewards.len().max(1));
    let mean = rewards.iter().fold(T::zero(), |a, &b| a + b) / n;
    let var = rewards
        .iter()
        .map(|&r| (r - mean) * (r - mean))
        .fold(T::zero(), |a, b| a + b)
        / n;
    let denom = var.sqrt() + eps_stab;
    rewards.iter().map(|&r| (r - mean) / denom).collect()
}

/// `KL(softmax(theta) || softmax(theta_ref))` at temperature `temp`.
pub fn kl_divergence<T: Scalar>(theta: &[T], theta_ref: &[T], temp: T) -> T {
    let lp = log_softmax(theta, temp);
    let lq = log_softmax(theta_ref, temp);
    lp.iter()
        .zip(&lq)
        .map(|(&a, &b)| a.exp() * (a - b))
        .fold(T::zero(), |x, y| x + y)
}

/// Value and analytic gradient (w.r.t. `theta`) of the negated objective
/// `-(mean_i min(rho_i A_i, clip(rho_i) A_i) - beta KL)`.
pub fn surrogate_loss<T: Scalar>(
    state: &PolicyState<T>,
    sampled: &[usize],
    adv: &[T],
    cfg: &GrpoConfig<T>,
) -> Result<(T, Vec<T>), GrpoError> {
    state.check()?;
    let n = state.len();
    if sampled.len() != adv.len() {
        return Err(GrpoError::LengthMismatch {
            what: "advantages",
            expected: sampled.len(),
            got: adv.len(),
        });
    }
    if let Some(&index) = sampled.iter().find(|&&i| i >= n) {
        return Err(GrpoError::IndexOutOfRange { index, len: n });
    }
    let temp = cfg.train_temp;
    let lp = log_softmax(&state.theta, temp);
    let lp_old = log_softmax(&state.theta_old, temp);
    let lq = log_softmax(&state.theta_ref, temp);
    let p: Vec<T> = lp.iter().map(|&x| x.exp()).collect();

    let lo = T::one() - cfg.alpha;
    let hi = T::one() + cfg.alpha;
    let group = T::of_usize(sampled.len().max(1));
    let mut objective = T::zero();
    let mut grad = vec![T::zero(); n];
    for (&o, &a) in sampled.iter().zip(adv) {
        let rho = (lp[o] - lp_old[o]).exp();
        let plain = rho * a;
        let clipped = rho.max(lo).min(hi) * a;
        objective = objective + plain.min(clipped);
        let unclipped_active = (rho >= lo && rho <= hi) || plain < clipped;
        if unclipped_active {
            // d rho / d z = rho (e_o - p); d z / d theta = 1 / temp
            let scale = a * rho / temp / group;
            for (j, g) in grad.iter_mut().enumerate() {
                let ind = if j == o { T::one() } else { T::zero() };
                *g = *g + scale * (ind - p[j]);
            }
        }
    }
    objective = objective / group;

    let kl = lp
        .iter()
        .zip(&lq)
        .map(|(&a, &b)| a.exp() * (a - b))
        .fold(T::zero(), |x, y| x + y);
    objective = objective - cfg.beta * kl;
    for j in 0..n {
        let dkl = p[j] * (lp[j] - lq[j] - kl) / temp;
        grad[j] = grad[j] - cfg.beta * dkl;
    }
    Ok((-objective, grad.into_iter().map(|g| -g).collect()))
}

/// `sum_i softmax(theta / temp)_i * rewards_i`.
pub fn expected_reward<T: Scalar>(theta: &[T], rewards: &[T], temp: T) -> T {
    softmax(theta, temp)
        .into_iter()
        .zip(rewards)
        .map(|(p, &r)| p * r)
        .fold(T::zero(), |a, b| a + b)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> Option<usize> {
    (0..values.len()).fold(None, |best, i| match best {
        Some(b) if values[b] >= values[i] => Some(b),
        _ => Some(i),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome<T> {
    pub state: PolicyState<T>,
    /// Logits after each step, starting with the initial ones.
    pub trajectory: Vec<Vec<T>>,
    /// Expected reward under the training policy, before the first step and
    /// after every step.
    pub reward_curve: Vec<T>,
    /// Same, under the evaluation temperature.
    pub eval_curve: Vec<T>,
    pub warnings: Vec<String>,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn final_policy(&self, temp: T) -> Vec<T> {
        softmax(&self.state.theta, temp)
    }
}

fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(0.0)
}

/// Trains a uniform-initialised policy over candidates with fixed verifier
/// rewards `rewards`.
pub fn train<T: Scalar>(rewards: &[T], cfg: &GrpoConfig<T>) -> Result<TrainOutcome<T>, GrpoError> {
    train_from(PolicyState::uniform(rewards.len()), rewards, cfg)
}

/// Like [`train`], starting from `state` (its `theta_ref` is kept).
pub fn train_from<T: Scalar>(
    mut state: PolicyState<T>,
    rewards: &[T],
    cfg: &GrpoConfig<T>,
) -> Result<TrainOutcome<T>, GrpoError> {
    cfg.validate()?;
    state.check()?;
    let n = rewards.len();
    if n < 2 {
        return Err(GrpoError::TooFewCandidates(n));
    }
    if state.len() != n {
        return Err(GrpoError::LengthMismatch {
            what: "theta",
            expected: n,
            got: state.len(),
        });
    }
    let mut warnings = Vec::new();
    if rewards.iter().all(|&r| r == rewards[0]) {
        warnings.push("all candidates share one reward; advantages are zero and the policy will not move".to_owned());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trajectory = vec![state.theta.clone()];
    let mut reward_curve = vec![expected_reward(&state.theta, rewards, cfg.train_temp)];
    let mut eval_curve = vec![expected_reward(&state.theta, rewards, cfg.eval_temp)];
    for _ in 0..cfg.steps {
        state.theta_old = state.theta.clone();
        let weights: Vec<f64> = softmax(&state.theta_old, cfg.train_temp)
            .into_iter()
            .map(to_f64)
            .collect();
        let dist = WeightedIndex::new(&weights).expect("softmax weights are positive and finite");
        let sampled: Vec<usize> = (0..cfg.group_size).map(|_| dist.sample(&mut rng)).collect();
        let group_rewards: Vec<T> = sampled.iter().map(|&i| rewards[i]).collect();
        let adv = advantages(&group_rewards, cfg.eps_stab);
        for _ in 0..cfg.inner_updates {
            let (_, grad) = surrogate_loss(&state, &sampled, &adv, cfg)?;
            for (t, g) in state.theta.iter_mut().zip(grad) {
                *t = *t - cfg.lr * g;
            }
        }
        trajectory.push(state.theta.clone());
        reward_curve.push(expected_reward(&state.theta, rewards, cfg.train_temp));
        eval_curve.push(expected_reward(&state.theta, rewards, cfg.eval_temp));
    }
    Ok(TrainOutcome {
        state,
        trajectory,
        reward_curve,
        eval_curve,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn advantage_examples() {
        assert_eq!(advantages(&[0.3, 0.3, 0.3], 1e-4), vec![0.0; 3]);
        let a = advantages(&[1.0f64, -1.0], 0.0);
        assert_eq!(a, vec![1.0, -1.0]);
        let a = advantages(&[0.5f64, -1.0, 0.25, 0.0, -3.0], 1e-4);
        assert!(a.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn softmax_is_normalised_and_stable() {
        let p = softmax(&[1000.0f64, 1000.0, -1000.0], 1.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 0.5).abs() < 1e-12);
        let cold = softmax(&[1.0f64, 0.0], 0.5);
        assert!((cold[0] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn ratio_one_without_kl_is_minus_mean_advantage() {
        let mut state = PolicyState::<f64>::uniform(4);
        state.theta = vec![0.3, -0.2, 0.1, 0.0];
        state.theta_old = state.theta.clone();
        let cfg = GrpoConfig {
            beta: 0.0,
            ..GrpoConfig::default()
        };
        let adv = [1.0, -0.5, 0.25];
        let (loss, _) = surrogate_loss(&state, &[0, 1, 3], &adv, &cfg).unwrap();
        assert!((loss + adv.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kl_vanishes_at_the_reference() {
        let mut state = PolicyState::<f64>::uniform(3);
        state.theta = vec![0.4, 0.1, -0.7];
        state.theta_ref = state.theta.clone();
        state.theta_old = state.theta.clone();
        assert!(kl_divergence(&state.theta, &state.theta_ref, 1.0).abs() < 1e-15);
        let (loss, _) = surrogate_loss(&state, &[0, 1], &[0.0, 0.0], &GrpoConfig::default()).unwrap();
        assert!(loss.abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(2..7);
            let mut state = PolicyState::<f64>::uniform(n);
            for j in 0..n {
                state.theta[j] = rng.gen_range(-1.0..1.0);
                state.theta_old[j] = state.theta[j] + rng.gen_range(-0.1..0.1);
                state.theta_ref[j] = rng.gen_range(-1.0..1.0);
            }
            let sampled: Vec<usize> = (0..5).map(|_| rng.gen_range(0..n)).collect();
            let adv: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let cfg = GrpoConfig {
                beta: 0.3,
                ..GrpoConfig::default()
            };
            let (_, grad) = surrogate_loss(&state, &sampled, &adv, &cfg).unwrap();
            for (j, &analytic) in grad.iter().enumerate() {
                let h = 1e-6;
                let mut plus = state.clone();
                plus.theta[j] += h;
                let mut minus = state.clone();
                minus.theta[j] -= h;
                let fd = (surrogate_loss(&plus, &sampled, &adv, &cfg).unwrap().0
                    - surrogate_loss(&minus, &sampled, &adv, &cfg).unwrap().0)
                    / (2.0 * h);
                assert!((fd - analytic).abs() <= 1e-5 * fd.abs().max(1e-3), "{fd} vs {analytic}");
            }
        }
    }

    #[test]
    fn bad_indices_and_config_are_reported() {
        let state = PolicyState::<f64>::uniform(2);
        let cfg = GrpoConfig::default();
        assert_eq!(
            surrogate_loss(&state, &[2], &[1.0], &cfg).unwrap_err(),
            GrpoError::IndexOutOfRange { index: 2, len: 2 }
        );
        assert!(GrpoConfig::<f64> {
            group_size: 1,
            ..cfg.clone()
        }
        .validate()
        .is_err());
        assert!(GrpoConfig::<f64> { alpha: 1.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn two_armed_bandit_picks_the_better_arm() {
        let out = train(
            &[0.5f64, -1.0],
            &GrpoConfig {
                steps: 200,
                ..GrpoConfig::default()
            },
        )
        .unwrap();
        assert_eq!(argmax(&out.state.theta), Some(0));
        assert!(out.reward_curve.last() > out.reward_curve.first());
    }

    #[test]
    fn equal_rewards_keep_the_policy_uniform() {
        let out = train(
            &[0.2f64; 4],
            &GrpoConfig {
                steps: 300,
                ..GrpoConfig::default()
            },
        )
        .unwrap();
        let p = out.final_policy(1.0);
        let tv: f64 = p.iter().map(|x| (x - 0.25).abs()).sum::<f64>() / 2.0;
        assert!(tv <= 0.05);
        assert_eq!(out.warnings.len(), 1);
    }
}
