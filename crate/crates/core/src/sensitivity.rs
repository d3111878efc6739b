//! Perturbation-based reward sensitivity of completion tokens and the token
//! weights derived from it.
//!
//! Positions are 0-based throughout. Only completion tokens are perturbed;
//! the prompt is never touched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::Token;
use crate::env::Environment;
use crate::rng::{self, tag};
use crate::task::Task;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    /// Perturbations per position.
    pub n_perturb: usize,
    pub alpha: f64,
    pub lambda: f64,
    /// Relative threshold: positions with `S_t <= tau * max S` keep weight 1.
    pub tau: f64,
    pub deletion_prob: f64,
    /// Estimate sensitivity for every `stride`-th rollout sequence only; the
    /// rest get unit weights.
    pub stride: usize,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            n_perturb: 8,
            alpha: 1.0,
            lambda: 1e-6,
            tau: 0.1,
            deletion_prob: 0.5,
            stride: 1,
        }
    }
}

impl SensitivityConfig {
    pub fn validate(&self) -> Vec<(String, String)> {
        let mut errs = Vec::new();
        if self.n_perturb == 0 {
            errs.push(("n_perturb".into(), "must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) {
            errs.push(("alpha".into(), "must be non-negative".into()));
        }
        if !(self.lambda > 0.0) {
            errs.push(("lambda".into(), "must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            errs.push(("tau".into(), "must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.deletion_prob) {
            errs.push(("deletion_prob".into(), "must lie in [0, 1]".into()));
        }
        if self.stride == 0 {
            errs.push(("stride".into(), "must be at least 1".into()));
        }
        errs
    }
}

/// Delete token `t` with probability `deletion_prob`, otherwise replace it by
/// a token drawn uniformly from the other positions. A single-token
/// completion can only be deleted.
pub fn perturb(tokens: &[Token], t: usize, deletion_prob: f64, rng: &mut impl Rng) -> Vec<Token> {
    assert!(t < tokens.len(), "position {t} outside completion of length {}", tokens.len());
    let delete = rng.random::<f64>() < deletion_prob;
    let mut out = tokens.to_vec();
    if delete || tokens.len() == 1 {
        out.remove(t);
    } else {
        let mut j = rng.random_range(0..tokens.len() - 1);
        if j >= t {
            j += 1;
        }
        out[t] = tokens[j];
    }
    out
}

/// Mean absolute reward deviation per position over `n_perturb` sampled
/// perturbations. `stream(t, n)` supplies the random stream of sample `n` at
/// position `t`.
pub fn estimate_with<R, F>(
    completion: &[Token],
    r0: f64,
    cfg: &SensitivityConfig,
    mut reward: F,
    stream: impl Fn(usize, usize) -> R,
) -> Vec<f64>
where
    R: Rng,
    F: FnMut(&[Token]) -> f64,
{
    (0..completion.len())
        .map(|t| {
            let mut sum = 0.0;
            for n in 0..cfg.n_perturb {
                let p = perturb(completion, t, cfg.deletion_prob, &mut stream(t, n));
                sum += (r0 - reward(&p)).abs();
            }
            sum / cfg.n_perturb as f64
        })
        .collect()
}

/// Sensitivity profile of a completion under the task's reward. Streams are
/// keyed by `(seed, key..., t, n)`, so the result does not depend on
/// scheduling.
pub fn estimate_sensitivity(
    env: &Environment,
    task: &Task,
    completion: &[Token],
    r0: f64,
    cfg: &SensitivityConfig,
    seed: u64,
    key: &[u64],
) -> Vec<f64> {
    let mut path = Vec::with_capacity(key.len() + 4);
    path.push(tag::SENSITIVITY);
    path.extend_from_slice(key);
    path.push(task.id);
    estimate_with(
        completion,
        r0,
        cfg,
        |p| env.reward(task, p).value,
        |t, n| {
            let mut full = path.clone();
            full.push(t as u64);
            full.push(n as u64);
            rng::stream(seed, &full)
        },
    )
}

/// The `N -> infinity` limit: every deletion and every replacement weighted
/// by its probability.
pub fn exhaustive_with<F>(completion: &[Token], r0: f64, deletion_prob: f64, mut reward: F) -> Vec<f64>
where
    F: FnMut(&[Token]) -> f64,
{
    let len = completion.len();
    (0..len)
        .map(|t| {
            let mut deleted = completion.to_vec();
            deleted.remove(t);
            let dev_del = (r0 - reward(&deleted)).abs();
            if len == 1 {
                return dev_del;
            }
            let mut rep = 0.0;
            for j in (0..len).filter(|&j| j != t) {
                let mut p = completion.to_vec();
                p[t] = completion[j];
                rep += (r0 - reward(&p)).abs();
            }
            deletion_prob * dev_del + (1.0 - deletion_prob) * rep / (len - 1) as f64
        })
        .collect()
}

pub fn exhaustive_sensitivity(
    env: &Environment,
    task: &Task,
    completion: &[Token],
    r0: f64,
    deletion_prob: f64,
) -> Vec<f64> {
    exhaustive_with(completion, r0, deletion_prob, |p| env.reward(task, p).value)
}

/// `w_t = 1 + alpha * S_t / (max S + lambda)` above the threshold, 1 elsewhere.
pub fn token_weights(profile: &[f64], cfg: &SensitivityConfig) -> Vec<f64> {
    let max = profile.iter().copied().fold(0.0, f64::max);
    profile
        .iter()
        .map(|&s| {
            if s > cfg.tau * max {
                1.0 + cfg.alpha * s / (max + cfg.lambda)
            } else {
                1.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{tokenize_plan, OrchestrationPlan};

    fn plan_tokens() -> Vec<Token> {
        tokenize_plan(&OrchestrationPlan::from_index(1234).unwrap())
    }

    #[test]
    fn replacement_draws_from_other_positions() {
        let toks = plan_tokens();
        let mut r = rng::stream(1, &[]);
        for _ in 0..200 {
            let p = perturb(&toks, 1, 0.0, &mut r);
            assert_eq!(p.len(), 7);
            assert_ne!(p[1], toks[1]);
            assert!(toks.iter().enumerate().any(|(j, &x)| j != 1 && x == p[1]));
            for j in (0..7).filter(|&j| j != 1) {
                assert_eq!(p[j], toks[j]);
            }
        }
    }

    #[test]
    fn deletion_shortens_by_one() {
        let toks = plan_tokens();
        let p = perturb(&toks, 3, 1.0, &mut rng::stream(2, &[]));
        assert_eq!(p.len(), 6);
        assert_eq!(&p[..3], &toks[..3]);
        assert_eq!(&p[3..], &toks[4..]);
        let single = perturb(&[Token::EOS], 0, 0.0, &mut rng::stream(2, &[]));
        assert!(single.is_empty());
    }

    #[test]
    fn constant_reward_gives_zero_profile() {
        let cfg = SensitivityConfig::default();
        let s = estimate_with(&plan_tokens(), 0.3, &cfg, |_| 0.3, |t, n| rng::stream(0, &[t as u64, n as u64]));
        assert!(s.iter().all(|&x| x == 0.0));
        assert!(token_weights(&s, &cfg).iter().all(|&w| w == 1.0));
    }

    #[test]
    fn hand_sized_means() {
        let one = SensitivityConfig { n_perturb: 1, ..Default::default() };
        let s = estimate_with(&plan_tokens(), 0.8, &one, |_| -0.55, |t, n| rng::stream(0, &[t as u64, n as u64]));
        assert!(s.iter().all(|&x| (x - 1.35).abs() < 1e-12));

        let two = SensitivityConfig { n_perturb: 2, ..Default::default() };
        let mut calls = 0;
        let s = estimate_with(
            &[Token(52)],
            0.0,
            &two,
            |_| {
                calls += 1;
                if calls == 1 { 0.2 } else { -0.6 }
            },
            |t, n| rng::stream(0, &[t as u64, n as u64]),
        );
        assert!((s[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn weights_by_hand() {
        let cfg = SensitivityConfig::default();
        let w = token_weights(&[0.0, 2.0, 4.0], &cfg);
        assert_eq!(w[0], 1.0);
        assert!((w[1] - (1.0 + 2.0 / (4.0 + 1e-6))).abs() < 1e-12);
        assert!((w[2] - (1.0 + 4.0 / (4.0 + 1e-6))).abs() < 1e-12);
        let below = token_weights(&[0.3, 4.0], &cfg);
        assert_eq!(below[0], 1.0);
        let flat = SensitivityConfig { alpha: 0.0, ..Default::default() };
        assert!(token_weights(&[1.0, 2.0, 4.0], &flat).iter().all(|&w| w == 1.0));
    }

    #[test]
    fn sampled_estimate_converges_to_enumeration() {
        // A reward that depends on the token multiset, so perturbations differ.
        let reward = |p: &[Token]| p.iter().map(|t| (t.0 % 5) as f64).sum::<f64>() / 10.0 - 0.2 * p.len() as f64;
        let comp = [Token(53), Token(57), Token(66), Token::EOS];
        let r0 = reward(&comp);
        let exact = exhaustive_with(&comp, r0, 0.5, reward);
        let cfg = SensitivityConfig { n_perturb: 4000, ..Default::default() };
        let est = estimate_with(&comp, r0, &cfg, reward, |t, n| rng::stream(3, &[t as u64, n as u64]));
        for (a, b) in est.iter().zip(&exact) {
            assert!((a - b).abs() < 0.02, "{a} vs {b}");
        }
    }
}
