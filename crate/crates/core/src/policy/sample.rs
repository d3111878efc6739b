use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::log_softmax;
use super::{Decoder, PolicyError, PolicyParams};
use crate::dsl::{Token, PLAN_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum Decoding {
    Greedy,
    Sample { temperature: f64 },
}

/// A generated completion and the log-probability of each token under the
/// untempered policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub tokens: Vec<Token>,
    pub logprobs: Vec<f64>,
}

impl Completion {
    pub fn total_logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }
}

/// Decode after `prompt` until EOS or `max_new` tokens (at most one plan length).
///
/// Greedy ties go to the lowest token id. The random stream is consumed once
/// per sampled token and never under greedy decoding.
pub fn sample_completion(
    params: &PolicyParams,
    prompt: &[Token],
    decoding: Decoding,
    max_new: usize,
    rng: &mut impl Rng,
) -> Result<Completion, PolicyError> {
    let max_new = max_new.min(PLAN_LEN);
    let vocab = params.config().vocab_size;
    let mut dec = Decoder::new(params);
    for &t in prompt {
        dec.push(t)?;
    }
    let mut tokens = Vec::with_capacity(max_new);
    let mut logprobs = Vec::with_capacity(max_new);
    let mut logp = vec![0.0; vocab];
    let mut tempered = vec![0.0; vocab];
    while tokens.len() < max_new {
        let logits = dec.next_logits();
        log_softmax(logits, &mut logp);
        let choice = match decoding {
            Decoding::Greedy => argmax(&logp),
            Decoding::Sample { temperature } => {
                let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
                log_softmax(&scaled, &mut tempered);
                draw(&tempered, rng)
            }
        };
        let tok = Token(choice as u16);
        tokens.push(tok);
        logprobs.push(logp[choice]);
        if tok == Token::EOS || tokens.len() == max_new {
            break;
        }
        dec.push(tok)?;
    }
    Ok(Completion { tokens, logprobs })
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a row of log-probabilities.
fn draw(logp: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &lp) in logp.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ModelConfig;
    use crate::rng;

    fn toy() -> PolicyParams {
        let mut p = PolicyParams::init(ModelConfig::micro(), &mut rng::stream(7, &[1])).unwrap();
        // Give the LM head some signal so decoding is not uniform.
        let r = p.layout().w_lm.clone();
        let data = p.as_mut_slice();
        for (k, i) in r.enumerate() {
            data[i] = ((k * 37 % 11) as f64 - 5.0) * 0.3;
        }
        p
    }

    #[test]
    fn logprobs_match_full_forward() {
        let p = toy();
        let prompt = [Token(0), Token(10), Token(25), Token(40), Token(47), Token(1)];
        let mut r = rng::stream(1, &[2]);
        for _ in 0..20 {
            let c = sample_completion(&p, &prompt, Decoding::Sample { temperature: 1.0 }, 7, &mut r).unwrap();
            let mut seq = prompt.to_vec();
            seq.extend(&c.tokens);
            let out = p.forward(&seq).unwrap();
            for (j, (&t, &lp)) in c.tokens.iter().zip(&c.logprobs).enumerate() {
                let row = out.log_probs_row(prompt.len() - 1 + j);
                assert!((row[t.index()] - lp).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn greedy_is_deterministic_and_consumes_no_randomness() {
        let p = toy();
        let prompt = [Token(0), Token(10), Token(25), Token(40), Token(47), Token(1)];
        let mut r1 = rng::stream(3, &[]);
        let a = sample_completion(&p, &prompt, Decoding::Greedy, 7, &mut r1).unwrap();
        let b = sample_completion(&p, &prompt, Decoding::Greedy, 7, &mut rng::stream(4, &[])).unwrap();
        assert_eq!(a, b);
        let next: u64 = r1.random();
        let fresh: u64 = rng::stream(3, &[]).random();
        assert_eq!(next, fresh);
    }

    #[test]
    fn stops_at_eos_or_limit() {
        let mut p = PolicyParams::zeros(ModelConfig::micro()).unwrap();
        let b = p.layout().b_lm.clone();
        p.as_mut_slice()[b.start + Token::EOS.index()] = 50.0;
        let prompt = [Token(0), Token(10), Token(25), Token(40), Token(47), Token(1)];
        let c = sample_completion(&p, &prompt, Decoding::Greedy, 7, &mut rng::stream(0, &[])).unwrap();
        assert_eq!(c.tokens, vec![Token::EOS]);
        let q = toy();
        let c = sample_completion(&q, &prompt, Decoding::Sample { temperature: 5.0 }, 3, &mut rng::stream(0, &[])).unwrap();
        assert!(c.tokens.len() <= 3);
    }

    #[test]
    fn draw_follows_distribution() {
        let probs = [0.1f64, 0.6, 0.3];
        let logp: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        let mut r = rng::stream(9, &[]);
        let mut counts = [0usize; 3];
        let n = 20000;
        for _ in 0..n {
            counts[draw(&logp, &mut r)] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.02);
        }
    }
}
