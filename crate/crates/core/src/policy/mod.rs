//! Decoder-only sequence policy with a language-modeling head (the action
//! model) and a scalar value head (the critic).
//!
//! By default both heads sit on one shared backbone. With
//! [`ModelConfig::split_backbone`] the critic gets its own backbone and the
//! parameter vector holds two complete networks back to back.
//!
//! All parameters live in one flat `Vec<f64>` described by a [`NetLayout`];
//! gradients and optimizer moments use the same layout.

mod adam;
mod checkpoint;
mod layout;
mod net;
pub mod ops;
mod sample;

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use adam::{apply_update, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use layout::{Init, NetLayout};
pub use sample::{sample_completion, Completion, Decoding};

use crate::dsl::{Token, VOCAB_SIZE};
use crate::task::PROMPT_LEN;
use net::{Net, NetCache};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("sequence of length {len} exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(u16),
    #[error("shape mismatch: expected {expected} entries, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positional {
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub positional: Positional,
    /// Give the critic its own backbone instead of sharing the actor's.
    pub split_backbone: bool,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: VOCAB_SIZE,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_len: 16,
            positional: Positional::Learned,
            split_backbone: false,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// Smallest useful config, used by gradient checks.
    pub fn micro() -> Self {
        ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 1,
            d_ff: 16,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Vec<(String, String)> {
        let mut errs = Vec::new();
        if self.vocab_size != VOCAB_SIZE {
            errs.push(("vocab_size".into(), format!("must equal the grammar vocabulary size {VOCAB_SIZE}")));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            errs.push(("n_heads".into(), format!("must divide d_model = {}", self.d_model)));
        }
        if self.max_len < PROMPT_LEN + crate::dsl::PLAN_LEN {
            errs.push(("max_len".into(), "must hold a prompt plus a complete plan (13)".into()));
        }
        if self.d_model == 0 || self.d_ff == 0 || self.n_layers == 0 {
            errs.push(("d_model/d_ff/n_layers".into(), "must be positive".into()));
        }
        if !(self.init_std > 0.0) {
            errs.push(("init_std".into(), "must be positive".into()));
        }
        errs
    }
}

/// Per-position logits and values of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub values: Vec<f64>,
    pub vocab: usize,
}

impl ForwardOutput {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn logits_row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.vocab..(i + 1) * self.vocab]
    }

    pub fn log_probs_row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab];
        ops::log_softmax(self.logits_row(i), &mut out);
        out
    }

    /// The token distribution at position `i`.
    pub fn probs_row(&self, i: usize) -> Vec<f64> {
        ops::softmax(self.logits_row(i))
    }
}

/// Forward activations kept for backpropagation.
pub struct SeqCache {
    actor: NetCache,
    critic: Option<NetCache>,
}

impl SeqCache {
    pub fn len(&self) -> usize {
        self.actor.n
    }

    pub fn is_empty(&self) -> bool {
        self.actor.n == 0
    }

    pub fn logits(&self) -> &[f64] {
        &self.actor.logits
    }

    pub fn values(&self) -> &[f64] {
        &self.critic.as_ref().unwrap_or(&self.actor).values
    }
}

/// Gradient with the same flat layout as [`PolicyParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn zeros_like(p: &PolicyParams) -> Self {
        Gradients(vec![0.0; p.n_params()])
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|g| *g *= s);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Trainable parameters plus a version counter bumped by every update.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    config: ModelConfig,
    layout: Arc<NetLayout>,
    data: Vec<f64>,
    version: u64,
}

impl PolicyParams {
    /// All-zero parameters (layer-norm gains included).
    pub fn zeros(config: ModelConfig) -> Result<Self, PolicyError> {
        let errs = config.validate();
        if let Some((field, msg)) = errs.first() {
            return Err(PolicyError::InvalidConfig(format!("{field}: {msg}")));
        }
        let layout = Arc::new(NetLayout::new(&config));
        let nets = if config.split_backbone { 2 } else { 1 };
        let data = vec![0.0; layout.len * nets];
        Ok(PolicyParams { config, layout, data, version: 0 })
    }

    /// Normal(0, init_std) weights, unit layer-norm gains, zero biases and heads.
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self, PolicyError> {
        let mut p = Self::zeros(config)?;
        let normal = Normal::new(0.0, p.config.init_std).expect("positive std");
        let net_len = p.layout.len;
        for net in 0..p.data.len() / net_len {
            let base = net * net_len;
            for (_, range, init) in p.layout.tensors() {
                for i in range.clone() {
                    p.data[base + i] = match init {
                        Init::Normal => normal.sample(rng),
                        Init::Zeros => 0.0,
                        Init::Ones => 1.0,
                    };
                }
            }
        }
        Ok(p)
    }

    pub(crate) fn from_parts(config: ModelConfig, data: Vec<f64>, version: u64) -> Result<Self, PolicyError> {
        let mut p = Self::zeros(config)?;
        if data.len() != p.data.len() {
            return Err(PolicyError::ShapeMismatch { expected: p.data.len(), found: data.len() });
        }
        p.data = data;
        p.version = version;
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &NetLayout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    /// Independent deep copy; later updates to `self` do not affect it.
    pub fn clone_params(&self) -> PolicyParams {
        self.clone()
    }

    /// Name of the tensor a flat index belongs to, for diagnostics.
    pub fn describe_index(&self, i: usize) -> String {
        let net_len = self.layout.len;
        let prefix = if i >= net_len { "critic." } else { "" };
        match self.layout.locate(i % net_len) {
            Some((name, off)) => format!("{prefix}{name}[{off}]"),
            None => format!("#{i}"),
        }
    }

    fn actor(&self) -> Net<'_> {
        Net { cfg: &self.config, lay: &self.layout, p: &self.data[..self.layout.len] }
    }

    fn critic(&self) -> Option<Net<'_>> {
        self.config.split_backbone.then(|| Net {
            cfg: &self.config,
            lay: &self.layout,
            p: &self.data[self.layout.len..],
        })
    }

    /// Run the sequence and keep activations for [`backward`](Self::backward).
    pub fn forward_cached(&self, tokens: &[Token]) -> Result<SeqCache, PolicyError> {
        let actor = self.actor().run(tokens)?;
        let critic = self.critic().map(|c| c.run(tokens)).transpose()?;
        Ok(SeqCache { actor, critic })
    }

    /// Causal forward pass: per-position logits and values.
    pub fn forward(&self, tokens: &[Token]) -> Result<ForwardOutput, PolicyError> {
        let c = self.forward_cached(tokens)?;
        let values = c.values().to_vec();
        Ok(ForwardOutput {
            logits: c.actor.logits,
            values,
            vocab: self.config.vocab_size,
        })
    }

    /// Accumulate parameter gradients given upstream gradients on logits
    /// (`len x vocab`) and values (`len`). Either slice may be empty.
    pub fn backward(&self, cache: &SeqCache, dlogits: &[f64], dvalues: &[f64], grads: &mut Gradients) {
        let net_len = self.layout.len;
        match (self.critic(), &cache.critic) {
            (Some(critic), Some(cc)) => {
                let (ga, gc) = grads.0.split_at_mut(net_len);
                self.actor().backward(&cache.actor, dlogits, &[], ga);
                critic.backward(cc, &[], dvalues, gc);
            }
            _ => self.actor().backward(&cache.actor, dlogits, dvalues, &mut grads.0[..net_len]),
        }
    }
}

/// Incremental decoder over the action model.
pub struct Decoder<'a> {
    net: Net<'a>,
    cache: NetCache,
}

impl<'a> Decoder<'a> {
    pub fn new(params: &'a PolicyParams) -> Self {
        Decoder { net: params.actor(), cache: NetCache::new(&params.config) }
    }

    pub fn push(&mut self, token: Token) -> Result<(), PolicyError> {
        self.net.push(&mut self.cache, token)
    }

    pub fn len(&self) -> usize {
        self.cache.n
    }

    pub fn is_empty(&self) -> bool {
        self.cache.n == 0
    }

    /// Logits predicting the next token.
    pub fn next_logits(&self) -> &[f64] {
        self.cache.last_logits(self.net.cfg.vocab_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn params(cfg: ModelConfig, seed: u64) -> PolicyParams {
        PolicyParams::init(cfg, &mut rng::stream(seed, &[rng::tag::INIT])).unwrap()
    }

    /// Randomise every entry, heads included, so tests exercise all paths.
    pub(crate) fn random_params(cfg: ModelConfig, seed: u64, scale: f64) -> PolicyParams {
        let mut p = PolicyParams::zeros(cfg).unwrap();
        let mut r = rng::stream(seed, &[99]);
        let normal = Normal::new(0.0, scale).unwrap();
        for x in p.as_mut_slice() {
            *x = normal.sample(&mut r);
        }
        // Keep layer-norm gains near one.
        let layout = p.layout().clone();
        let net_len = layout.len;
        for net in 0..p.n_params() / net_len {
            for (name, range, init) in layout.tensors() {
                if *init == Init::Ones {
                    for i in range.clone() {
                        p.as_mut_slice()[net * net_len + i] += 1.0;
                    }
                }
                let _ = name;
            }
        }
        p
    }

    fn toks(ids: &[u16]) -> Vec<Token> {
        ids.iter().map(|&i| Token(i)).collect()
    }

    #[test]
    fn causal_mask_holds() {
        let p = random_params(ModelConfig::default(), 1, 0.1);
        let a = toks(&[0, 10, 25, 40, 50, 1, 53, 58, 70, 79]);
        let mut b = a.clone();
        b[7] = Token(60);
        b[8] = Token(3);
        b[9] = Token(2);
        let fa = p.forward(&a).unwrap();
        let fb = p.forward(&b).unwrap();
        for t in 0..7 {
            assert_eq!(fa.logits_row(t), fb.logits_row(t), "row {t}");
            assert_eq!(fa.values[t], fb.values[t]);
        }
        assert_ne!(fa.logits_row(8), fb.logits_row(8));
    }

    #[test]
    fn rows_are_distributions() {
        let p = random_params(ModelConfig::default(), 2, 0.3);
        let out = p.forward(&toks(&[0, 4, 20, 36, 44, 1, 52])).unwrap();
        for i in 0..out.len() {
            let pr = out.probs_row(i);
            assert!(pr.iter().all(|&x| x >= 0.0));
            assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fresh_policy_is_uniform() {
        let p = params(ModelConfig::default(), 3);
        let out = p.forward(&toks(&[0, 4, 20, 36, 44, 1])).unwrap();
        for i in 0..out.len() {
            let pr = out.probs_row(i);
            let entropy: f64 = -pr.iter().map(|&q| q * q.ln()).sum::<f64>();
            assert!((entropy - 87f64.ln()).abs() < 1e-12);
            assert!((87f64.ln() - 4.465_908_118_654_584).abs() < 1e-12);
            assert_eq!(out.values[i], 0.0);
        }
    }

    #[test]
    fn too_long_and_unknown_tokens_are_errors() {
        let p = params(ModelConfig::micro(), 4);
        assert!(matches!(
            p.forward(&vec![Token(5); 17]),
            Err(PolicyError::SequenceTooLong { len: 17, max: 16 })
        ));
        assert!(matches!(p.forward(&[Token(90)]), Err(PolicyError::UnknownToken(90))));
    }

    #[test]
    fn clone_is_independent() {
        let mut p = params(ModelConfig::micro(), 5);
        let c = p.clone_params();
        let seq = toks(&[0, 4, 20, 36, 44, 1, 52]);
        assert_eq!(p.forward(&seq).unwrap(), c.forward(&seq).unwrap());
        p.as_mut_slice()[0] += 1.0;
        p.bump_version();
        assert_eq!(c.version(), 0);
        assert_ne!(p.as_slice()[0], c.as_slice()[0]);
    }

    #[test]
    fn split_backbone_has_two_networks() {
        let cfg = ModelConfig { split_backbone: true, ..ModelConfig::micro() };
        let p = random_params(cfg, 6, 0.2);
        let shared = PolicyParams::zeros(ModelConfig::micro()).unwrap();
        assert_eq!(p.n_params(), 2 * shared.n_params());
        let seq = toks(&[0, 4, 20, 36, 44, 1, 52]);
        let out = p.forward(&seq).unwrap();
        // Values come from the critic copy, logits from the actor copy.
        let mut actor_only = PolicyParams::zeros(ModelConfig::micro()).unwrap();
        actor_only.as_mut_slice().copy_from_slice(&p.as_slice()[..shared.n_params()]);
        let a = actor_only.forward(&seq).unwrap();
        assert_eq!(out.logits, a.logits);
        assert_ne!(out.values, a.values);
        assert!(p.describe_index(shared.n_params()).starts_with("critic.tok_emb"));
    }

    /// Check analytic gradients of `sum(c * logits) + sum(e * values)` by central differences.
    fn grad_check(cfg: ModelConfig, seed: u64) {
        let p = random_params(cfg, seed, 0.3);
        let seq = toks(&[0, 7, 22, 38, 45, 1, 54, 59, 66, 79, 82, 85, 2]);
        let n = seq.len();
        let v = p.config().vocab_size;
        let mut r = rng::stream(seed, &[5]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let c: Vec<f64> = (0..n * v).map(|_| normal.sample(&mut r)).collect();
        let e: Vec<f64> = (0..n).map(|_| normal.sample(&mut r)).collect();
        let loss = |q: &PolicyParams| {
            let out = q.forward(&seq).unwrap();
            dot_all(&out.logits, &c) + dot_all(&out.values, &e)
        };
        let cache = p.forward_cached(&seq).unwrap();
        let mut g = Gradients::zeros_like(&p);
        p.backward(&cache, &c, &e, &mut g);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in (0..p.n_params()).step_by(7) {
            let mut a = p.clone();
            a.as_mut_slice()[i] += h;
            let mut b = p.clone();
            b.as_mut_slice()[i] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            let rel = (fd - g.0[i]).abs() / (fd.abs() + g.0[i].abs()).max(1e-3);
            if rel > worst {
                worst = rel;
            }
            assert!(rel < 1e-4, "{}: fd {fd} vs analytic {}", p.describe_index(i), g.0[i]);
        }
        assert!(worst < 1e-4);
    }

    fn dot_all(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        grad_check(ModelConfig::micro(), 11);
        grad_check(ModelConfig { n_heads: 2, n_layers: 2, ..ModelConfig::micro() }, 12);
        grad_check(ModelConfig { split_backbone: true, ..ModelConfig::micro() }, 13);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = ModelConfig { n_heads: 3, ..ModelConfig::default() };
        assert!(matches!(PolicyParams::zeros(cfg), Err(PolicyError::InvalidConfig(_))));
    }
}
