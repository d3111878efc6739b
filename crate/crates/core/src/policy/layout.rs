use std::ops::Range;

use super::ModelConfig;

/// How a tensor is initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w_qkv: Range<usize>,
    pub b_qkv: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w_fc: Range<usize>,
    pub b_fc: Range<usize>,
    pub w_proj: Range<usize>,
    pub b_proj: Range<usize>,
}

/// Offsets of every tensor of one transformer (backbone plus both heads)
/// inside a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetLayout {
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub w_lm: Range<usize>,
    pub b_lm: Range<usize>,
    pub w_v: Range<usize>,
    pub b_v: Range<usize>,
    pub len: usize,
    named: Vec<(String, Range<usize>, Init)>,
}

struct Alloc {
    next: usize,
    named: Vec<(String, Range<usize>, Init)>,
}

impl Alloc {
    fn take(&mut self, name: String, n: usize, init: Init) -> Range<usize> {
        let r = self.next..self.next + n;
        self.next += n;
        self.named.push((name, r.clone(), init));
        r
    }
}

impl NetLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (v, d, f) = (cfg.vocab_size, cfg.d_model, cfg.d_ff);
        let mut a = Alloc { next: 0, named: Vec::new() };
        let tok_emb = a.take("tok_emb".into(), v * d, Init::Normal);
        let pos_emb = a.take("pos_emb".into(), cfg.max_len * d, Init::Normal);
        let blocks = (0..cfg.n_layers)
            .map(|l| BlockLayout {
                ln1_g: a.take(format!("h{l}.ln1.g"), d, Init::Ones),
                ln1_b: a.take(format!("h{l}.ln1.b"), d, Init::Zeros),
                w_qkv: a.take(format!("h{l}.attn.w_qkv"), d * 3 * d, Init::Normal),
                b_qkv: a.take(format!("h{l}.attn.b_qkv"), 3 * d, Init::Zeros),
                w_o: a.take(format!("h{l}.attn.w_o"), d * d, Init::Normal),
                b_o: a.take(format!("h{l}.attn.b_o"), d, Init::Zeros),
                ln2_g: a.take(format!("h{l}.ln2.g"), d, Init::Ones),
                ln2_b: a.take(format!("h{l}.ln2.b"), d, Init::Zeros),
                w_fc: a.take(format!("h{l}.mlp.w_fc"), d * f, Init::Normal),
                b_fc: a.take(format!("h{l}.mlp.b_fc"), f, Init::Zeros),
                w_proj: a.take(format!("h{l}.mlp.w_proj"), f * d, Init::Normal),
                b_proj: a.take(format!("h{l}.mlp.b_proj"), d, Init::Zeros),
            })
            .collect();
        let lnf_g = a.take("lnf.g".into(), d, Init::Ones);
        let lnf_b = a.take("lnf.b".into(), d, Init::Zeros);
        // Both heads start at zero: uniform policy and zero value at init.
        let w_lm = a.take("lm_head.w".into(), d * v, Init::Zeros);
        let b_lm = a.take("lm_head.b".into(), v, Init::Zeros);
        let w_v = a.take("value_head.w".into(), d, Init::Zeros);
        let b_v = a.take("value_head.b".into(), 1, Init::Zeros);
        NetLayout {
            tok_emb,
            pos_emb,
            blocks,
            lnf_g,
            lnf_b,
            w_lm,
            b_lm,
            w_v,
            b_v,
            len: a.next,
            named: a.named,
        }
    }

    /// `(name, range, init)` for every tensor, in storage order.
    pub fn tensors(&self) -> &[(String, Range<usize>, Init)] {
        &self.named
    }

    /// Name of the tensor holding flat index `i`, with the offset inside it.
    pub fn locate(&self, i: usize) -> Option<(&str, usize)> {
        self.named
            .iter()
            .find(|(_, r, _)| r.contains(&i))
            .map(|(n, r, _)| (n.as_str(), i - r.start))
    }
}
