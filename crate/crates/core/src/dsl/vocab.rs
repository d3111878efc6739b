use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Vocabulary index of a single token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub u16);

impl Token {
    pub const BOS_TASK: Token = Token(0);
    pub const SEP: Token = Token(1);
    pub const EOS: Token = Token(2);
    pub const PAD: Token = Token(3);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match STANDARD_NAMES.get(self.index()) {
            Some(name) => f.write_str(name),
            None => write!(f, "<unk:{}>", self.0),
        }
    }
}

/// Fields of an orchestration plan, in grammar order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlanField {
    Modulation,
    CodeRate,
    Prb,
    Layers,
    Receiver,
    Retx,
}

impl PlanField {
    pub const ORDER: [PlanField; 6] = [
        PlanField::Modulation,
        PlanField::CodeRate,
        PlanField::Prb,
        PlanField::Layers,
        PlanField::Receiver,
        PlanField::Retx,
    ];

    pub fn position(self) -> usize {
        self as usize
    }

    pub fn cardinality(self) -> usize {
        match self {
            PlanField::Modulation => 5,
            PlanField::CodeRate => 5,
            PlanField::Prb => 16,
            PlanField::Layers => 3,
            PlanField::Receiver => 2,
            PlanField::Retx => 4,
        }
    }

    fn base(self) -> u16 {
        match self {
            PlanField::Modulation => MOD_BASE,
            PlanField::CodeRate => CR_BASE,
            PlanField::Prb => PRB_BASE,
            PlanField::Layers => LAY_BASE,
            PlanField::Receiver => RX_BASE,
            PlanField::Retx => RETX_BASE,
        }
    }

    /// Token for the `value`-th entry of this field's domain.
    pub fn token(self, value: usize) -> Token {
        assert!(value < self.cardinality(), "{self:?} value {value} out of range");
        Token(self.base() + value as u16)
    }

    pub fn name(self) -> &'static str {
        match self {
            PlanField::Modulation => "modulation",
            PlanField::CodeRate => "code_rate",
            PlanField::Prb => "n_prb",
            PlanField::Layers => "layers",
            PlanField::Receiver => "receiver",
            PlanField::Retx => "n_retx",
        }
    }
}

impl fmt::Display for PlanField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Prompt slots, in prompt order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PromptSlot {
    Snr,
    Thr,
    Del,
    Ber,
}

impl PromptSlot {
    pub fn bins(self) -> usize {
        match self {
            PromptSlot::Snr | PromptSlot::Thr => 16,
            PromptSlot::Del | PromptSlot::Ber => 8,
        }
    }

    fn base(self) -> u16 {
        match self {
            PromptSlot::Snr => SNR_BASE,
            PromptSlot::Thr => THR_BASE,
            PromptSlot::Del => DEL_BASE,
            PromptSlot::Ber => BER_BASE,
        }
    }

    pub fn token(self, bin: usize) -> Token {
        assert!(bin < self.bins(), "{self:?} bin {bin} out of range");
        Token(self.base() + bin as u16)
    }
}

/// What role a token id plays in the grammar.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenClass {
    Structural,
    Prompt(PromptSlot, usize),
    Field(PlanField, usize),
}

const SNR_BASE: u16 = 4;
const THR_BASE: u16 = SNR_BASE + 16;
const DEL_BASE: u16 = THR_BASE + 16;
const BER_BASE: u16 = DEL_BASE + 8;
const MOD_BASE: u16 = BER_BASE + 8;
const CR_BASE: u16 = MOD_BASE + 5;
const PRB_BASE: u16 = CR_BASE + 5;
const LAY_BASE: u16 = PRB_BASE + 16;
const RX_BASE: u16 = LAY_BASE + 3;
const RETX_BASE: u16 = RX_BASE + 2;

pub const VOCAB_SIZE: usize = (RETX_BASE + 4) as usize;

pub fn classify(token: Token) -> Option<TokenClass> {
    let id = token.0;
    let class = match id {
        0..=3 => TokenClass::Structural,
        _ if id < THR_BASE => TokenClass::Prompt(PromptSlot::Snr, (id - SNR_BASE) as usize),
        _ if id < DEL_BASE => TokenClass::Prompt(PromptSlot::Thr, (id - THR_BASE) as usize),
        _ if id < BER_BASE => TokenClass::Prompt(PromptSlot::Del, (id - DEL_BASE) as usize),
        _ if id < MOD_BASE => TokenClass::Prompt(PromptSlot::Ber, (id - BER_BASE) as usize),
        _ if id < CR_BASE => TokenClass::Field(PlanField::Modulation, (id - MOD_BASE) as usize),
        _ if id < PRB_BASE => TokenClass::Field(PlanField::CodeRate, (id - CR_BASE) as usize),
        _ if id < LAY_BASE => TokenClass::Field(PlanField::Prb, (id - PRB_BASE) as usize),
        _ if id < RX_BASE => TokenClass::Field(PlanField::Layers, (id - LAY_BASE) as usize),
        _ if id < RETX_BASE => TokenClass::Field(PlanField::Receiver, (id - RX_BASE) as usize),
        _ if (id as usize) < VOCAB_SIZE => {
            TokenClass::Field(PlanField::Retx, (id - RETX_BASE) as usize)
        }
        _ => return None,
    };
    Some(class)
}

static STANDARD_NAMES: std::sync::LazyLock<Vec<String>> = std::sync::LazyLock::new(standard_names);

fn standard_names() -> Vec<String> {
    let mut names: Vec<String> = ["BOS_TASK", "SEP", "EOS", "PAD"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for (prefix, n) in [("SNR", 16), ("THR", 16), ("DEL", 8), ("BER", 8)] {
        names.extend((0..n).map(|i| format!("{prefix}_{i}")));
    }
    names.extend(
        ["BPSK", "QPSK", "QAM16", "QAM64", "QAM256"]
            .iter()
            .map(|m| format!("MOD_{m}")),
    );
    names.extend(
        ["1/3", "1/2", "2/3", "3/4", "5/6"]
            .iter()
            .map(|r| format!("CR_{r}")),
    );
    names.extend((1..=16).map(|i| format!("PRB_{}", 4 * i)));
    names.extend([1, 2, 4].iter().map(|l| format!("LAY_{l}")));
    names.push("RX_conv".into());
    names.push("RX_neural".into());
    names.extend((0..4).map(|r| format!("RETX_{r}")));
    debug_assert_eq!(names.len(), VOCAB_SIZE);
    names
}

/// Bijective mapping between token names and ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    ids: HashMap<String, Token>,
}

impl Vocabulary {
    /// The fixed vocabulary: 4 structural, 48 prompt-bin and 35 plan-value tokens.
    pub fn build() -> Self {
        let names = STANDARD_NAMES.clone();
        let ids = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), Token(i as u16)))
            .collect();
        Vocabulary { names, ids }
    }

    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn id(&self, name: &str) -> Option<Token> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, token: Token) -> Option<&str> {
        self.names.get(token.index()).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Parse a whitespace- or comma-separated list of token names.
    pub fn encode_names(&self, text: &str) -> Result<Vec<Token>, String> {
        text.split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| self.id(s).ok_or_else(|| format!("unknown token name `{s}`")))
            .collect()
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::build()
    }
}
