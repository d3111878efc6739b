use std::fmt;

use serde::{Deserialize, Serialize};

use super::vocab::PlanField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modulation {
    #[serde(rename = "BPSK")]
    Bpsk,
    #[serde(rename = "QPSK")]
    Qpsk,
    #[serde(rename = "QAM16")]
    Qam16,
    #[serde(rename = "QAM64")]
    Qam64,
    #[serde(rename = "QAM256")]
    Qam256,
}

impl Modulation {
    pub const ALL: [Modulation; 5] = [
        Modulation::Bpsk,
        Modulation::Qpsk,
        Modulation::Qam16,
        Modulation::Qam64,
        Modulation::Qam256,
    ];

    pub fn bits_per_symbol(self) -> u32 {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
            Modulation::Qam64 => 6,
            Modulation::Qam256 => 8,
        }
    }

    /// Constellation size `M = 2^bps`.
    pub fn order(self) -> f64 {
        f64::from(1u32 << self.bits_per_symbol())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CodeRate {
    #[serde(rename = "1/3")]
    OneThird,
    #[serde(rename = "1/2")]
    OneHalf,
    #[serde(rename = "2/3")]
    TwoThirds,
    #[serde(rename = "3/4")]
    ThreeQuarters,
    #[serde(rename = "5/6")]
    FiveSixths,
}

impl CodeRate {
    pub const ALL: [CodeRate; 5] = [
        CodeRate::OneThird,
        CodeRate::OneHalf,
        CodeRate::TwoThirds,
        CodeRate::ThreeQuarters,
        CodeRate::FiveSixths,
    ];

    pub fn value(self) -> f64 {
        match self {
            CodeRate::OneThird => 1.0 / 3.0,
            CodeRate::OneHalf => 0.5,
            CodeRate::TwoThirds => 2.0 / 3.0,
            CodeRate::ThreeQuarters => 0.75,
            CodeRate::FiveSixths => 5.0 / 6.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Receiver {
    Conventional,
    Neural,
}

impl Receiver {
    pub const ALL: [Receiver; 2] = [Receiver::Conventional, Receiver::Neural];
}

pub const PRB_VALUES: [u32; 16] = [4, 8, 12, 16, 20, 24, 28, 32, 36, 40, 44, 48, 52, 56, 60, 64];
pub const LAYER_VALUES: [u32; 3] = [1, 2, 4];
pub const RETX_VALUES: [u32; 4] = [0, 1, 2, 3];

/// Number of distinct plans: 5 * 5 * 16 * 3 * 2 * 4.
pub const PLAN_SPACE: usize = 9600;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("{field} value {value} is not in its domain")]
    OutOfDomain { field: PlanField, value: u32 },
    #[error("plan index {0} out of range")]
    IndexOutOfRange(usize),
}

/// A complete air-interface configuration.
///
/// Fields are private so a value of this type is always inside the
/// enumerable plan space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawPlan", into = "RawPlan")]
pub struct OrchestrationPlan {
    modulation: Modulation,
    code_rate: CodeRate,
    n_prb: u32,
    layers: u32,
    receiver: Receiver,
    n_retx: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    modulation: Modulation,
    code_rate: CodeRate,
    n_prb: u32,
    layers: u32,
    receiver: Receiver,
    n_retx: u32,
}

impl TryFrom<RawPlan> for OrchestrationPlan {
    type Error = PlanError;

    fn try_from(r: RawPlan) -> Result<Self, Self::Error> {
        OrchestrationPlan::new(r.modulation, r.code_rate, r.n_prb, r.layers, r.receiver, r.n_retx)
    }
}

impl From<OrchestrationPlan> for RawPlan {
    fn from(p: OrchestrationPlan) -> Self {
        RawPlan {
            modulation: p.modulation,
            code_rate: p.code_rate,
            n_prb: p.n_prb,
            layers: p.layers,
            receiver: p.receiver,
            n_retx: p.n_retx,
        }
    }
}

fn position_of(values: &[u32], v: u32, field: PlanField) -> Result<usize, PlanError> {
    values
        .iter()
        .position(|&x| x == v)
        .ok_or(PlanError::OutOfDomain { field, value: v })
}

impl OrchestrationPlan {
    pub fn new(
        modulation: Modulation,
        code_rate: CodeRate,
        n_prb: u32,
        layers: u32,
        receiver: Receiver,
        n_retx: u32,
    ) -> Result<Self, PlanError> {
        position_of(&PRB_VALUES, n_prb, PlanField::Prb)?;
        position_of(&LAYER_VALUES, layers, PlanField::Layers)?;
        position_of(&RETX_VALUES, n_retx, PlanField::Retx)?;
        Ok(OrchestrationPlan {
            modulation,
            code_rate,
            n_prb,
            layers,
            receiver,
            n_retx,
        })
    }

    /// Build a plan from per-field domain indices in grammar order.
    pub fn from_field_indices(idx: [usize; 6]) -> Option<Self> {
        Some(OrchestrationPlan {
            modulation: *Modulation::ALL.get(idx[0])?,
            code_rate: *CodeRate::ALL.get(idx[1])?,
            n_prb: *PRB_VALUES.get(idx[2])?,
            layers: *LAYER_VALUES.get(idx[3])?,
            receiver: *Receiver::ALL.get(idx[4])?,
            n_retx: *RETX_VALUES.get(idx[5])?,
        })
    }

    pub fn field_indices(&self) -> [usize; 6] {
        [
            self.modulation as usize,
            self.code_rate as usize,
            PRB_VALUES.iter().position(|&x| x == self.n_prb).unwrap(),
            LAYER_VALUES.iter().position(|&x| x == self.layers).unwrap(),
            self.receiver as usize,
            self.n_retx as usize,
        ]
    }

    /// Position in the lexicographic enumeration (modulation slowest, retx fastest).
    pub fn index(&self) -> usize {
        self.field_indices()
            .iter()
            .zip(PlanField::ORDER)
            .fold(0, |acc, (&i, f)| acc * f.cardinality() + i)
    }

    pub fn from_index(index: usize) -> Result<Self, PlanError> {
        if index >= PLAN_SPACE {
            return Err(PlanError::IndexOutOfRange(index));
        }
        let mut idx = [0usize; 6];
        let mut rest = index;
        for (slot, field) in PlanField::ORDER.iter().enumerate().rev() {
            idx[slot] = rest % field.cardinality();
            rest /= field.cardinality();
        }
        Ok(Self::from_field_indices(idx).expect("indices in range"))
    }

    pub fn modulation(&self) -> Modulation {
        self.modulation
    }
    pub fn code_rate(&self) -> CodeRate {
        self.code_rate
    }
    pub fn n_prb(&self) -> u32 {
        self.n_prb
    }
    pub fn layers(&self) -> u32 {
        self.layers
    }
    pub fn receiver(&self) -> Receiver {
        self.receiver
    }
    pub fn n_retx(&self) -> u32 {
        self.n_retx
    }

    pub fn with_n_prb(self, n_prb: u32) -> Result<Self, PlanError> {
        Self::new(self.modulation, self.code_rate, n_prb, self.layers, self.receiver, self.n_retx)
    }
    pub fn with_layers(self, layers: u32) -> Result<Self, PlanError> {
        Self::new(self.modulation, self.code_rate, self.n_prb, layers, self.receiver, self.n_retx)
    }
    pub fn with_receiver(self, receiver: Receiver) -> Self {
        OrchestrationPlan { receiver, ..self }
    }
    pub fn with_n_retx(self, n_retx: u32) -> Result<Self, PlanError> {
        Self::new(self.modulation, self.code_rate, self.n_prb, self.layers, self.receiver, n_retx)
    }
}

impl fmt::Display for OrchestrationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let toks = super::tokenize_plan(self);
        for (i, t) in toks[..toks.len() - 1].iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// All plans in lexicographic field order.
pub fn enumerate_plans() -> impl ExactSizeIterator<Item = OrchestrationPlan> + Clone {
    (0..PLAN_SPACE).map(|i| OrchestrationPlan::from_index(i).expect("in range"))
}
