//! Orchestration plan grammar.
//!
//! A plan is exactly seven tokens: one value token per field in the fixed
//! order `MOD CR PRB LAY RX RETX`, then `EOS`. [`parse_plan`] is total over
//! arbitrary token sequences and accepts precisely the image of
//! [`tokenize_plan`].

mod plan;
mod vocab;

pub use plan::{
    enumerate_plans, CodeRate, Modulation, OrchestrationPlan, PlanError, Receiver, LAYER_VALUES,
    PLAN_SPACE, PRB_VALUES, RETX_VALUES,
};
pub use vocab::{classify, PlanField, PromptSlot, Token, TokenClass, Vocabulary, VOCAB_SIZE};

/// Tokens in a complete plan, including the terminating `EOS`.
pub const PLAN_LEN: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("missing field `{field}` at position {position}")]
    MissingField { field: PlanField, position: usize },
    #[error("out-of-order field at position {position}: expected `{expected}`, found `{found}`")]
    OutOfOrderField {
        expected: PlanField,
        found: PlanField,
        position: usize,
    },
    #[error("wrong token class at position {position}: `{token}` cannot fill `{expected}`")]
    WrongTokenClass {
        expected: PlanField,
        token: Token,
        position: usize,
    },
    #[error("missing EOS at position {position}")]
    MissingEos { position: usize },
    #[error("{count} trailing token(s) after EOS")]
    TrailingTokens { count: usize },
}

pub fn tokenize_plan(plan: &OrchestrationPlan) -> Vec<Token> {
    let mut out: Vec<Token> = plan
        .field_indices()
        .iter()
        .zip(PlanField::ORDER)
        .map(|(&v, field)| field.token(v))
        .collect();
    out.push(Token::EOS);
    out
}

pub fn parse_plan(tokens: &[Token]) -> Result<OrchestrationPlan, ParseError> {
    let mut idx = [0usize; 6];
    for (position, expected) in PlanField::ORDER.into_iter().enumerate() {
        let token = match tokens.get(position) {
            None | Some(&Token::EOS) => return Err(ParseError::MissingField { field: expected, position }),
            Some(&t) => t,
        };
        match classify(token) {
            Some(TokenClass::Field(found, value)) if found == expected => idx[position] = value,
            Some(TokenClass::Field(found, _)) => {
                return Err(ParseError::OutOfOrderField {
                    expected,
                    found,
                    position,
                })
            }
            _ => {
                return Err(ParseError::WrongTokenClass {
                    expected,
                    token,
                    position,
                })
            }
        }
    }
    let eos_at = PLAN_LEN - 1;
    if tokens.get(eos_at) != Some(&Token::EOS) {
        return Err(ParseError::MissingEos { position: eos_at });
    }
    if tokens.len() > PLAN_LEN {
        return Err(ParseError::TrailingTokens {
            count: tokens.len() - PLAN_LEN,
        });
    }
    Ok(OrchestrationPlan::from_field_indices(idx).expect("classified indices are in range"))
}
