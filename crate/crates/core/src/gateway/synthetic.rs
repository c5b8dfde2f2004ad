//! Synthetic voter model: a deterministic offline provider whose per-turn
//! accuracy is dialed in, used to exercise the full pipeline and to check
//! the plurality-voting math against closed-form expectations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CallContext, CompletionRequest, GatewayError, Provider, ProviderKind};
use crate::corpus::ItemKey;
use crate::prompts::parse_summary_prompt;

/// What a synthetic voter answers when it is wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfuserMode {
    /// Every wrong voter gives the same fixed answer ("WRONG"), so wrong
    /// votes can form a winning bloc.
    Binary,
    /// Each turn gives its own wrong answer ("WRONG-<turn_id>"), so wrong
    /// votes never agree.
    Distinct,
}

/// Deterministic model of an ensemble of voters with known accuracy.
///
/// Whether turn t answers item k correctly is a fixed coin flip derived by
/// hashing (seed, t, k), so the whole prediction matrix is a pure function
/// of (model, corpus).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticVoterModel {
    pub per_turn_accuracy: BTreeMap<u8, f64>,
    pub confuser_mode: ConfuserMode,
    pub seed: u64,
}

impl SyntheticVoterModel {
    pub fn new(
        per_turn_accuracy: BTreeMap<u8, f64>,
        confuser_mode: ConfuserMode,
        seed: u64,
    ) -> Result<SyntheticVoterModel, GatewayError> {
        for (turn_id, p) in &per_turn_accuracy {
            if !(0.0..=1.0).contains(p) {
                return Err(GatewayError::InvalidModel(format!(
                    "per-turn accuracy for turn {turn_id} is {p}, expected [0, 1]"
                )));
            }
        }
        Ok(SyntheticVoterModel {
            per_turn_accuracy,
            confuser_mode,
            seed,
        })
    }

    /// Same accuracy `p` for every listed turn.
    pub fn uniform(
        turn_ids: impl IntoIterator<Item = u8>,
        p: f64,
        confuser_mode: ConfuserMode,
        seed: u64,
    ) -> Result<SyntheticVoterModel, GatewayError> {
        Self::new(
            turn_ids.into_iter().map(|t| (t, p)).collect(),
            confuser_mode,
            seed,
        )
    }

    /// Uniform coin in [0, 1) for (seed, turn, item): the first 8 bytes of
    /// sha256 over the length-prefixed fields, scaled by 2^-64.
    fn coin(&self, turn_id: u8, item: &ItemKey) -> f64 {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_be_bytes());
        hasher.update([turn_id]);
        for field in [item.note_id(), item.medication()] {
            hasher.update((field.len() as u64).to_be_bytes());
            hasher.update(field.as_bytes());
        }
        let digest = hasher.finalize();
        let bits = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
        bits as f64 / 2f64.powi(64)
    }

    /// The voter's answer: the truth with probability p_c, otherwise the
    /// confuser. Deterministic in (seed, turn_id, item).
    pub fn synth_answer(
        &self,
        turn_id: u8,
        item: &ItemKey,
        truth: &str,
    ) -> Result<String, GatewayError> {
        let p = *self
            .per_turn_accuracy
            .get(&turn_id)
            .ok_or(GatewayError::UnknownTurn(turn_id))?;
        if self.coin(turn_id, item) < p {
            Ok(truth.to_string())
        } else {
            Ok(match self.confuser_mode {
                ConfuserMode::Binary => "WRONG".to_string(),
                ConfuserMode::Distinct => format!("WRONG-{turn_id}"),
            })
        }
    }
}

/// Provider wrapper: answers prediction calls via the voter model and
/// summarization calls by truncating the note to the requested length.
pub struct SyntheticProvider {
    model: SyntheticVoterModel,
}

impl SyntheticProvider {
    pub fn new(model: SyntheticVoterModel) -> SyntheticProvider {
        SyntheticProvider { model }
    }
}

impl Provider for SyntheticProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Synthetic
    }

    fn complete(
        &self,
        request: &CompletionRequest,
        context: &CallContext,
    ) -> Result<String, GatewayError> {
        match context {
            CallContext::Predict {
                turn_id,
                item,
                truth,
            } => self.model.synth_answer(*turn_id, item, truth),
            CallContext::Summarize => {
                let (target, note) = parse_summary_prompt(&request.prompt).ok_or_else(|| {
                    GatewayError::Protocol(
                        "summarize context but prompt is not a summarization prompt".to_string(),
                    )
                })?;
                Ok(note.chars().take(target).collect())
            }
            CallContext::Plain => Ok("synthetic-response".to_string()),
        }
    }

    // A pure function; caching would only add I/O.
    fn wants_cache(&self) -> bool {
        false
    }
}
