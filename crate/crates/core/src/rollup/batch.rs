use std::collections::BTreeMap;

use serde::Serialize;

use crate::hash::{domain, sign, Hash256, Secret};
use crate::types::AccountId;

use super::codec::{decode_ops, encode_ops};
use super::state::{AccountState, RollupOp};
use super::{RollupError, RollupMode, RollupParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStatus {
    Pending,
    Finalized,
    Reverted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidityAttestation {
    pub prev_root: Hash256,
    pub new_root: Hash256,
    pub attestor: AccountId,
    pub tag: Hash256,
    /// Simulated proving effort; grows with the batch, unlike verification.
    pub proving_work: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RollupBatch {
    pub prev_root: Hash256,
    pub new_root: Hash256,
    pub ops: Vec<RollupOp>,
    pub publisher: AccountId,
    pub proof: Option<ValidityAttestation>,
    pub status: BatchStatus,
    /// Calldata posted on L1.
    #[serde(skip)]
    pub data: Vec<u8>,
}

impl RollupBatch {
    pub fn digest(&self) -> Hash256 {
        Hash256::tagged(domain::BLOCK, &[b"rollup-batch", &self.data])
    }

    pub fn deposits(&self) -> impl Iterator<Item = &RollupOp> {
        self.ops.iter().filter(|op| matches!(op, RollupOp::Deposit { .. }))
    }

    pub fn transfer_count(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, RollupOp::Transfer(_))).count()
    }

    /// Transfer payload bytes, `transfers * tx_size_bytes`.
    pub fn compressed_bytes(&self, params: &RollupParams) -> u64 {
        self.transfer_count() as u64 * params.tx_size_bytes
    }

    /// Replaces the claimed post-state root, re-encoding the header.
    pub fn with_claimed_root(mut self, root: Hash256) -> Self {
        self.new_root = root;
        self.data[32..64].copy_from_slice(&root.0);
        self
    }
}

/// Applies `ops` to `state` in order and packages the result; also returns
/// the post-state.
pub fn build_batch(
    state: &AccountState,
    ops: Vec<RollupOp>,
    params: &RollupParams,
    publisher: &AccountId,
) -> Result<(RollupBatch, AccountState), RollupError> {
    let mut post = state.clone();
    post.apply_all(&ops)?;
    let new_root = post.root();
    let data = encode_ops(params, state, &new_root, &ops)?;
    let batch = RollupBatch {
        prev_root: state.root(),
        new_root,
        ops,
        publisher: publisher.clone(),
        proof: None,
        status: BatchStatus::Pending,
        data,
    };
    Ok((batch, post))
}

/// Prover keys fixed once per rollup instance. Only these keys can produce
/// attestations the contract accepts.
#[derive(Debug, Clone, Default)]
pub struct TrustedSetup {
    keys: BTreeMap<AccountId, Secret>,
}

impl TrustedSetup {
    pub fn new(provers: impl IntoIterator<Item = (AccountId, Secret)>) -> Self {
        TrustedSetup { keys: provers.into_iter().collect() }
    }

    pub fn is_prover(&self, id: &AccountId) -> bool {
        self.keys.contains_key(id)
    }

    fn message(prev: &Hash256, new: &Hash256, digest: &Hash256) -> Hash256 {
        Hash256::tagged(domain::ATTESTATION, &[&prev.0, &new.0, &digest.0])
    }

    /// Constant-time check of an attestation against a batch.
    pub fn verify(&self, batch: &RollupBatch, att: &ValidityAttestation) -> bool {
        let Some(key) = self.keys.get(&att.attestor) else { return false };
        att.prev_root == batch.prev_root
            && att.new_root == batch.new_root
            && att.tag == sign(key, &Self::message(&batch.prev_root, &batch.new_root, &batch.digest()).0)
    }

    /// Gas the contract spends on [`TrustedSetup::verify`].
    pub fn verification_gas(params: &RollupParams) -> u64 {
        params.proof_gas
    }
}

/// Re-executes the batch data on `prev` and attests to the transition if
/// the claimed root is the one the data produces.
pub fn prove_batch(
    batch: &RollupBatch,
    prev: &AccountState,
    deposits: &[(AccountId, crate::types::Amount)],
    params: &RollupParams,
    setup: &TrustedSetup,
    prover: &AccountId,
) -> Result<ValidityAttestation, RollupError> {
    if params.mode != RollupMode::Zk {
        return Err(RollupError::InvalidParams("only zk batches are proved".into()));
    }
    let key = setup.keys.get(prover).ok_or_else(|| RollupError::UntrustedProver(prover.clone()))?;
    let replay = decode_ops(params, &batch.data, prev, deposits).map_err(|_| RollupError::InvalidTransition)?;
    if replay.prev_root != prev.root() || replay.post.root() != batch.new_root || replay.new_root != batch.new_root {
        return Err(RollupError::InvalidTransition);
    }
    let tag = sign(key, &TrustedSetup::message(&batch.prev_root, &batch.new_root, &batch.digest()).0);
    Ok(ValidityAttestation {
        prev_root: batch.prev_root,
        new_root: batch.new_root,
        attestor: prover.clone(),
        tag,
        proving_work: params.proof_gas * (batch.ops.len() as u64).max(1),
    })
}
