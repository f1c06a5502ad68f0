//! ZK and optimistic rollups over the simulated L1.
//!
//! Account balances live off-chain; the contract keeps only the state root.
//! Every batch publishes its operations as compressed calldata, so the whole
//! state can be rebuilt from L1 alone. ZK batches carry a validity
//! attestation and finalize on submission. Optimistic batches wait out a
//! challenge window in which anyone may replay them and prove fraud.

mod batch;
mod codec;
mod state;
mod system;

pub use batch::{build_batch, prove_batch, BatchStatus, RollupBatch, TrustedSetup, ValidityAttestation};
pub use codec::{
    decode_ops, encode_ops, encoded_len, pack_amount, unpack_amount, DecodedBatch, HEADER_BYTES, WITHDRAW_BYTES,
};
pub use state::{Account, AccountState, RollupOp, Transfer};
pub use system::{BatchRecord, ChallengeOutcome, Rollup, WithdrawalRecord};

use serde::{Deserialize, Serialize};

use crate::l1::{gas_fee, ChainParams, L1Error};
use crate::rational::{self, int, ratio, Rational};
use crate::types::{AccountId, Amount, WEI_PER_ETH, WEI_PER_GWEI};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RollupError {
    #[error(transparent)]
    L1(#[from] L1Error),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid transaction at index {index}: {reason}")]
    InvalidTx { index: usize, reason: String },
    #[error("unknown rollup account {0}")]
    UnknownAccount(AccountId),
    #[error("{account} holds {available} on the rollup, needs {needed}")]
    InsufficientRollupBalance { account: AccountId, needed: Amount, available: Amount },
    #[error("{authors} authors exceed the bundle limit of {max}")]
    TooManyAuthors { authors: usize, max: usize },
    #[error("fee payer {0} cannot cover the bundle fee")]
    FeePayerInsolvent(AccountId),
    #[error("batch has no operations")]
    EmptyBatch,
    #[error("batch of {bytes} bytes exceeds the {max}-byte calldata budget")]
    BatchTooLarge { bytes: u64, max: u64 },
    #[error("proof gas {proof_gas} does not fit in a {gas_limit}-gas block")]
    ProofExceedsGasLimit { proof_gas: u64, gas_limit: u64 },
    #[error("{0} did not take part in the trusted setup")]
    UntrustedProver(AccountId),
    #[error("claimed root does not follow from the batch data")]
    InvalidTransition,
    #[error("batch builds on a stale root")]
    StalePrevRoot,
    #[error("zk batch carries no validity proof")]
    MissingProof,
    #[error("validity proof does not verify")]
    InvalidProof,
    #[error("{0} has not staked a publisher bond")]
    NotStaked(AccountId),
    #[error("batch deposits do not match the contract's deposit queue")]
    PriorityMismatch,
    #[error("no batch {0}")]
    NoSuchBatch(u64),
    #[error("batch {0} cannot be challenged")]
    NotChallengeable(u64),
    #[error("challenge window closed")]
    WindowClosed,
    #[error("amount must be positive")]
    ZeroAmount,
    #[error("malformed batch data: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RollupMode {
    Zk,
    Optimistic,
}

impl RollupMode {
    /// Smallest transfer encoding the codec can produce.
    pub fn min_tx_size(self) -> u64 {
        match self {
            RollupMode::Zk => 12,
            RollupMode::Optimistic => 72,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollupParams {
    pub mode: RollupMode,
    pub tx_size_bytes: u64,
    /// On-chain verification gas per batch; zero for optimistic rollups.
    pub proof_gas: u64,
    #[serde(with = "rational::serde_exact")]
    pub challenge_period_s: Rational,
    #[serde(with = "rational::serde_exact")]
    pub batch_interval_s: Rational,
    pub max_authors: usize,
    /// Off-chain fee per transfer.
    pub transfer_fee: Amount,
    /// Off-chain fee per withdrawal.
    pub withdrawal_fee: Amount,
    pub deposit_gas: u64,
    pub l1_gas_price: u64,
    pub publisher_bond: Amount,
    pub challenge_bond: Amount,
}

impl RollupParams {
    /// 12-byte transfers, 1M gas proofs, a proof every 10 minutes, and the
    /// observed zkSync fees: 0.0001084 ETH for a 10-transfer bundle,
    /// 0.0029 ETH per withdrawal, 62,500 gas deposits at 27 gwei.
    pub fn zk() -> Self {
        RollupParams {
            mode: RollupMode::Zk,
            tx_size_bytes: 12,
            proof_gas: 1_000_000,
            challenge_period_s: int(0),
            batch_interval_s: int(600),
            max_authors: 10,
            transfer_fee: 10_840 * WEI_PER_GWEI,
            withdrawal_fee: 2_900_000 * WEI_PER_GWEI,
            deposit_gas: 62_500,
            l1_gas_price: 27 * WEI_PER_GWEI as u64,
            publisher_bond: 10 * WEI_PER_ETH,
            challenge_bond: WEI_PER_ETH,
        }
    }

    /// Transfers six times the zk size, no proof, a one-week window.
    pub fn optimistic() -> Self {
        RollupParams {
            mode: RollupMode::Optimistic,
            tx_size_bytes: 72,
            proof_gas: 0,
            challenge_period_s: int(7 * 86_400),
            ..Self::zk()
        }
    }

    pub fn preset(mode: RollupMode) -> Self {
        match mode {
            RollupMode::Zk => Self::zk(),
            RollupMode::Optimistic => Self::optimistic(),
        }
    }

    pub fn validate(&self) -> Result<(), RollupError> {
        let bad = |m: &str| Err(RollupError::InvalidParams(m.to_string()));
        if self.tx_size_bytes < self.mode.min_tx_size() {
            return bad("tx_size_bytes below the mode's encoding size");
        }
        if self.mode == RollupMode::Optimistic && !rational::is_positive(&self.challenge_period_s) {
            return bad("optimistic rollups need a positive challenge period");
        }
        if self.mode == RollupMode::Optimistic && self.proof_gas != 0 {
            return bad("optimistic rollups carry no proof");
        }
        if !rational::is_positive(&self.batch_interval_s) {
            return bad("batch_interval_s must be positive");
        }
        if self.max_authors == 0 {
            return bad("max_authors must be positive");
        }
        Ok(())
    }

    /// How long a withdrawal waits for its batch to finalize, at most.
    pub fn withdrawal_latency(&self) -> Rational {
        match self.mode {
            RollupMode::Zk => self.batch_interval_s,
            RollupMode::Optimistic => self.challenge_period_s,
        }
    }

    pub fn deposit_fee(&self) -> Amount {
        gas_fee(self.deposit_gas, self.l1_gas_price)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RollupThroughput {
    #[serde(with = "rational::serde_exact")]
    pub block_bytes: Rational,
    #[serde(with = "rational::serde_exact")]
    pub tx_per_block: Rational,
    #[serde(with = "rational::serde_exact")]
    pub tps: Rational,
}

/// Throughput when a whole L1 block is rollup calldata:
/// `(gas_limit - proof_gas) / gas_per_byte / tx_size / block_time`.
pub fn rollup_throughput(l1: &ChainParams, params: &RollupParams) -> Result<RollupThroughput, RollupError> {
    l1.validate()?;
    if params.tx_size_bytes == 0 {
        return Err(RollupError::InvalidParams("tx_size_bytes must be positive".into()));
    }
    if params.proof_gas >= l1.gas_limit_per_block {
        return Err(RollupError::ProofExceedsGasLimit {
            proof_gas: params.proof_gas,
            gas_limit: l1.gas_limit_per_block,
        });
    }
    let block_bytes = ratio((l1.gas_limit_per_block - params.proof_gas) as i128, l1.gas_per_byte as i128);
    let tx_per_block = block_bytes / int(params.tx_size_bytes as i128);
    let tps = tx_per_block / l1.avg_block_time();
    Ok(RollupThroughput { block_bytes, tx_per_block, tps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FeeSplit {
    pub per_tx: Amount,
    /// Kept by the publisher.
    pub remainder: Amount,
}

/// Splits the L1 cost of a batch evenly over its transactions.
pub fn batch_fee_split(l1_batch_cost: Amount, n_txs: usize) -> Result<FeeSplit, RollupError> {
    if n_txs == 0 {
        return Err(RollupError::EmptyBatch);
    }
    let n = n_txs as Amount;
    Ok(FeeSplit { per_tx: l1_batch_cost / n, remainder: l1_batch_cost % n })
}
