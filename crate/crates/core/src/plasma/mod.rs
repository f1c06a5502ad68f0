//! Plasma child chain over the simulated L1: UTXO ledger, root commitments,
//! three-step deposits, the bonded exit game, fraud proofs against invalid
//! roots, fast withdrawals through liquidity providers and mass exits after
//! block withholding.

mod chain;
mod tx;

pub use chain::{
    CongestionReport, ExitClaim, ExitId, ExitRequest, ExitStatus, FastWithdrawal, FraudOutcome, LiquidityProvider,
    Meit, MeitId, MeitStatus, PlasmaBlock, PlasmaChain, PlasmaCommitment, SpendProof, SwapId, SwapStatus,
};
pub use tx::{ChildTx, Outpoint, PlasmaTx, TxInput, TxOutput, Utxo, UtxoSet};

use serde::{Deserialize, Serialize};

use crate::l1::{gas_fee, L1Error};
use crate::rational::{self, int, Rational};
use crate::types::{AccountId, Amount, WEI_PER_GWEI};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlasmaError {
    #[error(transparent)]
    L1(#[from] L1Error),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("amount must be positive")]
    ZeroAmount,
    #[error("output {0:?} already spent")]
    DoubleSpend(Outpoint),
    #[error("output {0:?} is not in the unspent set")]
    UnknownOutput(Outpoint),
    #[error("deposit {0} not acknowledged yet")]
    DepositNotAcknowledged(u64),
    #[error("deposit {0} not yet committed to the child chain")]
    DepositNotCommitted(u64),
    #[error("unknown deposit {0}")]
    UnknownDeposit(u64),
    #[error("input {0:?} not authorized by its owner")]
    BadAuthorization(Outpoint),
    #[error("inputs {inputs} do not cover outputs plus fee {outputs}")]
    ValueMismatch { inputs: Amount, outputs: Amount },
    #[error("outputs must be positive")]
    ZeroOutput,
    #[error("output {0:?} is locked by a pending exit or swap")]
    OutputLocked(Outpoint),
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("block {0} data withheld")]
    Withheld(u64),
    #[error("unknown block {0}")]
    UnknownBlock(u64),
    #[error("inclusion proof does not verify against a valid commitment")]
    BadProof,
    #[error("{0} does not own the output")]
    NotOwner(AccountId),
    #[error("exits must claim the whole output of {expected}, got {claimed}")]
    PartialExit { expected: Amount, claimed: Amount },
    #[error("bond unavailable: {0}")]
    BondUnavailable(L1Error),
    #[error("an exit for {0:?} is already pending")]
    ExitAlreadyPending(Outpoint),
    #[error("unknown exit {0}")]
    UnknownExit(u64),
    #[error("challenge window closed")]
    WindowClosed,
    #[error("challenge proof invalid")]
    InvalidProof,
    #[error("challenge period not elapsed; {remaining_s} s remain")]
    NotElapsed { remaining_s: String },
    #[error("exit was cancelled")]
    AlreadyCancelled,
    #[error("exit already finalized")]
    AlreadyFinalized,
    #[error("transaction is valid; nothing to prove")]
    NotFraudulent,
    #[error("block {0} already invalidated")]
    AlreadyInvalidated(u64),
    #[error("liquidity provider refused")]
    LpRefused,
    #[error("liquidity provider cannot pay {needed}")]
    LpInsolvent { needed: Amount },
    #[error("unknown liquidity provider {0}")]
    UnknownLp(AccountId),
    #[error("unknown swap {0}")]
    UnknownSwap(u64),
    #[error("swap is no longer open")]
    SwapClosed,
    #[error("too late to pay before the swap deadline")]
    SwapDeadlineTooClose,
    #[error("no block withholding observed")]
    NoWithholding,
    #[error("insufficient signatures for mass exit")]
    InsufficientSignatures,
    #[error("unknown mass exit {0}")]
    UnknownMeit(u64),
    #[error("mass exit is not pending")]
    MeitNotPending,
    #[error("bit {0} out of range or already cancelled")]
    BadBit(usize),
    #[error("child chain halted by a mass exit")]
    ChainHalted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorMode {
    #[default]
    Honest,
    /// Produce blocks but neither publish their data nor commit roots.
    Withhold,
    /// Commit roots of blocks that carry an injected unbacked mint.
    InvalidRoot,
}

/// Consensus is abstracted to a block interval and a behavior switch.
/// Gas figures are L1 gas except `transfer_gas` and `child_gas_limit`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlasmaConfig {
    #[serde(with = "rational::serde_exact")]
    pub child_block_interval_s: Rational,
    pub child_gas_limit: u64,
    pub transfer_gas: u64,
    pub child_gas_price: u64,
    pub l1_gas_price: u64,
    pub deposit_gas: u64,
    pub exit_gas: u64,
    pub commit_gas: u64,
    pub commit_bytes: u64,
    pub challenge_gas: u64,
    pub finalize_gas: u64,
    #[serde(with = "rational::serde_exact")]
    pub challenge_period_s: Rational,
    #[serde(with = "rational::serde_exact")]
    pub meit_period_s: Rational,
    pub exit_bond_percent: u32,
    pub exit_bond_floor: Amount,
    pub meit_bond: Amount,
    pub meit_fee_per_user: Amount,
    pub meit_min_signatures: usize,
    pub operator_stake: Amount,
    pub invalid_mint_amount: Amount,
    #[serde(with = "rational::serde_exact")]
    pub swap_timeout_s: Rational,
    pub lp_confirmations: u64,
}

pub const DAY_S: i128 = 86_400;

impl Default for PlasmaConfig {
    fn default() -> Self {
        PlasmaConfig {
            child_block_interval_s: rational::ratio(21, 10),
            child_gas_limit: 20_000_000,
            transfer_gas: 21_000,
            child_gas_price: 3 * WEI_PER_GWEI as u64,
            l1_gas_price: 40 * WEI_PER_GWEI as u64,
            deposit_gas: 77_000,
            exit_gas: 245_000,
            commit_gas: 100_000,
            commit_bytes: 200,
            challenge_gas: 100_000,
            finalize_gas: 21_000,
            challenge_period_s: int(7 * DAY_S),
            meit_period_s: int(21 * DAY_S),
            exit_bond_percent: 10,
            exit_bond_floor: 1,
            meit_bond: 10 * crate::types::WEI_PER_ETH,
            meit_fee_per_user: 0,
            meit_min_signatures: 1,
            operator_stake: 100 * crate::types::WEI_PER_ETH,
            invalid_mint_amount: 1_000 * crate::types::WEI_PER_ETH,
            swap_timeout_s: int(3_600),
            lp_confirmations: 12,
        }
    }
}

impl PlasmaConfig {
    pub fn validate(&self) -> Result<(), PlasmaError> {
        let bad = |m: &str| Err(PlasmaError::InvalidParams(m.to_string()));
        if !rational::is_positive(&self.child_block_interval_s) {
            return bad("child_block_interval_s must be positive");
        }
        if self.transfer_gas == 0 || self.child_gas_limit < self.transfer_gas {
            return bad("child block must fit at least one transfer");
        }
        if !rational::is_positive(&self.challenge_period_s) || !rational::is_positive(&self.meit_period_s) {
            return bad("challenge windows must be positive");
        }
        if self.commit_bytes == 0 {
            return bad("commit_bytes must be positive");
        }
        Ok(())
    }

    /// Child-chain fee of one simple transfer.
    pub fn transfer_fee(&self) -> Amount {
        gas_fee(self.transfer_gas, self.child_gas_price)
    }

    pub fn deposit_fee(&self) -> Amount {
        gas_fee(self.deposit_gas, self.l1_gas_price)
    }

    pub fn withdraw_fee(&self) -> Amount {
        gas_fee(self.exit_gas, self.l1_gas_price)
    }

    pub fn exit_bond(&self, amount: Amount) -> Amount {
        (amount * self.exit_bond_percent as Amount / 100).max(self.exit_bond_floor)
    }

    pub fn txs_per_block(&self) -> usize {
        (self.child_gas_limit / self.transfer_gas) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlasmaThroughput {
    #[serde(with = "rational::serde_exact")]
    pub avg_tx_per_block: Rational,
    #[serde(with = "rational::serde_exact")]
    pub avg_gas_per_tx: Rational,
    #[serde(with = "rational::serde_exact")]
    pub tps: Rational,
}

/// Throughput of a child chain whose transactions cost what an average L1
/// transaction costs. The L1 average tx count per block is taken as a whole
/// number of transactions.
pub fn plasma_throughput_estimate(
    l2_gas_limit: u64,
    l1_gas_limit: u64,
    l1_txs_per_day: u64,
    l1_blocks_per_day: u64,
    l2_block_time_s: Rational,
) -> Result<PlasmaThroughput, PlasmaError> {
    if l2_gas_limit == 0 || l1_gas_limit == 0 || l1_txs_per_day == 0 || l1_blocks_per_day == 0 {
        return Err(PlasmaError::InvalidParams("all inputs must be positive".into()));
    }
    if !rational::is_positive(&l2_block_time_s) {
        return Err(PlasmaError::InvalidParams("l2_block_time_s must be positive".into()));
    }
    let per_block = l1_txs_per_day / l1_blocks_per_day;
    if per_block == 0 {
        return Err(PlasmaError::InvalidParams("fewer than one tx per L1 block".into()));
    }
    let avg_tx_per_block = int(per_block as i128);
    let avg_gas_per_tx = int(l1_gas_limit as i128) / avg_tx_per_block;
    let tps = int(l2_gas_limit as i128) / avg_gas_per_tx / l2_block_time_s;
    Ok(PlasmaThroughput { avg_tx_per_block, avg_gas_per_tx, tps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::format_units;

    #[test]
    fn polygon_estimate() {
        let t = plasma_throughput_estimate(20_000_000, 12_500_000, 1_500_000, 6_500, rational::ratio(21, 10)).unwrap();
        assert_eq!(t.avg_tx_per_block, int(230));
        assert!((rational::to_f64(&t.avg_gas_per_tx) - 54_350.0).abs() <= 100.0);
        assert!((rational::to_f64(&t.tps) - 175.0).abs() <= 3.0);
    }

    #[test]
    fn identity_configuration_gives_l1_tps() {
        // 100 txs per block, 13 s blocks: L1 does 100/13 tx/s.
        let t = plasma_throughput_estimate(1_000_000, 1_000_000, 100 * 6_000, 6_000, int(13)).unwrap();
        assert_eq!(t.tps, rational::ratio(100, 13));
    }

    #[test]
    fn linear_in_l2_gas() {
        let a = plasma_throughput_estimate(20_000_000, 12_500_000, 1_500_000, 6_500, rational::ratio(21, 10)).unwrap();
        let b = plasma_throughput_estimate(40_000_000, 12_500_000, 1_500_000, 6_500, rational::ratio(21, 10)).unwrap();
        assert_eq!(b.tps, a.tps * int(2));
    }

    #[test]
    fn fee_figures() {
        let c = PlasmaConfig::default();
        assert_eq!(format_units(c.transfer_fee(), 18), "0.000063");
        assert_eq!(format_units(c.deposit_fee(), 18), "0.00308");
        assert_eq!(format_units(c.withdraw_fee(), 18), "0.0098");
        assert_eq!(c.exit_bond(5), 1);
        assert_eq!(c.exit_bond(1_000), 100);
    }

    #[test]
    fn rejects_zero_inputs() {
        assert!(plasma_throughput_estimate(0, 1, 1, 1, int(1)).is_err());
        assert!(plasma_throughput_estimate(1, 1, 1, 1, int(0)).is_err());
    }
}
