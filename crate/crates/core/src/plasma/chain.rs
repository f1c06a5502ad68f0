use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_traits::Zero;
use serde::Serialize;
use serde_json::json;

use crate::events::EventLog;
use crate::hash::{sign, Hash256, Secret};
use crate::l1::{ChainParams, L1Chain, L1Error, TxKind};
use crate::merkle::{merkle_prove, merkle_root_or_empty, MerkleProof};
use crate::rational::{self, Rational};
use crate::rng::{self, SimRng};
use crate::types::{AccountId, Amount, WEI_PER_ETH};

use super::tx::{ChildTx, Outpoint, PlasmaTx, TxOutput, Utxo, UtxoSet};
use super::{OperatorMode, PlasmaConfig, PlasmaError};

/// Bytes of an L1 contract call other than commitments and mass exits.
const CALL_BYTES: u64 = 200;
/// Gas money the operator starts with besides its stake.
const OPERATOR_GAS_BUDGET: Amount = 1_000 * WEI_PER_ETH;

pub type ExitId = u64;
pub type SwapId = u64;
pub type MeitId = u64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlasmaBlock {
    pub height: u64,
    #[serde(with = "rational::serde_exact")]
    pub timestamp_s: Rational,
    pub txs: Vec<ChildTx>,
    pub tx_root: Hash256,
    pub committed: bool,
    pub withheld: bool,
    pub invalidated: bool,
    /// Fees of the valid transfers in the block.
    pub fees: Amount,
}

impl PlasmaBlock {
    pub fn tx_ids(&self) -> Vec<Hash256> {
        self.txs.iter().map(ChildTx::id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlasmaCommitment {
    pub height: u64,
    pub root: Hash256,
    pub l1_tx: Hash256,
    pub invalidated: bool,
}

/// What an exiter presents: the creating tx, where it was included, and
/// which of its outputs is claimed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExitClaim {
    pub height: u64,
    pub tx: ChildTx,
    pub output_index: u32,
    pub amount: Amount,
    pub proof: MerkleProof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Pending,
    /// Disproved by a spend proof; the bond went to the challenger.
    Challenged,
    Finalized,
    /// Voided because its block was rolled back; the bond was returned.
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExitRequest {
    pub id: ExitId,
    pub exiter: AccountId,
    pub utxo: Utxo,
    pub height: u64,
    pub bond: Amount,
    #[serde(with = "rational::serde_exact")]
    pub started_at: Rational,
    pub status: ExitStatus,
    pub challenger: Option<AccountId>,
}

/// A committed transfer consuming an outpoint, with its inclusion proof.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpendProof {
    pub height: u64,
    pub tx: PlasmaTx,
    pub input_index: usize,
    pub proof: MerkleProof,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FraudOutcome {
    pub height: u64,
    pub rolled_back: Vec<u64>,
    pub requeued: usize,
    pub slashed: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LiquidityProvider {
    pub account: AccountId,
    pub validates_chain: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapStatus {
    Locked,
    /// LP paid on L1 and received the child output.
    Completed,
    /// Timed out; the user kept the child output.
    Reclaimed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FastWithdrawal {
    pub id: SwapId,
    pub user: AccountId,
    pub lp: AccountId,
    pub outpoint: Outpoint,
    pub amount: Amount,
    pub lp_fee: Amount,
    /// Pre-signed by the user; submitted once the L1 payment is final.
    pub release: PlasmaTx,
    pub payment: Option<Hash256>,
    #[serde(with = "rational::serde_exact")]
    pub deadline: Rational,
    pub status: SwapStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeitStatus {
    Pending,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CongestionReport {
    pub baseline_mempool_depth: usize,
    pub peak_mempool_depth: usize,
    pub meit_l1_txs: usize,
    pub blocks_to_drain: u64,
    #[serde(with = "rational::serde_exact")]
    pub max_inclusion_delay_s: Rational,
}

/// A mass exit over a snapshot of the UTXO set. Bit `i` refers to the
/// `i`-th output of the snapshot in outpoint order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Meit {
    pub id: MeitId,
    pub exit_operator: AccountId,
    pub snapshot_height: u64,
    pub snapshot: Vec<Utxo>,
    pub bitmap: Vec<bool>,
    pub cancelled: Vec<bool>,
    pub bond: Amount,
    pub signatures: BTreeMap<AccountId, Hash256>,
    #[serde(with = "rational::serde_exact")]
    pub started_at: Rational,
    pub status: MeitStatus,
    pub l1_tx: Hash256,
    pub report: Option<CongestionReport>,
}

impl Meit {
    /// Dense little-endian bitset.
    pub fn bitmap_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bitmap.len().div_ceil(8)];
        for (i, bit) in self.bitmap.iter().enumerate() {
            if *bit {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn marked(&self) -> impl Iterator<Item = (usize, &Utxo)> {
        self.snapshot.iter().enumerate().filter(|(i, _)| self.bitmap[*i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct DepositRecord {
    owner: AccountId,
    amount: Amount,
    record: Hash256,
    record_height: Option<u64>,
    ack_height: Option<u64>,
    acked: bool,
    exited: bool,
}

/// A child chain, its operator, the root-chain contract and the L1 they
/// share, driven by one simulated clock.
pub struct PlasmaChain {
    config: PlasmaConfig,
    mode: OperatorMode,
    l1: L1Chain,
    now: Rational,
    rng: SimRng,
    events: EventLog,
    operator: AccountId,
    contract: AccountId,
    keys: BTreeMap<AccountId, Secret>,
    blocks: Vec<PlasmaBlock>,
    /// `snapshots[h]` is the state after block `h`; index 0 is genesis.
    snapshots: Vec<UtxoSet>,
    live: UtxoSet,
    spent: BTreeSet<Outpoint>,
    locked: BTreeSet<Outpoint>,
    queue: VecDeque<ChildTx>,
    deposits: BTreeMap<u64, DepositRecord>,
    commitments: BTreeMap<u64, PlasmaCommitment>,
    tx_location: BTreeMap<Hash256, (u64, usize)>,
    spend_location: BTreeMap<Outpoint, (u64, usize)>,
    exits: Vec<ExitRequest>,
    swaps: Vec<FastWithdrawal>,
    lps: BTreeMap<AccountId, LiquidityProvider>,
    meits: Vec<Meit>,
    halted: bool,
    stake: Amount,
    deposits_total: Amount,
    exited_total: Amount,
    fees_total: Amount,
}

impl PlasmaChain {
    pub fn new(config: PlasmaConfig, seed: u64) -> Result<Self, PlasmaError> {
        Self::with_l1(config, ChainParams::ethereum_2021(), seed)
    }

    pub fn with_l1(config: PlasmaConfig, l1_params: ChainParams, seed: u64) -> Result<Self, PlasmaError> {
        config.validate()?;
        let mut l1 = L1Chain::new(l1_params)?;
        let operator = AccountId::from("plasma:operator");
        let contract = AccountId::from("plasma:contract");
        l1.mint(&operator, config.operator_stake + OPERATOR_GAS_BUDGET);
        let mut chain = PlasmaChain {
            mode: OperatorMode::Honest,
            l1,
            now: Rational::zero(),
            rng: rng::seeded(seed),
            events: EventLog::new(),
            operator: operator.clone(),
            contract: contract.clone(),
            keys: BTreeMap::new(),
            blocks: Vec::new(),
            snapshots: vec![UtxoSet::new()],
            live: UtxoSet::new(),
            spent: BTreeSet::new(),
            locked: BTreeSet::new(),
            queue: VecDeque::new(),
            deposits: BTreeMap::new(),
            commitments: BTreeMap::new(),
            tx_location: BTreeMap::new(),
            spend_location: BTreeMap::new(),
            exits: Vec::new(),
            swaps: Vec::new(),
            lps: BTreeMap::new(),
            meits: Vec::new(),
            halted: false,
            stake: config.operator_stake,
            deposits_total: 0,
            exited_total: 0,
            fees_total: 0,
            config,
        };
        let stake = chain.stake;
        chain.l1_call(TxKind::PlasmaDeposit, &operator, &contract, stake, CALL_BYTES, chain.config.deposit_gas)?;
        chain.register_user(&operator);
        Ok(chain)
    }

    pub fn config(&self) -> &PlasmaConfig {
        &self.config
    }

    pub fn l1(&self) -> &L1Chain {
        &self.l1
    }

    pub fn now(&self) -> Rational {
        self.now
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    pub fn operator(&self) -> &AccountId {
        &self.operator
    }

    pub fn contract(&self) -> &AccountId {
        &self.contract
    }

    pub fn mode(&self) -> OperatorMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: OperatorMode) {
        if mode != self.mode {
            self.mode = mode;
            self.events.push(self.now, "operator_mode", json!({ "mode": mode }));
        }
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    /// The operator's view: every accepted tx applied, included or not.
    pub fn utxos(&self) -> &UtxoSet {
        &self.live
    }

    pub fn snapshot(&self, height: u64) -> Option<&UtxoSet> {
        self.snapshots.get(height as usize)
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn commitments(&self) -> &BTreeMap<u64, PlasmaCommitment> {
        &self.commitments
    }

    pub fn exits(&self) -> &[ExitRequest] {
        &self.exits
    }

    pub fn exit(&self, id: ExitId) -> Option<&ExitRequest> {
        self.exits.get(id as usize)
    }

    pub fn swap(&self, id: SwapId) -> Option<&FastWithdrawal> {
        self.swaps.get(id as usize)
    }

    pub fn meit(&self, id: MeitId) -> Option<&Meit> {
        self.meits.get(id as usize)
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn exited_total(&self) -> Amount {
        self.exited_total
    }

    pub fn fees_total(&self) -> Amount {
        self.fees_total
    }

    pub fn deposits_total(&self) -> Amount {
        self.deposits_total
    }

    pub fn register_user(&mut self, account: &AccountId) -> Secret {
        if let Some(k) = self.keys.get(account) {
            return *k;
        }
        let key = rng::secret(&mut self.rng);
        self.keys.insert(account.clone(), key);
        key
    }

    pub fn key(&self, account: &AccountId) -> Option<&Secret> {
        self.keys.get(account)
    }

    pub fn fund_l1(&mut self, account: &AccountId, amount: Amount) {
        self.register_user(account);
        self.l1.mint(account, amount);
    }

    fn gas_fee(&self, gas: u64) -> Amount {
        crate::l1::gas_fee(gas, self.config.l1_gas_price)
    }

    fn l1_call(
        &mut self,
        kind: TxKind,
        from: &AccountId,
        to: &AccountId,
        amount: Amount,
        bytes: u64,
        gas: u64,
    ) -> Result<Hash256, L1Error> {
        let fee = self.gas_fee(gas);
        self.l1.send(kind, from, to, amount, bytes, Some(gas), fee)
    }

    fn awaiting_confirmation(&self) -> bool {
        self.swaps.iter().any(|s| s.status == SwapStatus::Locked && s.payment.is_some())
    }

    /// Brings the L1 up to the child clock. Empty slots are elided unless a
    /// swap payment is collecting confirmations.
    fn sync_l1(&mut self) -> Result<(), PlasmaError> {
        loop {
            if self.l1.now() + self.l1.params().block_interval_s > self.now {
                break;
            }
            if self.l1.mempool_len() == 0 && !self.awaiting_confirmation() {
                self.l1.idle_until(self.now);
                break;
            }
            self.l1.produce_block();
            self.settle_swaps()?;
        }
        Ok(())
    }

    pub fn advance_time(&mut self, dt: Rational) -> Result<(), PlasmaError> {
        self.now += dt;
        self.sync_l1()?;
        self.settle_swaps()?;
        Ok(())
    }

    pub fn advance_to(&mut self, t: Rational) -> Result<(), PlasmaError> {
        if t > self.now {
            self.advance_time(t - self.now)?;
        }
        Ok(())
    }

    // ---- deposits ----

    /// Step one: funds move to the contract and the operator queues the
    /// record that commits to them.
    pub fn deposit(&mut self, user: &AccountId, amount: Amount) -> Result<u64, PlasmaError> {
        if self.halted {
            return Err(PlasmaError::ChainHalted);
        }
        if amount == 0 {
            return Err(PlasmaError::ZeroAmount);
        }
        self.register_user(user);
        let contract = self.contract.clone();
        let l1_tx =
            self.l1_call(TxKind::PlasmaDeposit, user, &contract, amount, CALL_BYTES, self.config.deposit_gas)?;
        let deposit_id = self.deposits.len() as u64;
        let record = ChildTx::Deposit { deposit_id, owner: user.clone(), amount, l1_tx };
        self.deposits.insert(
            deposit_id,
            DepositRecord {
                owner: user.clone(),
                amount,
                record: record.id(),
                record_height: None,
                ack_height: None,
                acked: false,
                exited: false,
            },
        );
        self.queue.push_back(record);
        self.deposits_total += amount;
        self.events.push(
            self.now,
            "deposit",
            json!({ "deposit_id": deposit_id, "user": user, "amount": amount.to_string(), "l1_tx": l1_tx }),
        );
        Ok(deposit_id)
    }

    /// Step three: the depositor acknowledges the committed record. The
    /// output is spendable from here on.
    pub fn acknowledge_deposit(&mut self, user: &AccountId, deposit_id: u64) -> Result<Outpoint, PlasmaError> {
        if self.halted {
            return Err(PlasmaError::ChainHalted);
        }
        let d = self.deposits.get(&deposit_id).ok_or(PlasmaError::UnknownDeposit(deposit_id))?.clone();
        if &d.owner != user {
            return Err(PlasmaError::NotOwner(user.clone()));
        }
        let outpoint = Outpoint { tx: d.record, index: 0 };
        if d.acked || d.exited {
            return Err(PlasmaError::DoubleSpend(outpoint));
        }
        let published = d.record_height.is_some_and(|h| self.blocks[h as usize - 1].committed);
        if !published {
            return Err(PlasmaError::DepositNotCommitted(deposit_id));
        }
        if self.locked.contains(&outpoint) {
            return Err(PlasmaError::OutputLocked(outpoint));
        }
        let key = self.keys[user];
        let ack = ChildTx::DepositAck {
            deposit_id,
            record: d.record,
            owner: user.clone(),
            amount: d.amount,
            signature: sign(&key, &d.record.0),
        };
        self.live.apply_child(&ack);
        self.queue.push_back(ack);
        self.deposits.get_mut(&deposit_id).expect("exists").acked = true;
        self.events.push(self.now, "deposit_ack", json!({ "deposit_id": deposit_id, "user": user }));
        Ok(outpoint)
    }

    /// Runs all three deposit steps, producing one child block in between.
    pub fn deposit_and_ack(&mut self, user: &AccountId, amount: Amount) -> Result<Outpoint, PlasmaError> {
        let id = self.deposit(user, amount)?;
        while self.deposits[&id].record_height.is_none() {
            self.produce_and_commit()?;
        }
        self.acknowledge_deposit(user, id)
    }

    // ---- transfers ----

    pub fn submit_transfer(&mut self, tx: PlasmaTx) -> Result<Hash256, PlasmaError> {
        if self.halted {
            return Err(PlasmaError::ChainHalted);
        }
        for input in &tx.inputs {
            let op = input.outpoint;
            if self.locked.contains(&op) {
                return Err(PlasmaError::OutputLocked(op));
            }
            if !self.live.contains(&op) {
                if self.spent.contains(&op) {
                    return Err(PlasmaError::DoubleSpend(op));
                }
                if let Some((id, _)) = self.deposits.iter().find(|(_, d)| d.record == op.tx && !d.acked) {
                    return Err(PlasmaError::DepositNotAcknowledged(*id));
                }
            }
        }
        self.live.validate(&tx, &self.keys)?;
        self.accept_transfer(tx)
    }

    fn accept_transfer(&mut self, tx: PlasmaTx) -> Result<Hash256, PlasmaError> {
        let id = tx.id();
        self.live.apply(&tx);
        self.spent.extend(tx.inputs.iter().map(|i| i.outpoint));
        self.fees_total += tx.fee;
        self.events.push(
            self.now,
            "transfer",
            json!({ "tx": id, "inputs": tx.inputs.len(), "outputs": tx.outputs.len(), "fee": tx.fee.to_string() }),
        );
        self.queue.push_back(ChildTx::Transfer(tx));
        Ok(id)
    }

    /// Builds and signs a transfer from `from`'s outputs.
    pub fn transfer(
        &mut self,
        from: &AccountId,
        inputs: &[Outpoint],
        outputs: Vec<TxOutput>,
        fee: Amount,
    ) -> Result<Hash256, PlasmaError> {
        let key = *self.keys.get(from).ok_or_else(|| PlasmaError::UnknownAccount(from.clone()))?;
        self.submit_transfer(PlasmaTx::unsigned(inputs, outputs, fee).signed_by(&key))
    }

    /// Pays `amount` to `to`, selecting `from`'s unlocked outputs in
    /// outpoint order and returning change.
    pub fn pay(
        &mut self,
        from: &AccountId,
        to: &AccountId,
        amount: Amount,
        fee: Amount,
    ) -> Result<Hash256, PlasmaError> {
        if amount == 0 {
            return Err(PlasmaError::ZeroAmount);
        }
        self.register_user(to);
        let need = amount + fee;
        let mut inputs = Vec::new();
        let mut total = 0;
        for u in self.live.owned_by(from) {
            if total >= need {
                break;
            }
            if self.locked.contains(&u.outpoint) {
                continue;
            }
            total += u.amount;
            inputs.push(u.outpoint);
        }
        if total < need {
            return Err(PlasmaError::ValueMismatch { inputs: total, outputs: need });
        }
        let mut outputs = vec![TxOutput { owner: to.clone(), amount }];
        if total > need {
            outputs.push(TxOutput { owner: from.clone(), amount: total - need });
        }
        self.transfer(from, &inputs, outputs, fee)
    }

    // ---- blocks ----

    /// Builds the next child block from the queue and, unless withholding,
    /// commits its root to the contract with one L1 transaction.
    pub fn produce_and_commit(&mut self) -> Result<&PlasmaBlock, PlasmaError> {
        if self.halted {
            return Err(PlasmaError::ChainHalted);
        }
        self.now += self.config.child_block_interval_s;
        let height = self.height() + 1;
        let take = self.queue.len().min(self.config.txs_per_block());
        let mut txs: Vec<ChildTx> = self.queue.drain(..take).collect();
        if self.mode == OperatorMode::InvalidRoot {
            let mut mint = PlasmaTx::unsigned(
                &[],
                vec![TxOutput { owner: self.operator.clone(), amount: self.config.invalid_mint_amount }],
                0,
            );
            mint.memo = height;
            txs.push(ChildTx::Transfer(mint));
        }
        let mut state = self.snapshots.last().expect("genesis").clone();
        let mut fees = 0;
        let mut valid = Vec::with_capacity(txs.len());
        for tx in &txs {
            let ok = match tx {
                ChildTx::Transfer(t) => state.validate(t, &self.keys).is_ok(),
                _ => true,
            };
            if ok {
                state.apply_child(tx);
                fees += tx.fee();
            }
            valid.push(ok);
        }
        let ids: Vec<Hash256> = txs.iter().map(ChildTx::id).collect();
        let tx_root = merkle_root_or_empty(&ids);
        let withheld = self.mode == OperatorMode::Withhold;
        let mut committed = false;
        if !withheld {
            let (op, contract) = (self.operator.clone(), self.contract.clone());
            let l1_tx = self.l1_call(
                TxKind::PlasmaCommit,
                &op,
                &contract,
                0,
                self.config.commit_bytes,
                self.config.commit_gas,
            )?;
            self.commitments.insert(height, PlasmaCommitment { height, root: tx_root, l1_tx, invalidated: false });
            committed = true;
        }
        for (pos, tx) in txs.iter().enumerate() {
            match tx {
                ChildTx::Deposit { deposit_id, .. } => {
                    if let Some(d) = self.deposits.get_mut(deposit_id) {
                        d.record_height = Some(height);
                    }
                }
                ChildTx::DepositAck { deposit_id, .. } => {
                    if let Some(d) = self.deposits.get_mut(deposit_id) {
                        d.ack_height = Some(height);
                    }
                }
                ChildTx::Transfer(t) if committed && valid[pos] => {
                    for input in &t.inputs {
                        self.spend_location.insert(input.outpoint, (height, pos));
                    }
                }
                ChildTx::Transfer(_) => {}
            }
            if committed && valid[pos] {
                self.tx_location.insert(ids[pos], (height, pos));
            }
        }
        self.events.push(
            self.now,
            "child_block",
            json!({ "height": height, "txs": txs.len(), "root": tx_root, "committed": committed, "withheld": withheld }),
        );
        self.blocks.push(PlasmaBlock {
            height,
            timestamp_s: self.now,
            txs,
            tx_root,
            committed,
            withheld,
            invalidated: false,
            fees,
        });
        self.snapshots.push(state);
        self.sync_l1()?;
        self.settle_swaps()?;
        Ok(self.blocks.last().expect("just pushed"))
    }

    /// Block contents as seen by users; withheld blocks are unavailable.
    pub fn block_data(&self, height: u64) -> Result<&PlasmaBlock, PlasmaError> {
        let block =
            height.checked_sub(1).and_then(|i| self.blocks.get(i as usize)).ok_or(PlasmaError::UnknownBlock(height))?;
        if block.withheld {
            return Err(PlasmaError::Withheld(height));
        }
        Ok(block)
    }

    /// Operator-side access that ignores withholding.
    pub fn block(&self, height: u64) -> Option<&PlasmaBlock> {
        height.checked_sub(1).and_then(|i| self.blocks.get(i as usize))
    }

    pub fn first_withheld(&self) -> Option<u64> {
        self.blocks.iter().find(|b| b.withheld).map(|b| b.height)
    }

    fn valid_commitment(&self, height: u64) -> Option<&PlasmaCommitment> {
        self.commitments.get(&height).filter(|c| !c.invalidated)
    }

    // ---- exits ----

    /// Locates the tx that created `outpoint` in a valid committed block.
    pub fn exit_claim(&self, outpoint: &Outpoint) -> Result<ExitClaim, PlasmaError> {
        let Some(&(height, pos)) = self.tx_location.get(&outpoint.tx) else {
            let hidden = self.blocks.iter().find(|b| b.withheld && b.txs.iter().any(|t| t.id() == outpoint.tx));
            return Err(hidden.map_or(PlasmaError::BadProof, |b| PlasmaError::Withheld(b.height)));
        };
        let block = self.block_data(height)?;
        let tx = block.txs[pos].clone();
        let out = tx.outputs().get(outpoint.index as usize).cloned().ok_or(PlasmaError::BadProof)?;
        let proof = merkle_prove(&block.tx_ids(), pos).map_err(|_| PlasmaError::BadProof)?;
        Ok(ExitClaim { height, tx, output_index: outpoint.index, amount: out.amount, proof })
    }

    pub fn start_exit(&mut self, user: &AccountId, claim: ExitClaim) -> Result<ExitId, PlasmaError> {
        let commitment = self.valid_commitment(claim.height).ok_or(PlasmaError::BadProof)?;
        if claim.proof.leaf != claim.tx.id() || !claim.proof.verify_against(&commitment.root) {
            return Err(PlasmaError::BadProof);
        }
        let output = claim.tx.outputs().get(claim.output_index as usize).cloned().ok_or(PlasmaError::BadProof)?;
        if &output.owner != user {
            return Err(PlasmaError::NotOwner(user.clone()));
        }
        if claim.amount != output.amount {
            return Err(PlasmaError::PartialExit { expected: output.amount, claimed: claim.amount });
        }
        let outpoint = Outpoint { tx: claim.tx.id(), index: claim.output_index };
        if self.exits.iter().any(|e| e.utxo.outpoint == outpoint && e.status == ExitStatus::Pending) {
            return Err(PlasmaError::ExitAlreadyPending(outpoint));
        }
        if self.swaps.iter().any(|s| s.outpoint == outpoint && s.status == SwapStatus::Locked) {
            return Err(PlasmaError::OutputLocked(outpoint));
        }
        let bond = self.config.exit_bond(output.amount);
        let contract = self.contract.clone();
        self.l1_call(TxKind::PlasmaExit, user, &contract, bond, CALL_BYTES, self.config.exit_gas)
            .map_err(PlasmaError::BondUnavailable)?;
        let id = self.exits.len() as ExitId;
        self.locked.insert(outpoint);
        self.exits.push(ExitRequest {
            id,
            exiter: user.clone(),
            utxo: Utxo { outpoint, owner: output.owner, amount: output.amount },
            height: claim.height,
            bond,
            started_at: self.now,
            status: ExitStatus::Pending,
            challenger: None,
        });
        self.events.push(
            self.now,
            "exit_started",
            json!({ "exit": id, "exiter": user, "amount": claim.amount.to_string(), "height": claim.height, "bond": bond.to_string() }),
        );
        Ok(id)
    }

    fn check_spend(&self, outpoint: &Outpoint, owner: &AccountId, spend: &SpendProof) -> bool {
        let Some(commitment) = self.valid_commitment(spend.height) else { return false };
        let id = spend.tx.id();
        if spend.proof.leaf != id || !spend.proof.verify_against(&commitment.root) {
            return false;
        }
        let Some(input) = spend.tx.inputs.get(spend.input_index) else { return false };
        let Some(key) = self.keys.get(owner) else { return false };
        input.outpoint == *outpoint && input.signature == sign(key, &id.0)
    }

    pub fn challenge_exit(
        &mut self,
        exit: ExitId,
        challenger: &AccountId,
        spend: &SpendProof,
    ) -> Result<(), PlasmaError> {
        let e = self.exits.get(exit as usize).ok_or(PlasmaError::UnknownExit(exit))?.clone();
        match e.status {
            ExitStatus::Pending => {}
            ExitStatus::Finalized => return Err(PlasmaError::AlreadyFinalized),
            _ => return Err(PlasmaError::AlreadyCancelled),
        }
        if self.now > e.started_at + self.config.challenge_period_s {
            return Err(PlasmaError::WindowClosed);
        }
        if !self.check_spend(&e.utxo.outpoint, &e.utxo.owner, spend) {
            return Err(PlasmaError::InvalidProof);
        }
        let contract = self.contract.clone();
        self.l1_call(TxKind::PlasmaExit, challenger, &contract, 0, CALL_BYTES, self.config.challenge_gas)?;
        self.l1.transfer_internal(&contract, challenger, e.bond)?;
        self.locked.remove(&e.utxo.outpoint);
        let entry = &mut self.exits[exit as usize];
        entry.status = ExitStatus::Challenged;
        entry.challenger = Some(challenger.clone());
        self.events.push(
            self.now,
            "exit_challenged",
            json!({ "exit": exit, "challenger": challenger, "bond": e.bond.to_string() }),
        );
        Ok(())
    }

    pub fn finalize_exit(&mut self, exit: ExitId) -> Result<Amount, PlasmaError> {
        let e = self.exits.get(exit as usize).ok_or(PlasmaError::UnknownExit(exit))?.clone();
        match e.status {
            ExitStatus::Pending => {}
            ExitStatus::Finalized => return Err(PlasmaError::AlreadyFinalized),
            _ => return Err(PlasmaError::AlreadyCancelled),
        }
        let end = e.started_at + self.config.challenge_period_s;
        if self.now < end {
            return Err(PlasmaError::NotElapsed { remaining_s: rational::to_exact_string(&(end - self.now)) });
        }
        let contract = self.contract.clone();
        self.l1_call(TxKind::PlasmaExit, &e.exiter, &contract, 0, CALL_BYTES, self.config.finalize_gas)?;
        self.l1.transfer_internal(&contract, &e.exiter, e.utxo.amount + e.bond)?;
        self.remove_exited(&e.utxo.outpoint);
        self.exited_total += e.utxo.amount;
        self.exits[exit as usize].status = ExitStatus::Finalized;
        self.events.push(
            self.now,
            "exit_finalized",
            json!({ "exit": exit, "exiter": e.exiter, "amount": e.utxo.amount.to_string() }),
        );
        Ok(e.utxo.amount)
    }

    fn remove_exited(&mut self, outpoint: &Outpoint) {
        self.locked.remove(outpoint);
        if self.live.remove(outpoint).is_some() {
            self.spent.insert(*outpoint);
        } else if let Some(d) = self.deposits.values_mut().find(|d| d.record == outpoint.tx && !d.acked) {
            d.exited = true;
        }
        // Later blocks must not see the output either.
        if let Some(last) = self.snapshots.last_mut() {
            last.remove(outpoint);
        }
    }

    /// A committed, valid spend of `outpoint`, as a watcher would find it.
    pub fn find_spend(&self, outpoint: &Outpoint) -> Option<SpendProof> {
        let &(height, pos) = self.spend_location.get(outpoint)?;
        let block = self.block_data(height).ok()?;
        let ChildTx::Transfer(tx) = &block.txs[pos] else { return None };
        let input_index = tx.inputs.iter().position(|i| &i.outpoint == outpoint)?;
        let proof = merkle_prove(&block.tx_ids(), pos).ok()?;
        Some(SpendProof { height, tx: tx.clone(), input_index, proof })
    }

    /// Challenges every pending exit that a spend proof can disprove.
    pub fn challenge_all(&mut self, challenger: &AccountId) -> Result<Vec<ExitId>, PlasmaError> {
        let mut done = Vec::new();
        let pending: Vec<(ExitId, Outpoint)> = self
            .exits
            .iter()
            .filter(|e| e.status == ExitStatus::Pending && self.now <= e.started_at + self.config.challenge_period_s)
            .map(|e| (e.id, e.utxo.outpoint))
            .collect();
        for (id, outpoint) in pending {
            if let Some(spend) = self.find_spend(&outpoint) {
                self.challenge_exit(id, challenger, &spend)?;
                done.push(id);
            }
        }
        Ok(done)
    }

    /// Finalizes every pending exit whose window has elapsed.
    pub fn finalize_due(&mut self) -> Result<Vec<ExitId>, PlasmaError> {
        let due: Vec<ExitId> = self
            .exits
            .iter()
            .filter(|e| e.status == ExitStatus::Pending && self.now >= e.started_at + self.config.challenge_period_s)
            .map(|e| e.id)
            .collect();
        for id in &due {
            self.finalize_exit(*id)?;
        }
        Ok(due)
    }

    // ---- fraud proofs ----

    /// Any observer with the block data can prove that the tx at
    /// `tx_index` of a committed block is invalid. The block and all its
    /// successors roll back; their valid txs are requeued and the
    /// operator's stake goes to the prover.
    pub fn submit_fraud_proof(
        &mut self,
        prover: &AccountId,
        height: u64,
        tx_index: usize,
    ) -> Result<FraudOutcome, PlasmaError> {
        let block = self.block_data(height)?;
        if block.invalidated {
            return Err(PlasmaError::AlreadyInvalidated(height));
        }
        let commitment = self.valid_commitment(height).ok_or(PlasmaError::BadProof)?;
        let proof = merkle_prove(&block.tx_ids(), tx_index).map_err(|_| PlasmaError::BadProof)?;
        if !proof.verify_against(&commitment.root) {
            return Err(PlasmaError::BadProof);
        }
        let start = self.snapshots[height as usize - 1].clone();
        let mut state = start.clone();
        for (i, tx) in block.txs.iter().enumerate() {
            let ok = match tx {
                ChildTx::Transfer(t) => state.validate(t, &self.keys).is_ok(),
                _ => true,
            };
            if i == tx_index {
                if ok {
                    return Err(PlasmaError::NotFraudulent);
                }
                break;
            }
            if ok {
                state.apply_child(tx);
            }
        }
        // Roll back this block and everything after it.
        let mut requeue = Vec::new();
        let mut rolled_back = Vec::new();
        let mut replay = start.clone();
        for h in height..=self.height() {
            let idx = h as usize - 1;
            if self.blocks[idx].invalidated {
                continue;
            }
            for tx in &self.blocks[idx].txs {
                let ok = match tx {
                    ChildTx::Transfer(t) => replay.validate(t, &self.keys).is_ok(),
                    _ => true,
                };
                if ok {
                    replay.apply_child(tx);
                    requeue.push(tx.clone());
                }
            }
            self.blocks[idx].invalidated = true;
            if let Some(c) = self.commitments.get_mut(&h) {
                c.invalidated = true;
            }
            self.snapshots[h as usize] = start.clone();
            rolled_back.push(h);
        }
        self.tx_location.retain(|_, (h, _)| *h < height);
        self.spend_location.retain(|_, (h, _)| *h < height);
        for d in self.deposits.values_mut() {
            if d.record_height.is_some_and(|h| h >= height) {
                d.record_height = None;
            }
            if d.ack_height.is_some_and(|h| h >= height) {
                d.ack_height = None;
            }
        }
        let requeued = requeue.len();
        for tx in requeue.into_iter().rev() {
            self.queue.push_front(tx);
        }
        let contract = self.contract.clone();
        for i in 0..self.exits.len() {
            let e = &self.exits[i];
            if e.status == ExitStatus::Pending && e.height >= height {
                let (exiter, bond, outpoint) = (e.exiter.clone(), e.bond, e.utxo.outpoint);
                self.l1.transfer_internal(&contract, &exiter, bond)?;
                self.locked.remove(&outpoint);
                self.exits[i].status = ExitStatus::Cancelled;
                self.events.push(self.now, "exit_voided", json!({ "exit": i }));
            }
        }
        let slashed = self.stake;
        self.l1_call(TxKind::PlasmaExit, prover, &contract, 0, CALL_BYTES, self.config.challenge_gas)?;
        self.l1.transfer_internal(&contract, prover, slashed)?;
        self.stake = 0;
        self.events.push(
            self.now,
            "fraud_proof",
            json!({ "prover": prover, "height": height, "tx_index": tx_index, "rolled_back": rolled_back, "slashed": slashed.to_string() }),
        );
        Ok(FraudOutcome { height, rolled_back, requeued, slashed })
    }

    /// Index of the first invalid tx in a block, as a watcher would find.
    pub fn find_invalid_tx(&self, height: u64) -> Option<usize> {
        let block = self.block_data(height).ok()?;
        if block.invalidated {
            return None;
        }
        let mut state = self.snapshots[height as usize - 1].clone();
        for (i, tx) in block.txs.iter().enumerate() {
            match tx {
                ChildTx::Transfer(t) => {
                    if state.validate(t, &self.keys).is_err() {
                        return Some(i);
                    }
                    state.apply(t);
                }
                other => state.apply_child(other),
            }
        }
        None
    }

    // ---- fast withdrawals ----

    pub fn register_lp(&mut self, account: &AccountId, validates_chain: bool, l1_funds: Amount) {
        self.fund_l1(account, l1_funds);
        self.lps.insert(account.clone(), LiquidityProvider { account: account.clone(), validates_chain });
    }

    fn byzantine(&self) -> bool {
        self.mode != OperatorMode::Honest || self.first_withheld().is_some()
    }

    /// Locks `outpoint` in a swap: the user pre-signs its transfer to the
    /// LP, which is released only against a final L1 payment.
    pub fn start_fast_withdrawal(
        &mut self,
        user: &AccountId,
        outpoint: Outpoint,
        lp: &AccountId,
        lp_fee: Amount,
    ) -> Result<SwapId, PlasmaError> {
        if self.halted {
            return Err(PlasmaError::ChainHalted);
        }
        let profile = self.lps.get(lp).ok_or_else(|| PlasmaError::UnknownLp(lp.clone()))?;
        if !profile.validates_chain || self.byzantine() {
            return Err(PlasmaError::LpRefused);
        }
        if self.locked.contains(&outpoint) {
            return Err(PlasmaError::OutputLocked(outpoint));
        }
        let out = self.live.get(&outpoint).cloned().ok_or(PlasmaError::UnknownOutput(outpoint))?;
        if &out.owner != user {
            return Err(PlasmaError::NotOwner(user.clone()));
        }
        if lp_fee >= out.amount {
            return Err(PlasmaError::ValueMismatch { inputs: out.amount, outputs: lp_fee });
        }
        let needed = out.amount - lp_fee + self.gas_fee(self.config.transfer_gas);
        if self.l1.balance(lp) < needed {
            return Err(PlasmaError::LpInsolvent { needed });
        }
        let key = self.keys[user];
        let release = PlasmaTx::unsigned(&[outpoint], vec![TxOutput { owner: lp.clone(), amount: out.amount }], 0)
            .signed_by(&key);
        let id = self.swaps.len() as SwapId;
        self.locked.insert(outpoint);
        self.swaps.push(FastWithdrawal {
            id,
            user: user.clone(),
            lp: lp.clone(),
            outpoint,
            amount: out.amount,
            lp_fee,
            release,
            payment: None,
            deadline: self.now + self.config.swap_timeout_s,
            status: SwapStatus::Locked,
        });
        self.events.push(
            self.now,
            "swap_locked",
            json!({ "swap": id, "user": user, "lp": lp, "amount": out.amount.to_string() }),
        );
        Ok(id)
    }

    /// Confirmation time of the L1 payment, counted in L1 slots.
    fn payment_window(&self) -> Rational {
        self.l1.params().block_interval_s * Rational::from_integer(self.config.lp_confirmations as i128 + 1)
    }

    pub fn lp_pay(&mut self, swap: SwapId) -> Result<Hash256, PlasmaError> {
        let s = self.swaps.get(swap as usize).ok_or(PlasmaError::UnknownSwap(swap))?.clone();
        if s.status != SwapStatus::Locked || s.payment.is_some() {
            return Err(PlasmaError::SwapClosed);
        }
        if self.now + self.payment_window() > s.deadline {
            return Err(PlasmaError::SwapDeadlineTooClose);
        }
        let gas = self.config.transfer_gas;
        let tx = self.l1_call(TxKind::Transfer, &s.lp, &s.user, s.amount - s.lp_fee, CALL_BYTES, gas)?;
        self.swaps[swap as usize].payment = Some(tx);
        self.events.push(self.now, "swap_paid", json!({ "swap": swap, "l1_tx": tx }));
        Ok(tx)
    }

    fn settle_swaps(&mut self) -> Result<(), PlasmaError> {
        for i in 0..self.swaps.len() {
            let s = &self.swaps[i];
            if s.status != SwapStatus::Locked {
                continue;
            }
            let final_at = s.payment.and_then(|p| {
                let h = self.l1.inclusion_height(&p)?;
                let confirm = h + self.config.lp_confirmations - 1;
                self.l1.blocks().get(confirm as usize).map(|b| b.timestamp_s)
            });
            match final_at {
                Some(t) if t <= s.deadline => {
                    let release = s.release.clone();
                    let outpoint = s.outpoint;
                    self.locked.remove(&outpoint);
                    if self.halted {
                        self.swaps[i].status = SwapStatus::Reclaimed;
                        continue;
                    }
                    self.accept_transfer(release)?;
                    self.swaps[i].status = SwapStatus::Completed;
                    self.events.push(self.now, "swap_completed", json!({ "swap": i }));
                }
                _ if self.now >= s.deadline && final_at.is_none_or(|t| t > s.deadline) => {
                    // Payment may still be in flight; give it until its
                    // confirmation window has had the chance to pass.
                    if s.payment.is_some() && final_at.is_none() && self.l1.now() < s.deadline {
                        continue;
                    }
                    let outpoint = s.outpoint;
                    self.locked.remove(&outpoint);
                    self.swaps[i].status = SwapStatus::Reclaimed;
                    self.events.push(self.now, "swap_reclaimed", json!({ "swap": i }));
                }
                _ => {}
            }
        }
        Ok(())
    }

    // ---- mass exit ----

    fn last_published(&self) -> Option<u64> {
        self.first_withheld().map(|w| w - 1)
    }

    /// An exit operator publishes a bonded mass exit covering every output
    /// the participants held at `snapshot_height` (default and maximum: the
    /// last block before withholding started). The child chain halts and
    /// reverts to its last published state.
    pub fn mass_exit(
        &mut self,
        exit_operator: &AccountId,
        participants: &[AccountId],
        snapshot_height: Option<u64>,
    ) -> Result<Option<MeitId>, PlasmaError> {
        if participants.is_empty() {
            return Ok(None);
        }
        let published = self.last_published().ok_or(PlasmaError::NoWithholding)?;
        let s = snapshot_height.unwrap_or(published).min(published);
        let snapshot: Vec<Utxo> = self.snapshots[s as usize].iter().collect();
        let members: BTreeSet<&AccountId> = participants.iter().collect();
        let digest = Hash256::tagged(crate::hash::domain::TX, &[b"meit", &s.to_le_bytes()]);
        let mut signatures = BTreeMap::new();
        for p in &members {
            let key = self.keys.get(*p).ok_or(PlasmaError::InsufficientSignatures)?;
            signatures.insert((*p).clone(), sign(key, &digest.0));
        }
        let bitmap: Vec<bool> = snapshot.iter().map(|u| members.contains(&u.owner)).collect();
        let signers_with_bits = members.iter().filter(|p| snapshot.iter().any(|u| &&u.owner == *p)).count();
        if signers_with_bits < self.config.meit_min_signatures.max(1) {
            return Err(PlasmaError::InsufficientSignatures);
        }
        let bitmap_len = bitmap.len().div_ceil(8) as u64;
        let bytes = CALL_BYTES + bitmap_len + 32 * signatures.len() as u64;
        let gas = self.config.exit_gas + 16 * bytes;
        let baseline = self.l1.mempool_len();
        let contract = self.contract.clone();
        let bond = self.config.meit_bond;
        let l1_tx = self
            .l1_call(TxKind::PlasmaExit, exit_operator, &contract, bond, bytes, gas)
            .map_err(PlasmaError::BondUnavailable)?;
        let id = self.meits.len() as MeitId;
        let cancelled = vec![false; bitmap.len()];
        self.meits.push(Meit {
            id,
            exit_operator: exit_operator.clone(),
            snapshot_height: s,
            snapshot,
            bitmap,
            cancelled,
            bond,
            signatures,
            started_at: self.now,
            status: MeitStatus::Pending,
            l1_tx,
            report: Some(CongestionReport {
                baseline_mempool_depth: baseline,
                peak_mempool_depth: self.l1.mempool_len(),
                meit_l1_txs: 1,
                blocks_to_drain: 0,
                max_inclusion_delay_s: Rational::zero(),
            }),
        });
        self.halt_at(published);
        self.events.push(
            self.now,
            "meit_started",
            json!({ "meit": id, "operator": exit_operator, "snapshot_height": s, "participants": participants.len() }),
        );
        Ok(Some(id))
    }

    fn halt_at(&mut self, published: u64) {
        self.halted = true;
        self.queue.clear();
        self.live = self.snapshots[published as usize].clone();
        self.fees_total = self.blocks[..published as usize].iter().filter(|b| !b.invalidated).map(|b| b.fees).sum();
        for d in self.deposits.values_mut() {
            d.acked = d.ack_height.is_some_and(|h| h <= published);
        }
        for s in &mut self.swaps {
            if s.status == SwapStatus::Locked {
                s.status = SwapStatus::Reclaimed;
            }
        }
        let pending: BTreeSet<Outpoint> =
            self.exits.iter().filter(|e| e.status == ExitStatus::Pending).map(|e| e.utxo.outpoint).collect();
        self.locked = pending;
    }

    /// Disproves one bit with a committed spend of that output.
    pub fn challenge_meit_bit(
        &mut self,
        meit: MeitId,
        challenger: &AccountId,
        bit: usize,
        spend: &SpendProof,
    ) -> Result<Amount, PlasmaError> {
        let m = self.meits.get(meit as usize).ok_or(PlasmaError::UnknownMeit(meit))?;
        if m.status != MeitStatus::Pending {
            return Err(PlasmaError::MeitNotPending);
        }
        if self.now > m.started_at + self.config.meit_period_s {
            return Err(PlasmaError::WindowClosed);
        }
        if bit >= m.bitmap.len() || !m.bitmap[bit] || m.cancelled[bit] {
            return Err(PlasmaError::BadBit(bit));
        }
        let utxo = m.snapshot[bit].clone();
        if !self.check_spend(&utxo.outpoint, &utxo.owner, spend) {
            return Err(PlasmaError::InvalidProof);
        }
        let reward = self.config.exit_bond(utxo.amount).min(m.bond);
        let contract = self.contract.clone();
        self.l1_call(TxKind::PlasmaExit, challenger, &contract, 0, CALL_BYTES, self.config.challenge_gas)?;
        self.l1.transfer_internal(&contract, challenger, reward)?;
        let m = &mut self.meits[meit as usize];
        m.cancelled[bit] = true;
        m.bond -= reward;
        self.events.push(
            self.now,
            "meit_bit_challenged",
            json!({ "meit": meit, "bit": bit, "reward": reward.to_string() }),
        );
        Ok(reward)
    }

    /// Challenges every marked bit with a committed spend.
    pub fn challenge_meit_all(&mut self, meit: MeitId, challenger: &AccountId) -> Result<Vec<usize>, PlasmaError> {
        let m = self.meits.get(meit as usize).ok_or(PlasmaError::UnknownMeit(meit))?;
        let candidates: Vec<(usize, Outpoint)> =
            m.marked().filter(|(i, _)| !m.cancelled[*i]).map(|(i, u)| (i, u.outpoint)).collect();
        let mut done = Vec::new();
        for (bit, outpoint) in candidates {
            if let Some(spend) = self.find_spend(&outpoint) {
                self.challenge_meit_bit(meit, challenger, bit, &spend)?;
                done.push(bit);
            }
        }
        Ok(done)
    }

    /// Pays every surviving bit on L1, one payout tx per participant, and
    /// reports the load this put on the L1 mempool.
    pub fn finalize_meit(&mut self, meit: MeitId) -> Result<CongestionReport, PlasmaError> {
        let m = self.meits.get(meit as usize).ok_or(PlasmaError::UnknownMeit(meit))?.clone();
        if m.status != MeitStatus::Pending {
            return Err(PlasmaError::MeitNotPending);
        }
        let end = m.started_at + self.config.meit_period_s;
        if self.now < end {
            return Err(PlasmaError::NotElapsed { remaining_s: rational::to_exact_string(&(end - self.now)) });
        }
        let mut per_user: BTreeMap<AccountId, Amount> = BTreeMap::new();
        for (i, u) in m.marked() {
            if !m.cancelled[i] {
                *per_user.entry(u.owner.clone()).or_default() += u.amount;
            }
        }
        let contract = self.contract.clone();
        let submitted_at = self.l1.now();
        let mut payout_txs = Vec::new();
        let mut report = m.report.clone().expect("set at start");
        for (user, total) in &per_user {
            let fee = self.config.meit_fee_per_user.min(*total);
            let tx =
                self.l1_call(TxKind::PlasmaExit, &m.exit_operator, user, 0, CALL_BYTES, self.config.finalize_gas)?;
            self.l1.transfer_internal(&contract, user, total - fee)?;
            self.l1.transfer_internal(&contract, &m.exit_operator, fee)?;
            payout_txs.push(tx);
            report.peak_mempool_depth = report.peak_mempool_depth.max(self.l1.mempool_len());
        }
        self.l1.transfer_internal(&contract, &m.exit_operator, m.bond)?;
        for (i, u) in m.marked() {
            if !m.cancelled[i] {
                self.remove_exited(&u.outpoint);
                self.exited_total += u.amount;
            }
        }
        let mut blocks = 0;
        while self.l1.mempool_len() > 0 {
            self.l1.produce_block();
            blocks += 1;
        }
        let last = payout_txs.iter().filter_map(|t| self.l1.inclusion_time(t)).max().unwrap_or(submitted_at);
        report.meit_l1_txs += payout_txs.len();
        report.blocks_to_drain = blocks;
        report.max_inclusion_delay_s = last - submitted_at;
        let entry = &mut self.meits[meit as usize];
        entry.status = MeitStatus::Finalized;
        entry.report = Some(report.clone());
        self.events.push(
            self.now,
            "meit_finalized",
            json!({ "meit": meit, "payouts": payout_txs.len(), "peak_mempool": report.peak_mempool_depth }),
        );
        Ok(report)
    }

    // ---- invariants ----

    fn pending_deposits(&self) -> Amount {
        self.deposits.values().filter(|d| !d.acked && !d.exited).map(|d| d.amount).sum()
    }

    /// Deposits = unspent outputs + unacknowledged deposits + exits + fees.
    pub fn check_conservation(&self) -> Result<(), String> {
        let held = self.live.total() + self.pending_deposits() + self.exited_total + self.fees_total;
        if held != self.deposits_total {
            return Err(format!(
                "conservation: deposits {} != utxos {} + pending {} + exits {} + fees {}",
                self.deposits_total,
                self.live.total(),
                self.pending_deposits(),
                self.exited_total,
                self.fees_total
            ));
        }
        Ok(())
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        self.check_conservation()?;
        let mut last = 0;
        for (h, c) in &self.commitments {
            if *h <= last && last != 0 {
                return Err(format!("commitment heights not increasing at {h}"));
            }
            last = *h;
            let block = &self.blocks[*h as usize - 1];
            if block.tx_root != c.root || !block.committed {
                return Err(format!("commitment {h} does not match its block"));
            }
            if block.tx_root != merkle_root_or_empty(&block.tx_ids()) {
                return Err(format!("block {h} root mismatch"));
            }
        }
        for op in &self.locked {
            let is_pending_deposit = self.deposits.values().any(|d| d.record == op.tx && !d.acked && !d.exited);
            let exiting = self.exits.iter().any(|e| e.status == ExitStatus::Pending && &e.utxo.outpoint == op);
            if !self.live.contains(op) && !is_pending_deposit && !exiting {
                return Err(format!("locked outpoint {op:?} is not live"));
            }
        }
        self.l1.audit()
    }
}
