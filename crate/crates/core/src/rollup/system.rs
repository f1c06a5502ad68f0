use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_traits::Zero;
use serde::Serialize;
use serde_json::json;

use crate::events::EventLog;
use crate::hash::Hash256;
use crate::l1::{gas_fee, ChainParams, L1Chain, TxKind};
use crate::rational::{self, Rational};
use crate::rng;
use crate::types::{AccountId, Amount, WEI_PER_ETH};

use super::batch::{build_batch, prove_batch, BatchStatus, RollupBatch, TrustedSetup};
use super::codec::{check_encodable, decode_ops, encoded_len, split_fee};
use super::state::{AccountState, RollupOp, Transfer};
use super::{batch_fee_split, RollupError, RollupMode, RollupParams};

const DEPOSIT_BYTES: u64 = 200;
const CHALLENGE_GAS: u64 = 100_000;
const CHALLENGE_BYTES: u64 = 200;
const OPERATOR_FUNDS: Amount = 1_000 * WEI_PER_ETH;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchRecord {
    pub index: u64,
    pub batch: RollupBatch,
    #[serde(with = "rational::serde_exact")]
    pub submitted_at: Rational,
    pub l1_tx: Hash256,
    pub gas: u64,
    pub l1_cost: Amount,
    /// Position in the deposit queue of this batch's first deposit.
    pub deposit_start: usize,
    pub finalized_at: Option<String>,
    pub reverted_at: Option<String>,
}

impl BatchRecord {
    pub fn status(&self) -> BatchStatus {
        self.batch.status
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WithdrawalRecord {
    pub id: u64,
    pub account: AccountId,
    pub amount: Amount,
    pub fee: Amount,
    pub nonce: u32,
    #[serde(with = "rational::serde_exact")]
    pub requested_at: Rational,
    pub batch: Option<u64>,
    #[serde(skip)]
    pub credited_at: Option<Rational>,
}

impl WithdrawalRecord {
    pub fn latency(&self) -> Option<Rational> {
        self.credited_at.map(|t| t - self.requested_at)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ChallengeOutcome {
    /// The batch was fraudulent; it and its successors reverted.
    Fraud { reverted: Vec<u64>, slashed: Amount },
    /// The batch was correct or the claimed root was wrong.
    Rejected { penalty: Amount },
}

/// One rollup: its contract on an L1 chain, a sequencer that builds and
/// publishes batches on a fixed cadence, and a shared simulated clock.
pub struct Rollup {
    params: RollupParams,
    l1: L1Chain,
    now: Rational,
    events: EventLog,
    setup: TrustedSetup,
    prover: AccountId,
    operator: AccountId,
    contract: AccountId,
    genesis: AccountState,
    // Contract.
    bonds: BTreeMap<AccountId, Amount>,
    batches: Vec<BatchRecord>,
    head_root: Hash256,
    deposit_queue: Vec<(AccountId, Amount)>,
    deposits_consumed: usize,
    credited_total: Amount,
    // Sequencer.
    state: AccountState,
    pending: AccountState,
    pool: VecDeque<RollupOp>,
    withdrawals: Vec<WithdrawalRecord>,
    next_batch_at: Rational,
    auto_publish: bool,
    fraud_next: Option<Amount>,
}

impl Rollup {
    pub fn new(params: RollupParams, l1_params: ChainParams, seed: u64) -> Result<Self, RollupError> {
        params.validate()?;
        let mut r = rng::seeded(seed);
        let mut l1 = L1Chain::new(l1_params)?;
        let operator = AccountId::from("rollup:operator");
        let contract = AccountId::from("rollup:contract");
        let prover = AccountId::from("rollup:prover");
        l1.mint(&operator, OPERATOR_FUNDS);
        let genesis = AccountState::with_fee_account(&operator);
        let mut rollup = Rollup {
            setup: TrustedSetup::new([(prover.clone(), rng::secret(&mut r))]),
            l1,
            now: Rational::zero(),
            events: EventLog::new(),
            prover,
            operator: operator.clone(),
            contract,
            head_root: genesis.root(),
            state: genesis.clone(),
            pending: genesis.clone(),
            genesis,
            bonds: BTreeMap::new(),
            batches: Vec::new(),
            deposit_queue: Vec::new(),
            deposits_consumed: 0,
            credited_total: 0,
            pool: VecDeque::new(),
            withdrawals: Vec::new(),
            next_batch_at: params.batch_interval_s,
            auto_publish: true,
            fraud_next: None,
            params,
        };
        rollup.events.push(rollup.now, "trusted_setup", json!({ "provers": [rollup.prover] }));
        rollup.stake_publisher(&operator)?;
        Ok(rollup)
    }

    pub fn params(&self) -> &RollupParams {
        &self.params
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

    pub fn setup(&self) -> &TrustedSetup {
        &self.setup
    }

    pub fn prover(&self) -> &AccountId {
        &self.prover
    }

    /// The sequencer's state after every accepted batch.
    pub fn state(&self) -> &AccountState {
        &self.state
    }

    /// State including queued deposits and pooled operations.
    pub fn pending_state(&self) -> &AccountState {
        &self.pending
    }

    pub fn genesis(&self) -> &AccountState {
        &self.genesis
    }

    pub fn head_root(&self) -> Hash256 {
        self.head_root
    }

    pub fn finalized_root(&self) -> Hash256 {
        self.batches
            .iter()
            .rev()
            .find(|b| b.status() == BatchStatus::Finalized)
            .map_or(self.genesis.root(), |b| b.batch.new_root)
    }

    pub fn batches(&self) -> &[BatchRecord] {
        &self.batches
    }

    pub fn batch(&self, index: u64) -> Option<&BatchRecord> {
        self.batches.get(index as usize)
    }

    pub fn withdrawals(&self) -> &[WithdrawalRecord] {
        &self.withdrawals
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn bond(&self, publisher: &AccountId) -> Amount {
        self.bonds.get(publisher).copied().unwrap_or(0)
    }

    pub fn set_auto_publish(&mut self, on: bool) {
        self.auto_publish = on;
    }

    pub fn next_batch_at(&self) -> Rational {
        self.next_batch_at
    }

    pub fn fund_l1(&mut self, account: &AccountId, amount: Amount) {
        self.l1.mint(account, amount);
    }

    fn gas_fee(&self, gas: u64) -> Amount {
        gas_fee(gas, self.params.l1_gas_price)
    }

    pub fn stake_publisher(&mut self, publisher: &AccountId) -> Result<(), RollupError> {
        let bond = self.params.publisher_bond;
        let fee = self.gas_fee(self.params.deposit_gas);
        let contract = self.contract.clone();
        self.l1.send(
            TxKind::RollupDeposit,
            publisher,
            &contract,
            bond,
            DEPOSIT_BYTES,
            Some(self.params.deposit_gas),
            fee,
        )?;
        *self.bonds.entry(publisher.clone()).or_default() += bond;
        self.events.push(self.now, "publisher_staked", json!({ "publisher": publisher, "bond": bond.to_string() }));
        Ok(())
    }

    // ---- user operations ----

    fn queue_deposit(&mut self, user: &AccountId, amount: Amount) -> Result<u64, RollupError> {
        let fee = self.gas_fee(self.params.deposit_gas);
        let contract = self.contract.clone();
        let tx = self.l1.send(
            TxKind::RollupDeposit,
            user,
            &contract,
            amount,
            DEPOSIT_BYTES,
            Some(self.params.deposit_gas),
            fee,
        )?;
        let id = self.deposit_queue.len() as u64;
        self.deposit_queue.push((user.clone(), amount));
        self.pending.credit_unchecked(user, amount);
        self.events.push(
            self.now,
            "deposit",
            json!({ "deposit": id, "user": user, "amount": amount.to_string(), "l1_tx": tx }),
        );
        Ok(id)
    }

    /// Locks `amount` in the contract; the next batch credits it.
    pub fn deposit(&mut self, user: &AccountId, amount: Amount) -> Result<u64, RollupError> {
        if amount == 0 {
            return Err(RollupError::ZeroAmount);
        }
        self.queue_deposit(user, amount)
    }

    /// Registers an account without funds so it can receive transfers.
    pub fn register(&mut self, user: &AccountId) -> Result<u64, RollupError> {
        self.queue_deposit(user, 0)
    }

    fn admit(&mut self, op: RollupOp) -> Result<(), RollupError> {
        check_encodable(self.params.mode, &op).map_err(|reason| RollupError::InvalidTx { index: 0, reason })?;
        self.pending.apply(&op).map_err(|reason| RollupError::InvalidTx { index: 0, reason })?;
        self.pool.push_back(op);
        Ok(())
    }

    fn require_funds(&self, account: &AccountId, needed: Amount) -> Result<(), RollupError> {
        let a = self.pending.get(account).ok_or_else(|| RollupError::UnknownAccount(account.clone()))?;
        if a.balance < needed {
            return Err(RollupError::InsufficientRollupBalance {
                account: account.clone(),
                needed,
                available: a.balance,
            });
        }
        Ok(())
    }

    /// Queues a signed transfer paying the standard fee.
    pub fn transfer(&mut self, from: &AccountId, to: &AccountId, amount: Amount) -> Result<(), RollupError> {
        if amount == 0 {
            return Err(RollupError::ZeroAmount);
        }
        let fee = self.params.transfer_fee;
        self.require_funds(from, amount + fee)?;
        if self.pending.get(to).is_none() {
            return Err(RollupError::UnknownAccount(to.clone()));
        }
        let nonce = self.pending.nonce(from);
        self.admit(RollupOp::Transfer(Transfer { from: from.clone(), to: to.clone(), amount, fee, nonce }))
    }

    /// Queues up to `max_authors` authors' transfers whose fees are all
    /// paid by `fee_payer`. Either every transfer is queued or none is.
    pub fn batched_transfer(
        &mut self,
        fee_payer: &AccountId,
        transfers: &[(AccountId, AccountId, Amount)],
    ) -> Result<Amount, RollupError> {
        let authors: BTreeSet<&AccountId> = transfers.iter().map(|(from, _, _)| from).collect();
        if authors.len() > self.params.max_authors {
            return Err(RollupError::TooManyAuthors { authors: authors.len(), max: self.params.max_authors });
        }
        if transfers.is_empty() {
            return Err(RollupError::EmptyBatch);
        }
        let mut trial = self.pending.clone();
        let mut ops = Vec::with_capacity(transfers.len() + 1);
        for (index, (from, to, amount)) in transfers.iter().enumerate() {
            let op = RollupOp::Transfer(Transfer {
                from: from.clone(),
                to: to.clone(),
                amount: *amount,
                fee: 0,
                nonce: trial.nonce(from),
            });
            if *amount == 0 {
                return Err(RollupError::InvalidTx { index, reason: "zero amount".into() });
            }
            check_encodable(self.params.mode, &op).map_err(|reason| RollupError::InvalidTx { index, reason })?;
            trial.apply(&op).map_err(|reason| RollupError::InvalidTx { index, reason })?;
            ops.push(op);
        }
        let total_fee = self.params.transfer_fee * transfers.len() as Amount;
        // A zk fee field holds 11 mantissa bits, so large totals take several fee ops.
        let parts = match self.params.mode {
            RollupMode::Zk => split_fee(total_fee),
            RollupMode::Optimistic => vec![total_fee],
        };
        for fee in parts {
            let fee_op = RollupOp::Transfer(Transfer {
                from: fee_payer.clone(),
                to: self.operator.clone(),
                amount: 0,
                fee,
                nonce: trial.nonce(fee_payer),
            });
            trial.apply(&fee_op).map_err(|_| RollupError::FeePayerInsolvent(fee_payer.clone()))?;
            ops.push(fee_op);
        }
        self.pending = trial;
        self.pool.extend(ops);
        self.events.push(
            self.now,
            "batched_transfer",
            json!({ "fee_payer": fee_payer, "transfers": transfers.len(), "fee": total_fee.to_string() }),
        );
        Ok(total_fee)
    }

    /// Queues a withdrawal; the off-chain fee is charged on top of `amount`.
    pub fn withdraw(&mut self, user: &AccountId, amount: Amount) -> Result<u64, RollupError> {
        if amount == 0 {
            return Err(RollupError::ZeroAmount);
        }
        let fee = self.params.withdrawal_fee;
        self.require_funds(user, amount + fee)?;
        let nonce = self.pending.nonce(user);
        self.admit(RollupOp::Withdraw { account: user.clone(), amount, fee, nonce })?;
        let id = self.withdrawals.len() as u64;
        self.withdrawals.push(WithdrawalRecord {
            id,
            account: user.clone(),
            amount,
            fee,
            nonce,
            requested_at: self.now,
            batch: None,
            credited_at: None,
        });
        self.events.push(
            self.now,
            "withdraw_requested",
            json!({ "withdrawal": id, "user": user, "amount": amount.to_string() }),
        );
        Ok(id)
    }

    // ---- sequencing ----

    fn calldata_budget(&self) -> u64 {
        let l1 = self.l1.params();
        let by_gas = l1.gas_limit_per_block.saturating_sub(self.params.proof_gas) / l1.gas_per_byte;
        by_gas.min(l1.block_size_bytes)
    }

    /// Makes the next publisher batch claim a state in which it holds
    /// `mint` more than it should.
    pub fn schedule_fraud(&mut self, mint: Amount) {
        self.fraud_next = Some(mint);
    }

    /// Builds a batch of every queued deposit and as many pooled operations
    /// as fit, without submitting it. Returns `None` if there is nothing to
    /// include.
    pub fn build_next(&self, publisher: &AccountId) -> Result<Option<(RollupBatch, AccountState)>, RollupError> {
        let mut ops: Vec<RollupOp> = self.deposit_queue[self.deposits_consumed..]
            .iter()
            .map(|(account, amount)| RollupOp::Deposit { account: account.clone(), amount: *amount })
            .collect();
        let budget = self.calldata_budget();
        let mut trial = self.state.clone();
        trial.apply_all(&ops)?;
        for op in &self.pool {
            ops.push(op.clone());
            if encoded_len(&self.params, &ops) > budget {
                ops.pop();
                break;
            }
            if trial.apply(op).is_err() {
                ops.pop();
            }
        }
        if ops.is_empty() {
            return Ok(None);
        }
        let (batch, post) = build_batch(&self.state, ops, &self.params, publisher)?;
        Ok(Some((batch, post)))
    }

    /// Deposits the contract expects a batch starting now to consume.
    pub fn queued_deposits(&self) -> &[(AccountId, Amount)] {
        &self.deposit_queue[self.deposits_consumed..]
    }

    /// Builds, proves (zk) and submits the next batch.
    pub fn publish(&mut self, publisher: &AccountId) -> Result<Option<u64>, RollupError> {
        let Some((mut batch, mut post)) = self.build_next(publisher)? else { return Ok(None) };
        if let Some(mint) = self.fraud_next.take() {
            post.credit_unchecked(publisher, mint);
            batch = batch.with_claimed_root(post.root());
            self.events.push(
                self.now,
                "fraudulent_batch_built",
                json!({ "publisher": publisher, "mint": mint.to_string() }),
            );
        }
        if self.params.mode == RollupMode::Zk {
            let proof =
                prove_batch(&batch, &self.state, self.queued_deposits(), &self.params, &self.setup, &self.prover);
            match proof {
                Ok(p) => batch.proof = Some(p),
                Err(e) => {
                    self.events.push(
                        self.now,
                        "proof_refused",
                        json!({ "publisher": publisher, "error": e.to_string() }),
                    );
                }
            }
        }
        self.submit_batch(batch, post).map(Some)
    }

    /// Contract entry point. `post` is the publisher's claimed post-state,
    /// adopted by the sequencer on acceptance.
    pub fn submit_batch(&mut self, mut batch: RollupBatch, post: AccountState) -> Result<u64, RollupError> {
        if self.bond(&batch.publisher) < self.params.publisher_bond {
            return Err(RollupError::NotStaked(batch.publisher.clone()));
        }
        if batch.prev_root != self.head_root {
            return Err(RollupError::StalePrevRoot);
        }
        let deposits: Vec<(AccountId, Amount)> = batch
            .deposits()
            .map(|op| match op {
                RollupOp::Deposit { account, amount } => (account.clone(), *amount),
                _ => unreachable!(),
            })
            .collect();
        let queued = &self.deposit_queue[self.deposits_consumed..];
        if deposits.len() > queued.len() || deposits[..] != queued[..deposits.len()] {
            return Err(RollupError::PriorityMismatch);
        }
        let bytes = batch.data.len() as u64;
        if bytes > self.calldata_budget() {
            return Err(RollupError::BatchTooLarge { bytes, max: self.calldata_budget() });
        }
        if self.params.mode == RollupMode::Zk {
            let proof = batch.proof.as_ref().ok_or(RollupError::MissingProof)?;
            if !self.setup.verify(&batch, proof) {
                return Err(RollupError::InvalidProof);
            }
        }
        let gas = self.params.proof_gas + bytes * self.l1.params().gas_per_byte;
        let l1_cost = self.gas_fee(gas);
        let contract = self.contract.clone();
        let l1_tx = self.l1.send(TxKind::RollupBatch, &batch.publisher, &contract, 0, bytes, Some(gas), l1_cost)?;
        let index = self.batches.len() as u64;
        batch.status = BatchStatus::Pending;
        let deposit_start = self.deposits_consumed;
        self.deposits_consumed += deposits.len();
        self.head_root = batch.new_root;
        for op in &batch.ops {
            match op {
                RollupOp::Deposit { .. } => {}
                _ => {
                    if let Some(pos) = self.pool.iter().position(|p| p == op) {
                        self.pool.remove(pos);
                    }
                    if let RollupOp::Withdraw { account, nonce, .. } = op {
                        if let Some(w) = self
                            .withdrawals
                            .iter_mut()
                            .find(|w| &w.account == account && w.nonce == *nonce && w.batch.is_none())
                        {
                            w.batch = Some(index);
                        }
                    }
                }
            }
        }
        self.state = post;
        self.rebuild_pending();
        let per_tx = batch_fee_split(l1_cost, batch.ops.len().max(1)).expect("non-empty").per_tx;
        self.events.push(
            self.now,
            "batch_submitted",
            json!({
                "batch": index,
                "publisher": batch.publisher,
                "ops": batch.ops.len(),
                "calldata_bytes": bytes,
                "gas": gas,
                "l1_cost": l1_cost.to_string(),
                "per_tx_fee": per_tx.to_string(),
                "new_root": batch.new_root,
            }),
        );
        self.batches.push(BatchRecord {
            index,
            batch,
            submitted_at: self.now,
            l1_tx,
            gas,
            l1_cost,
            deposit_start,
            finalized_at: None,
            reverted_at: None,
        });
        if self.params.mode == RollupMode::Zk {
            self.finalize(index)?;
        }
        Ok(index)
    }

    /// Re-applies pooled operations on top of the sequencer state, dropping
    /// any that no longer apply.
    fn rebuild_pending(&mut self) {
        let mut pending = self.state.clone();
        for (account, amount) in &self.deposit_queue[self.deposits_consumed..] {
            pending.credit_unchecked(account, *amount);
        }
        let mut kept = VecDeque::with_capacity(self.pool.len());
        for op in self.pool.drain(..) {
            match pending.apply(&op) {
                Ok(()) => kept.push_back(op),
                Err(reason) => self.events.push(self.now, "op_dropped", json!({ "op": op, "reason": reason })),
            }
        }
        self.pool = kept;
        self.pending = pending;
    }

    fn finalize(&mut self, index: u64) -> Result<(), RollupError> {
        let record = &mut self.batches[index as usize];
        record.batch.status = BatchStatus::Finalized;
        record.finalized_at = Some(rational::to_exact_string(&self.now));
        let contract = self.contract.clone();
        for w in self.withdrawals.iter_mut().filter(|w| w.batch == Some(index) && w.credited_at.is_none()) {
            self.l1.transfer_internal(&contract, &w.account, w.amount)?;
            w.credited_at = Some(self.now);
            self.credited_total += w.amount;
        }
        self.events.push(self.now, "batch_finalized", json!({ "batch": index }));
        Ok(())
    }

    /// Finalizes optimistic batches whose windows have elapsed, in order.
    pub fn finalize_due(&mut self) -> Result<Vec<u64>, RollupError> {
        let mut done = Vec::new();
        for i in 0..self.batches.len() {
            let b = &self.batches[i];
            match b.status() {
                BatchStatus::Finalized | BatchStatus::Reverted => continue,
                BatchStatus::Pending => {
                    if self.now < b.submitted_at + self.params.challenge_period_s {
                        break;
                    }
                    self.finalize(i as u64)?;
                    done.push(i as u64);
                }
            }
        }
        Ok(done)
    }

    // ---- data availability and challenges ----

    /// Rebuilds the state from genesis using only batch calldata and the
    /// contract's deposit queue, over the batches `keep` selects.
    fn replay_where(&self, upto: usize, keep: impl Fn(&BatchRecord) -> bool) -> Result<AccountState, RollupError> {
        let mut state = self.genesis.clone();
        for b in self.batches[..upto].iter().filter(|b| keep(b)) {
            let decoded = decode_ops(&self.params, &b.batch.data, &state, &self.deposit_queue[b.deposit_start..])?;
            state = decoded.post;
        }
        Ok(state)
    }

    /// State after every live batch, from L1 data alone.
    pub fn replay_chain(&self) -> Result<AccountState, RollupError> {
        self.replay_where(self.batches.len(), |b| b.status() != BatchStatus::Reverted)
    }

    pub fn replay_finalized(&self) -> Result<AccountState, RollupError> {
        self.replay_where(self.batches.len(), |b| b.status() == BatchStatus::Finalized)
    }

    /// The root the data of batch `index` actually produces.
    pub fn correct_root(&self, index: u64) -> Result<Hash256, RollupError> {
        let b = self.batches.get(index as usize).ok_or(RollupError::NoSuchBatch(index))?;
        let prev = self.replay_where(index as usize, |r| r.status() != BatchStatus::Reverted)?;
        Ok(decode_ops(&self.params, &b.batch.data, &prev, &self.deposit_queue[b.deposit_start..])
            .map(|d| d.post.root())
            .unwrap_or_else(|_| prev.root()))
    }

    /// A challenger claims batch `index` should have produced
    /// `claimed_root`. The contract replays the batch from calldata.
    pub fn challenge_batch(
        &mut self,
        challenger: &AccountId,
        index: u64,
        claimed_root: Hash256,
    ) -> Result<ChallengeOutcome, RollupError> {
        let b = self.batches.get(index as usize).ok_or(RollupError::NoSuchBatch(index))?;
        if self.params.mode != RollupMode::Optimistic || b.status() != BatchStatus::Pending {
            return Err(RollupError::NotChallengeable(index));
        }
        if self.now > b.submitted_at + self.params.challenge_period_s {
            return Err(RollupError::WindowClosed);
        }
        let publisher = b.batch.publisher.clone();
        let published = b.batch.new_root;
        let correct = self.correct_root(index)?;
        let fee = self.gas_fee(CHALLENGE_GAS);
        let contract = self.contract.clone();
        self.l1.send(TxKind::RollupBatch, challenger, &contract, 0, CHALLENGE_BYTES, Some(CHALLENGE_GAS), fee)?;
        if published == correct || claimed_root != correct {
            let penalty = self.params.challenge_bond.min(self.l1.balance(challenger));
            self.l1.transfer_internal(challenger, &publisher, penalty)?;
            self.events.push(
                self.now,
                "challenge_rejected",
                json!({ "batch": index, "challenger": challenger, "penalty": penalty.to_string() }),
            );
            return Ok(ChallengeOutcome::Rejected { penalty });
        }
        let prev = self.replay_where(index as usize, |r| r.status() != BatchStatus::Reverted)?;
        let mut reverted = Vec::new();
        let mut requeue = Vec::new();
        let now_s = rational::to_exact_string(&self.now);
        for r in self.batches[index as usize..].iter_mut() {
            if r.status() != BatchStatus::Pending {
                continue;
            }
            r.batch.status = BatchStatus::Reverted;
            r.reverted_at = Some(now_s.clone());
            reverted.push(r.index);
            requeue.extend(r.batch.ops.iter().filter(|op| !matches!(op, RollupOp::Deposit { .. })).cloned());
        }
        for w in self.withdrawals.iter_mut() {
            if w.batch.is_some_and(|i| i >= index) {
                w.batch = None;
            }
        }
        self.deposits_consumed = self.batches[index as usize].deposit_start;
        self.head_root = prev.root();
        self.state = prev;
        for op in requeue.into_iter().rev() {
            self.pool.push_front(op);
        }
        self.rebuild_pending();
        let slashed = self.bonds.insert(publisher.clone(), 0).unwrap_or(0);
        self.l1.transfer_internal(&contract, challenger, slashed)?;
        self.events.push(
            self.now,
            "fraud_proven",
            json!({ "batch": index, "challenger": challenger, "reverted": reverted, "slashed": slashed.to_string() }),
        );
        Ok(ChallengeOutcome::Fraud { reverted, slashed })
    }

    /// Challenges every pending batch whose claimed root is wrong, as a
    /// vigilant watcher would.
    pub fn watch(&mut self, challenger: &AccountId) -> Result<Vec<ChallengeOutcome>, RollupError> {
        let mut out = Vec::new();
        if self.params.mode != RollupMode::Optimistic {
            return Ok(out);
        }
        let mut i = 0;
        while i < self.batches.len() {
            let b = &self.batches[i];
            if b.status() == BatchStatus::Pending && self.now <= b.submitted_at + self.params.challenge_period_s {
                let correct = self.correct_root(i as u64)?;
                if correct != b.batch.new_root {
                    out.push(self.challenge_batch(challenger, i as u64, correct)?);
                }
            }
            i += 1;
        }
        Ok(out)
    }

    // ---- time ----

    fn sync_l1(&mut self) {
        loop {
            if self.l1.now() + self.l1.params().block_interval_s > self.now {
                break;
            }
            if self.l1.mempool_len() == 0 {
                self.l1.idle_until(self.now);
                break;
            }
            self.l1.produce_block();
        }
    }

    /// Runs the clock forward, publishing a batch at every cadence tick
    /// when auto-publishing, and finalizing batches as windows elapse.
    pub fn advance_time(&mut self, dt: Rational) -> Result<(), RollupError> {
        let target = self.now + dt;
        while self.next_batch_at <= target {
            self.now = self.next_batch_at;
            self.sync_l1();
            self.finalize_due()?;
            if self.auto_publish {
                let op = self.operator.clone();
                if let Err(e) = self.publish(&op) {
                    self.events.push(self.now, "publish_failed", json!({ "publisher": op, "error": e.to_string() }));
                }
            }
            self.next_batch_at += self.params.batch_interval_s;
        }
        self.now = target;
        self.sync_l1();
        self.finalize_due()?;
        Ok(())
    }

    pub fn advance_to(&mut self, t: Rational) -> Result<(), RollupError> {
        if t > self.now {
            self.advance_time(t - self.now)?;
        }
        Ok(())
    }

    // ---- checks ----

    pub fn check_invariants(&self) -> Result<(), String> {
        let mut root = self.genesis.root();
        let mut seen_pending = false;
        for b in self.batches.iter().filter(|b| b.status() != BatchStatus::Reverted) {
            if b.batch.prev_root != root {
                return Err(format!("batch {} does not chain from {root}", b.index));
            }
            root = b.batch.new_root;
            match b.status() {
                BatchStatus::Pending => seen_pending = true,
                BatchStatus::Finalized if seen_pending => {
                    return Err(format!("batch {} finalized after a pending batch", b.index));
                }
                _ => {}
            }
        }
        if root != self.head_root {
            return Err("contract root is not the last live batch's root".into());
        }
        if self.state.root() != self.head_root {
            return Err("sequencer state does not match the contract root".into());
        }
        let replay = self.replay_finalized().map_err(|e| e.to_string())?;
        let finalized: Vec<&BatchRecord> =
            self.batches.iter().filter(|b| b.status() == BatchStatus::Finalized).collect();
        let deposited: Amount = finalized
            .iter()
            .flat_map(|b| b.batch.ops.iter())
            .map(|op| match op {
                RollupOp::Deposit { amount, .. } => *amount,
                _ => 0,
            })
            .sum();
        let withdrawn: Amount = finalized
            .iter()
            .flat_map(|b| b.batch.ops.iter())
            .map(|op| match op {
                RollupOp::Withdraw { amount, .. } => *amount,
                _ => 0,
            })
            .sum();
        if replay.total() + withdrawn != deposited {
            return Err(format!(
                "conservation: balances {} + withdrawals {withdrawn} != deposits {deposited}",
                replay.total()
            ));
        }
        if withdrawn != self.credited_total {
            return Err("finalized withdrawals not all credited".into());
        }
        let queued: Amount = self.deposit_queue.iter().map(|(_, a)| a).sum();
        let bonds: Amount = self.bonds.values().sum();
        let held = self.l1.balance(&self.contract);
        if held != queued + bonds - self.credited_total {
            return Err(format!("contract holds {held}, owes {}", queued + bonds - self.credited_total));
        }
        self.l1.audit()
    }

    /// One JSON object per batch.
    pub fn batch_ledger_jsonl(&self) -> String {
        let mut out = String::new();
        for b in &self.batches {
            let per_tx = batch_fee_split(b.l1_cost, b.batch.ops.len().max(1)).expect("non-empty").per_tx;
            let line = json!({
                "index": b.index,
                "publisher": b.batch.publisher,
                "ops": b.batch.ops.len(),
                "transfers": b.batch.transfer_count(),
                "calldata_bytes": b.batch.data.len(),
                "compressed_bytes": b.batch.compressed_bytes(&self.params),
                "gas": b.gas,
                "l1_cost": b.l1_cost.to_string(),
                "per_tx_fee": per_tx.to_string(),
                "prev_root": b.batch.prev_root,
                "new_root": b.batch.new_root,
                "submitted_at": rational::to_exact_string(&b.submitted_at),
                "status": b.status(),
                "finalized_at": b.finalized_at,
                "reverted_at": b.reverted_at,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::int;

    const ETH: Amount = WEI_PER_ETH;

    fn id(s: &str) -> AccountId {
        AccountId::from(s)
    }

    fn rollup(mode: RollupMode) -> Rollup {
        let mut r = Rollup::new(RollupParams::preset(mode), ChainParams::ethereum_2021(), 1).unwrap();
        for u in ["alice", "bob", "carol", "pub2", "watcher"] {
            r.fund_l1(&id(u), 100 * ETH);
        }
        r
    }

    fn funded(mode: RollupMode) -> Rollup {
        let mut r = rollup(mode);
        r.deposit(&id("alice"), 10 * ETH).unwrap();
        r.deposit(&id("bob"), 10 * ETH).unwrap();
        r.register(&id("carol")).unwrap();
        r.advance_time(r.params().batch_interval_s).unwrap();
        r
    }

    #[test]
    fn deposit_and_transfer_zk_finalizes_on_submission() {
        let mut r = funded(RollupMode::Zk);
        assert_eq!(r.batches().len(), 1);
        assert_eq!(r.batches()[0].status(), BatchStatus::Finalized);
        r.transfer(&id("alice"), &id("carol"), ETH).unwrap();
        r.advance_time(int(600)).unwrap();
        assert_eq!(r.state().balance(&id("carol")), ETH);
        assert_eq!(r.finalized_root(), r.head_root());
        r.check_invariants().unwrap();
        assert_eq!(r.replay_chain().unwrap().root(), r.head_root());
    }

    #[test]
    fn stale_prev_root_rejected() {
        let mut r = funded(RollupMode::Zk);
        r.stake_publisher(&id("pub2")).unwrap();
        r.transfer(&id("alice"), &id("carol"), ETH).unwrap();
        let op = id("rollup:operator");
        let (mut first, post1) = r.build_next(&op).unwrap().unwrap();
        let (mut second, post2) = r.build_next(&id("pub2")).unwrap().unwrap();
        let prover = r.prover().clone();
        first.proof = Some(prove_batch(&first, r.state(), &[], r.params(), r.setup(), &prover).unwrap());
        second.proof = Some(prove_batch(&second, r.state(), &[], r.params(), r.setup(), &prover).unwrap());
        r.submit_batch(first, post1).unwrap();
        assert_eq!(r.submit_batch(second, post2), Err(RollupError::StalePrevRoot));
    }

    #[test]
    fn zk_rejects_unproved_and_fraudulent_batches() {
        let mut r = funded(RollupMode::Zk);
        r.transfer(&id("alice"), &id("carol"), ETH).unwrap();
        let op = id("rollup:operator");
        let (batch, post) = r.build_next(&op).unwrap().unwrap();
        assert_eq!(r.submit_batch(batch.clone(), post.clone()), Err(RollupError::MissingProof));
        let prover = r.prover().clone();
        let att = prove_batch(&batch, r.state(), &[], r.params(), r.setup(), &prover).unwrap();
        let forged = RollupBatch { proof: Some(att), ..batch.with_claimed_root(Hash256::leaf(b"x")) };
        assert_eq!(r.submit_batch(forged, post), Err(RollupError::InvalidProof));
        r.schedule_fraud(ETH);
        assert_eq!(r.publish(&op), Err(RollupError::MissingProof));
        assert_eq!(r.batches().len(), 1);
        r.check_invariants().unwrap();
    }

    #[test]
    fn unstaked_publisher_rejected() {
        let mut r = funded(RollupMode::Zk);
        assert_eq!(r.transfer(&id("alice"), &id("nobody"), 1), Err(RollupError::UnknownAccount(id("nobody"))));
        r.transfer(&id("alice"), &id("carol"), ETH).unwrap();
        r.set_auto_publish(false);
        assert_eq!(r.publish(&id("pub2")), Err(RollupError::NotStaked(id("pub2"))));
    }

    #[test]
    fn zk_withdrawal_takes_one_batch_interval() {
        let mut r = funded(RollupMode::Zk);
        let w = r.withdraw(&id("alice"), ETH).unwrap();
        let before = r.l1().balance(&id("alice"));
        r.advance_time(int(600)).unwrap();
        assert_eq!(r.withdrawals()[w as usize].latency(), Some(int(600)));
        assert_eq!(r.l1().balance(&id("alice")), before + ETH);
        let fee = r.params().withdrawal_fee;
        assert_eq!(r.state().balance(&id("alice")), 9 * ETH - fee);
        r.check_invariants().unwrap();
    }

    #[test]
    fn optimistic_withdrawal_waits_for_window() {
        let mut r = funded(RollupMode::Optimistic);
        let w = r.withdraw(&id("alice"), ETH).unwrap();
        r.advance_time(int(600)).unwrap();
        assert!(r.withdrawals()[w as usize].credited_at.is_none());
        r.advance_time(int(7 * 86_400)).unwrap();
        assert_eq!(r.withdrawals()[w as usize].latency(), Some(int(600 + 7 * 86_400)));
        r.check_invariants().unwrap();
    }

    #[test]
    fn overdrawn_withdrawal_rejected() {
        let mut r = funded(RollupMode::Zk);
        assert!(matches!(r.withdraw(&id("alice"), 10 * ETH), Err(RollupError::InsufficientRollupBalance { .. })));
    }

    #[test]
    fn fraud_reverts_successors_and_slashes() {
        let mut r = funded(RollupMode::Optimistic);
        let after_first = r.state().clone();
        r.transfer(&id("alice"), &id("carol"), ETH).unwrap();
        r.schedule_fraud(50 * ETH);
        r.advance_time(int(600)).unwrap();
        let k = r.batches().len() as u64 - 1;
        for _ in 0..3 {
            r.transfer(&id("bob"), &id("carol"), ETH).unwrap();
            r.advance_time(int(600)).unwrap();
        }
        assert_eq!(r.batches().len(), 5);
        let before = r.l1().balance(&id("watcher"));
        let out = r.watch(&id("watcher")).unwrap();
        assert_eq!(out, vec![ChallengeOutcome::Fraud { reverted: vec![1, 2, 3, 4], slashed: 10 * ETH }]);
        assert_eq!(r.state().root(), after_first.root());
        assert_eq!(r.head_root(), r.batches()[k as usize - 1].batch.new_root);
        assert!(r.l1().balance(&id("watcher")) > before);
        assert_eq!(r.pool_len(), 4);
        r.check_invariants().unwrap();
    }

    #[test]
    fn wrong_challenge_is_penalized() {
        let mut r = funded(RollupMode::Optimistic);
        let root = r.head_root();
        let before = r.l1().balance(&id("watcher"));
        let out = r.challenge_batch(&id("watcher"), 0, root.flip_bit(1)).unwrap();
        assert_eq!(out, ChallengeOutcome::Rejected { penalty: ETH });
        assert!(r.l1().balance(&id("watcher")) < before - ETH + 1);
        assert_eq!(r.head_root(), root);
        r.advance_time(int(8 * 86_400)).unwrap();
        assert_eq!(r.challenge_batch(&id("watcher"), 0, root), Err(RollupError::NotChallengeable(0)));
    }

    #[test]
    fn challenge_allowed_until_window_ends() {
        let mut r = funded(RollupMode::Optimistic);
        r.set_auto_publish(false);
        r.transfer(&id("alice"), &id("carol"), ETH).unwrap();
        r.schedule_fraud(ETH);
        let op = id("rollup:operator");
        let i = r.publish(&op).unwrap().unwrap();
        let period = r.params().challenge_period_s;
        r.set_auto_publish(true);
        let correct = r.correct_root(i).unwrap();
        r.advance_time(period - int(1)).unwrap();
        assert!(r.challenge_batch(&id("watcher"), i, correct).is_ok());
    }

    #[test]
    fn batched_transfer_limits_and_fee() {
        let mut r = rollup(RollupMode::Zk);
        let customers: Vec<AccountId> = (0..11).map(|i| id(&format!("c{i}"))).collect();
        for c in &customers {
            r.fund_l1(c, ETH);
            r.deposit(c, ETH / 10).unwrap();
        }
        r.fund_l1(&id("shop"), 2 * ETH);
        r.deposit(&id("shop"), ETH).unwrap();
        r.advance_time(int(600)).unwrap();
        let bundle: Vec<_> = customers[..10].iter().map(|c| (c.clone(), id("shop"), ETH / 100)).collect();
        let fee = r.batched_transfer(&id("shop"), &bundle).unwrap();
        assert_eq!(crate::types::format_units(fee, 18), "0.0001084");
        let too_many: Vec<_> = customers.iter().map(|c| (c.clone(), id("shop"), 1)).collect();
        assert!(matches!(
            r.batched_transfer(&id("shop"), &too_many),
            Err(RollupError::TooManyAuthors { authors: 11, max: 10 })
        ));
        let pool = r.pool_len();
        let mut bad = bundle.clone();
        bad[4].2 = 10 * ETH;
        assert!(matches!(r.batched_transfer(&id("shop"), &bad), Err(RollupError::InvalidTx { index: 4, .. })));
        assert_eq!(r.pool_len(), pool);
        r.batched_transfer(&id("c10"), &bundle[..1]).unwrap();
        r.advance_time(int(600)).unwrap();
        assert_eq!(r.state().balance(&id("shop")), ETH + 11 * (ETH / 100) - fee);
        r.check_invariants().unwrap();
    }

    #[test]
    fn odd_sized_bundles_publish() {
        let mut r = rollup(RollupMode::Zk);
        let customers: Vec<AccountId> = (0..3).map(|i| id(&format!("c{i}"))).collect();
        for c in &customers {
            r.fund_l1(c, ETH);
            r.deposit(c, ETH / 10).unwrap();
        }
        r.fund_l1(&id("shop"), ETH);
        r.register(&id("shop")).unwrap();
        r.advance_time(int(600)).unwrap();
        let bundle: Vec<_> = customers.iter().map(|c| (c.clone(), id("shop"), ETH / 100)).collect();
        // 3 x 10,840 gwei has no 11-bit mantissa encoding.
        let fee = r.batched_transfer(&id("shop"), &bundle).unwrap();
        assert_eq!(fee, 3 * r.params().transfer_fee);
        r.advance_time(int(600)).unwrap();
        assert_eq!(r.pool_len(), 0);
        assert_eq!(r.state().balance(&id("shop")), 3 * (ETH / 100) - fee);
        assert_eq!(r.replay_chain().unwrap().root(), r.head_root());
    }

    #[test]
    fn unencodable_transfer_rejected_before_pooling() {
        let mut r = funded(RollupMode::Zk);
        let odd = 134_217_729;
        assert!(matches!(r.transfer(&id("alice"), &id("carol"), odd), Err(RollupError::InvalidTx { .. })));
        assert_eq!(r.pool_len(), 0);
        let mut o = funded(RollupMode::Optimistic);
        o.transfer(&id("alice"), &id("carol"), odd).unwrap();
    }

    #[test]
    fn ledger_has_one_line_per_batch() {
        let mut r = funded(RollupMode::Zk);
        r.transfer(&id("alice"), &id("carol"), ETH).unwrap();
        r.advance_time(int(600)).unwrap();
        let ledger = r.batch_ledger_jsonl();
        assert_eq!(ledger.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(ledger.lines().next().unwrap()).unwrap();
        assert_eq!(first["status"], "finalized");
    }
}
