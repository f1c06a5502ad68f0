//! Simulated Layer-1 chain.
//!
//! Blocks are produced on a deterministic timer; there is no proof of work.
//! A submitted transaction executes against the ledger immediately (balances
//! move, the fee is collected) and waits in the mempool until a block has room
//! for it. Inclusion height is what protocols use for finality.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::hash::{domain, Hash256};
use crate::merkle::merkle_root_or_empty;
use crate::rational::{self, int, ratio, Rational};
use crate::types::{AccountId, Amount};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum L1Error {
    #[error("invalid chain parameters: {0}")]
    InvalidParams(String),
    #[error("unknown chain preset {0:?}")]
    UnknownPreset(String),
    #[error("duplicate transaction id {0}")]
    DuplicateTx(Hash256),
    #[error("transaction id does not match its contents")]
    TxIdMismatch,
    #[error("transaction of {size} bytes / {gas} gas can never fit in a block")]
    TxTooLarge { size: u64, gas: u64 },
    #[error("transaction size must be positive")]
    ZeroSize,
    #[error("{account} has {available}, needs {needed}")]
    InsufficientFunds { account: AccountId, needed: Amount, available: Amount },
}

/// Capacity and fee parameters of the base chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainParams {
    pub block_size_bytes: u64,
    #[serde(with = "rational::serde_exact")]
    pub block_interval_s: Rational,
    #[serde(with = "rational::serde_exact")]
    pub relay_time_s: Rational,
    pub avg_tx_size_bytes: u64,
    pub gas_limit_per_block: u64,
    pub gas_per_byte: u64,
    /// Observed mean block time; defaults to the production interval.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_rational")]
    pub avg_block_time_s: Option<Rational>,
}

mod opt_rational {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Rational>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(r) => rational::serde_exact::serialize(r, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Rational>, D::Error> {
        rational::serde_exact::deserialize(d).map(Some)
    }
}

pub const PRESET_NAMES: [&str; 3] = ["bitcoin-2021", "bitcoin-segwit-4mb", "ethereum-2021"];

impl ChainParams {
    /// 1 MiB blocks every 600 s, 380-byte average transaction, 14 s relay.
    /// Bitcoin has no gas; one gas unit per byte keeps the gas limit equal to
    /// the byte limit.
    pub fn bitcoin_2021() -> Self {
        ChainParams {
            block_size_bytes: 1_048_576,
            block_interval_s: int(600),
            relay_time_s: int(14),
            avg_tx_size_bytes: 380,
            gas_limit_per_block: 1_048_576,
            gas_per_byte: 1,
            avg_block_time_s: None,
        }
    }

    /// Theoretical SegWit weight limit. Observed blocks are closer to 2 MB.
    pub fn bitcoin_segwit_4mb() -> Self {
        ChainParams { block_size_bytes: 4_194_304, gas_limit_per_block: 4_194_304, ..Self::bitcoin_2021() }
    }

    /// 12.5M gas blocks, 16 gas per calldata byte, 13 s blocks. The average
    /// transaction size is chosen so the preset lands near 14.3 TPS.
    pub fn ethereum_2021() -> Self {
        ChainParams {
            block_size_bytes: 12_500_000 / 16,
            block_interval_s: int(13),
            relay_time_s: int(2),
            avg_tx_size_bytes: 4_200,
            gas_limit_per_block: 12_500_000,
            gas_per_byte: 16,
            avg_block_time_s: Some(int(13)),
        }
    }

    pub fn preset(name: &str) -> Result<Self, L1Error> {
        match name {
            "bitcoin-2021" => Ok(Self::bitcoin_2021()),
            "bitcoin-segwit-4mb" => Ok(Self::bitcoin_segwit_4mb()),
            "ethereum-2021" => Ok(Self::ethereum_2021()),
            other => Err(L1Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn avg_block_time(&self) -> Rational {
        self.avg_block_time_s.unwrap_or(self.block_interval_s)
    }

    /// All fields strictly positive. The relay constraint is checked
    /// separately by [`check_relay_constraint`].
    pub fn validate(&self) -> Result<(), L1Error> {
        let bad = |field: &str| Err(L1Error::InvalidParams(format!("{field} must be positive")));
        if self.block_size_bytes == 0 {
            return bad("block_size_bytes");
        }
        if !self.block_interval_s.is_positive() {
            return bad("block_interval_s");
        }
        if !self.relay_time_s.is_positive() {
            return bad("relay_time_s");
        }
        if self.avg_tx_size_bytes == 0 {
            return bad("avg_tx_size_bytes");
        }
        if self.gas_limit_per_block == 0 {
            return bad("gas_limit_per_block");
        }
        if self.gas_per_byte == 0 {
            return bad("gas_per_byte");
        }
        if let Some(t) = &self.avg_block_time_s {
            if !t.is_positive() {
                return bad("avg_block_time_s");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Capacity {
    #[serde(with = "rational::serde_exact")]
    pub tpb: Rational,
    #[serde(with = "rational::serde_exact")]
    pub tps: Rational,
}

/// Transactions per block and per second for average-sized transactions.
pub fn tps_capacity(params: &ChainParams) -> Result<Capacity, L1Error> {
    params.validate()?;
    let tpb = ratio(params.block_size_bytes as i128, params.avg_tx_size_bytes as i128);
    let tps = tpb / params.block_interval_s;
    Ok(Capacity { tpb, tps })
}

/// True iff blocks are not produced faster than they propagate.
pub fn check_relay_constraint(params: &ChainParams) -> bool {
    params.block_interval_s >= params.relay_time_s
}

pub fn byte_fee(size_bytes: u64, feerate_per_byte: u64) -> Amount {
    size_bytes as Amount * feerate_per_byte as Amount
}

pub fn gas_fee(gas: u64, gas_price: u64) -> Amount {
    gas as Amount * gas_price as Amount
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    Transfer,
    ChannelOpen,
    ChannelClose,
    PlasmaCommit,
    PlasmaDeposit,
    PlasmaExit,
    RollupBatch,
    RollupDeposit,
}

impl TxKind {
    fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct L1Transaction {
    pub id: Hash256,
    pub sender: AccountId,
    pub receiver: AccountId,
    pub amount: Amount,
    pub size_bytes: u64,
    pub gas_used: u64,
    pub fee: Amount,
    pub kind: TxKind,
    pub nonce: u64,
}

impl L1Transaction {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: TxKind,
        sender: AccountId,
        receiver: AccountId,
        amount: Amount,
        size_bytes: u64,
        gas_used: u64,
        fee: Amount,
        nonce: u64,
    ) -> Self {
        let mut tx =
            L1Transaction { id: Hash256::ZERO, sender, receiver, amount, size_bytes, gas_used, fee, kind, nonce };
        tx.id = tx.compute_id();
        tx
    }

    /// Length-prefixed little-endian encoding of every field except the id.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(96);
        out.push(self.kind.code());
        for account in [&self.sender, &self.receiver] {
            out.extend_from_slice(&(account.0.len() as u32).to_le_bytes());
            out.extend_from_slice(account.0.as_bytes());
        }
        out.extend_from_slice(&self.amount.to_le_bytes());
        out.extend_from_slice(&self.size_bytes.to_le_bytes());
        out.extend_from_slice(&self.gas_used.to_le_bytes());
        out.extend_from_slice(&self.fee.to_le_bytes());
        out.extend_from_slice(&self.nonce.to_le_bytes());
        out
    }

    pub fn compute_id(&self) -> Hash256 {
        Hash256::tagged(domain::TX, &[&self.canonical_bytes()])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Block {
    pub height: u64,
    pub parent_hash: Hash256,
    pub tx_root: Hash256,
    #[serde(with = "rational::serde_exact")]
    pub timestamp_s: Rational,
    pub txs: Vec<L1Transaction>,
}

impl Block {
    pub fn hash(&self) -> Hash256 {
        let timestamp = rational::to_exact_string(&self.timestamp_s);
        Hash256::tagged(
            domain::BLOCK,
            &[&self.height.to_le_bytes(), &self.parent_hash.0, &self.tx_root.0, timestamp.as_bytes()],
        )
    }

    pub fn bytes_used(&self) -> u64 {
        self.txs.iter().map(|t| t.size_bytes).sum()
    }

    pub fn gas_used(&self) -> u64 {
        self.txs.iter().map(|t| t.gas_used).sum()
    }
}

/// One chain instance: ledger, mempool and block history.
#[derive(Debug, Clone)]
pub struct L1Chain {
    params: ChainParams,
    blocks: Vec<Block>,
    mempool: Vec<L1Transaction>,
    known: BTreeSet<Hash256>,
    inclusion: BTreeMap<Hash256, u64>,
    balances: BTreeMap<AccountId, Amount>,
    nonces: BTreeMap<AccountId, u64>,
    fees_collected: Amount,
    minted: Amount,
    /// Slot clock; runs ahead of the tip when empty slots are elided.
    clock: Rational,
}

impl L1Chain {
    pub fn new(params: ChainParams) -> Result<Self, L1Error> {
        params.validate()?;
        let genesis = Block {
            height: 0,
            parent_hash: Hash256::ZERO,
            tx_root: merkle_root_or_empty(&[]),
            timestamp_s: Rational::zero(),
            txs: Vec::new(),
        };
        Ok(L1Chain {
            params,
            blocks: vec![genesis],
            mempool: Vec::new(),
            known: BTreeSet::new(),
            inclusion: BTreeMap::new(),
            balances: BTreeMap::new(),
            nonces: BTreeMap::new(),
            fees_collected: 0,
            minted: 0,
            clock: Rational::zero(),
        })
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn height(&self) -> u64 {
        self.tip().height
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("genesis always present")
    }

    pub fn now(&self) -> Rational {
        self.clock
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    pub fn mempool_bytes(&self) -> u64 {
        self.mempool.iter().map(|t| t.size_bytes).sum()
    }

    pub fn balance(&self, account: &AccountId) -> Amount {
        self.balances.get(account).copied().unwrap_or(0)
    }

    pub fn fees_collected(&self) -> Amount {
        self.fees_collected
    }

    pub fn minted(&self) -> Amount {
        self.minted
    }

    pub fn total_balances(&self) -> Amount {
        self.balances.values().sum()
    }

    /// Faucet credit, tracked so that supply can be audited.
    pub fn mint(&mut self, account: &AccountId, amount: Amount) {
        *self.balances.entry(account.clone()).or_default() += amount;
        self.minted += amount;
    }

    fn debit(&mut self, account: &AccountId, amount: Amount) -> Result<(), L1Error> {
        let available = self.balance(account);
        if available < amount {
            return Err(L1Error::InsufficientFunds { account: account.clone(), needed: amount, available });
        }
        self.balances.insert(account.clone(), available - amount);
        Ok(())
    }

    fn credit(&mut self, account: &AccountId, amount: Amount) {
        *self.balances.entry(account.clone()).or_default() += amount;
    }

    /// Value movement performed inside a contract call (channel multisig
    /// payout, exit credit). It rides on a transaction that the caller
    /// submits separately, so it consumes no block space of its own.
    pub fn transfer_internal(&mut self, from: &AccountId, to: &AccountId, amount: Amount) -> Result<(), L1Error> {
        self.debit(from, amount)?;
        self.credit(to, amount);
        Ok(())
    }

    pub fn next_nonce(&self, account: &AccountId) -> u64 {
        self.nonces.get(account).copied().unwrap_or(0)
    }

    pub fn submit_tx(&mut self, tx: L1Transaction) -> Result<Hash256, L1Error> {
        if tx.size_bytes == 0 {
            return Err(L1Error::ZeroSize);
        }
        if tx.id != tx.compute_id() {
            return Err(L1Error::TxIdMismatch);
        }
        if self.known.contains(&tx.id) {
            return Err(L1Error::DuplicateTx(tx.id));
        }
        if tx.size_bytes > self.params.block_size_bytes || tx.gas_used > self.params.gas_limit_per_block {
            return Err(L1Error::TxTooLarge { size: tx.size_bytes, gas: tx.gas_used });
        }
        self.debit(&tx.sender, tx.amount + tx.fee)?;
        self.credit(&tx.receiver, tx.amount);
        self.fees_collected += tx.fee;
        let nonce = self.nonces.entry(tx.sender.clone()).or_default();
        *nonce = (*nonce).max(tx.nonce + 1);
        self.known.insert(tx.id);
        let id = tx.id;
        self.mempool.push(tx);
        Ok(id)
    }

    /// Builds a transaction with the sender's next nonce and submits it.
    /// Gas defaults to `size_bytes · gas_per_byte` when `gas` is `None`.
    #[allow(clippy::too_many_arguments)]
    pub fn send(
        &mut self,
        kind: TxKind,
        sender: &AccountId,
        receiver: &AccountId,
        amount: Amount,
        size_bytes: u64,
        gas: Option<u64>,
        fee: Amount,
    ) -> Result<Hash256, L1Error> {
        let gas = gas.unwrap_or(size_bytes * self.params.gas_per_byte);
        let tx = L1Transaction::new(
            kind,
            sender.clone(),
            receiver.clone(),
            amount,
            size_bytes,
            gas,
            fee,
            self.next_nonce(sender),
        );
        self.submit_tx(tx)
    }

    /// Drains the mempool in (fee desc, id asc) order into a new block,
    /// skipping transactions that no longer fit.
    pub fn produce_block(&mut self) -> &Block {
        let mut pending = std::mem::take(&mut self.mempool);
        pending.sort_by(|a, b| b.fee.cmp(&a.fee).then_with(|| a.id.cmp(&b.id)));
        let mut bytes = 0u64;
        let mut gas = 0u64;
        let mut txs = Vec::new();
        for tx in pending {
            if bytes + tx.size_bytes <= self.params.block_size_bytes
                && gas + tx.gas_used <= self.params.gas_limit_per_block
            {
                bytes += tx.size_bytes;
                gas += tx.gas_used;
                txs.push(tx);
            } else {
                self.mempool.push(tx);
            }
        }
        let parent = self.tip();
        let height = parent.height + 1;
        let ids: Vec<Hash256> = txs.iter().map(|t| t.id).collect();
        let block = Block {
            height,
            parent_hash: parent.hash(),
            tx_root: merkle_root_or_empty(&ids),
            timestamp_s: self.clock + self.params.block_interval_s,
            txs,
        };
        for id in ids {
            self.inclusion.insert(id, height);
        }
        self.clock = block.timestamp_s;
        self.blocks.push(block);
        self.tip()
    }

    /// Moves the slot clock to the last slot boundary at or before `t`
    /// without materializing the empty blocks in between. Only allowed
    /// while the mempool is empty, so no transaction's inclusion is
    /// affected. Returns the number of elided slots.
    pub fn idle_until(&mut self, t: Rational) -> u64 {
        if !self.mempool.is_empty() || t <= self.clock {
            return 0;
        }
        let slots = rational::floor(&((t - self.clock) / self.params.block_interval_s)) as u64;
        self.clock += self.params.block_interval_s * Rational::from_integer(slots as i128);
        slots
    }

    /// Produces blocks until the tip timestamp reaches `t`.
    pub fn produce_until(&mut self, t: Rational) -> usize {
        let mut produced = 0;
        while self.now() + self.params.block_interval_s <= t {
            self.produce_block();
            produced += 1;
        }
        produced
    }

    pub fn inclusion_height(&self, id: &Hash256) -> Option<u64> {
        self.inclusion.get(id).copied()
    }

    pub fn inclusion_time(&self, id: &Hash256) -> Option<Rational> {
        self.inclusion_height(id).map(|h| self.blocks[h as usize].timestamp_s)
    }

    /// Included with at least `depth` blocks on top (including its own).
    pub fn is_final(&self, id: &Hash256, depth: u64) -> bool {
        self.inclusion_height(id).is_some_and(|h| self.height() + 1 >= h + depth)
    }

    /// Linkage, merkle roots and capacity of every stored block.
    pub fn audit(&self) -> Result<(), String> {
        for pair in self.blocks.windows(2) {
            let (prev, block) = (&pair[0], &pair[1]);
            if block.parent_hash != prev.hash() {
                return Err(format!("block {} does not link to its parent", block.height));
            }
            if block.height != prev.height + 1 {
                return Err(format!("height gap at {}", block.height));
            }
        }
        for block in &self.blocks {
            let ids: Vec<Hash256> = block.txs.iter().map(|t| t.id).collect();
            if block.tx_root != merkle_root_or_empty(&ids) {
                return Err(format!("block {} tx_root mismatch", block.height));
            }
            if block.bytes_used() > self.params.block_size_bytes {
                return Err(format!("block {} exceeds byte limit", block.height));
            }
            if block.gas_used() > self.params.gas_limit_per_block {
                return Err(format!("block {} exceeds gas limit", block.height));
            }
        }
        if self.total_balances() + self.fees_collected != self.minted {
            return Err("supply mismatch".to_string());
        }
        Ok(())
    }
}
