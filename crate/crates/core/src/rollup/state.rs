use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::hash::Hash256;
use crate::merkle::merkle_root_or_empty;
use crate::types::{AccountId, Amount};

use super::RollupError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    /// Registration order; compressed transfers refer to accounts by index.
    pub index: u32,
    pub balance: Amount,
    pub nonce: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: AccountId,
    pub to: AccountId,
    pub amount: Amount,
    pub fee: Amount,
    pub nonce: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RollupOp {
    /// Consumes the next entry of the contract's deposit queue. Registers
    /// the account on first sight; a zero amount only registers.
    Deposit {
        account: AccountId,
        amount: Amount,
    },
    Transfer(Transfer),
    Withdraw {
        account: AccountId,
        amount: Amount,
        fee: Amount,
        nonce: u32,
    },
}

/// Balances keyed by account id; fees are credited to the account at
/// index 0.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AccountState {
    accounts: BTreeMap<AccountId, Account>,
    by_index: Vec<AccountId>,
}

impl AccountState {
    pub fn with_fee_account(fee_account: &AccountId) -> Self {
        let mut s = Self::default();
        s.register(fee_account);
        s
    }

    pub fn get(&self, id: &AccountId) -> Option<&Account> {
        self.accounts.get(id)
    }

    pub fn balance(&self, id: &AccountId) -> Amount {
        self.accounts.get(id).map_or(0, |a| a.balance)
    }

    pub fn nonce(&self, id: &AccountId) -> u32 {
        self.accounts.get(id).map_or(0, |a| a.nonce)
    }

    pub fn id_at(&self, index: u32) -> Option<&AccountId> {
        self.by_index.get(index as usize)
    }

    pub fn fee_account(&self) -> &AccountId {
        &self.by_index[0]
    }

    pub fn len(&self) -> usize {
        self.by_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_index.is_empty()
    }

    pub fn total(&self) -> Amount {
        self.accounts.values().map(|a| a.balance).sum()
    }

    pub fn balances(&self) -> BTreeMap<AccountId, Amount> {
        self.accounts.iter().map(|(k, a)| (k.clone(), a.balance)).collect()
    }

    /// Index of `id`, registering it if new.
    pub fn register(&mut self, id: &AccountId) -> u32 {
        if let Some(a) = self.accounts.get(id) {
            return a.index;
        }
        let index = self.by_index.len() as u32;
        self.by_index.push(id.clone());
        self.accounts.insert(id.clone(), Account { index, balance: 0, nonce: 0 });
        index
    }

    /// Merkle root over account leaves in id order.
    pub fn root(&self) -> Hash256 {
        let leaves: Vec<Hash256> = self
            .accounts
            .iter()
            .map(|(id, a)| {
                Hash256::leaf(
                    &[
                        &a.index.to_le_bytes()[..],
                        id.as_str().as_bytes(),
                        &[0xff],
                        &a.balance.to_le_bytes(),
                        &a.nonce.to_le_bytes(),
                    ]
                    .concat(),
                )
            })
            .collect();
        merkle_root_or_empty(&leaves)
    }

    /// Adds `amount` to `id` without any checks. Used to model a publisher
    /// lying about the post-state.
    pub fn credit_unchecked(&mut self, id: &AccountId, amount: Amount) {
        self.register(id);
        self.accounts.get_mut(id).expect("registered").balance += amount;
    }

    fn debit(&mut self, id: &AccountId, amount: Amount, nonce: u32) -> Result<(), String> {
        let a = self.accounts.get_mut(id).ok_or_else(|| format!("unknown account {id}"))?;
        if a.nonce != nonce {
            return Err(format!("nonce {nonce}, expected {}", a.nonce));
        }
        if a.balance < amount {
            return Err(format!("{id} holds {}, needs {amount}", a.balance));
        }
        a.balance -= amount;
        a.nonce += 1;
        Ok(())
    }

    /// Applies one operation, leaving the state untouched on error.
    pub fn apply(&mut self, op: &RollupOp) -> Result<(), String> {
        match op {
            RollupOp::Deposit { account, amount } => {
                self.credit_unchecked(account, *amount);
            }
            RollupOp::Transfer(t) => {
                if t.amount == 0 && t.fee == 0 {
                    return Err("empty transfer".into());
                }
                if !self.accounts.contains_key(&t.to) {
                    return Err(format!("unknown recipient {}", t.to));
                }
                self.debit(&t.from, t.amount + t.fee, t.nonce)?;
                self.credit_unchecked(&t.to, t.amount);
                let fee_account = self.fee_account().clone();
                self.credit_unchecked(&fee_account, t.fee);
            }
            RollupOp::Withdraw { account, amount, fee, nonce } => {
                if *amount == 0 {
                    return Err("zero withdrawal".into());
                }
                self.debit(account, amount + fee, *nonce)?;
                let fee_account = self.fee_account().clone();
                self.credit_unchecked(&fee_account, *fee);
            }
        }
        Ok(())
    }

    /// Applies `ops` in order, stopping at the first invalid one.
    pub fn apply_all(&mut self, ops: &[RollupOp]) -> Result<(), RollupError> {
        for (index, op) in ops.iter().enumerate() {
            self.apply(op).map_err(|reason| RollupError::InvalidTx { index, reason })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> AccountId {
        AccountId::from(s)
    }

    fn funded() -> AccountState {
        let mut s = AccountState::with_fee_account(&id("op"));
        s.apply(&RollupOp::Deposit { account: id("a"), amount: 100 }).unwrap();
        s.apply(&RollupOp::Deposit { account: id("b"), amount: 0 }).unwrap();
        s
    }

    fn tx(from: &str, to: &str, amount: Amount, fee: Amount, nonce: u32) -> RollupOp {
        RollupOp::Transfer(Transfer { from: id(from), to: id(to), amount, fee, nonce })
    }

    #[test]
    fn transfer_moves_value_and_fee() {
        let mut s = funded();
        s.apply(&tx("a", "b", 30, 2, 0)).unwrap();
        assert_eq!((s.balance(&id("a")), s.balance(&id("b")), s.balance(&id("op"))), (68, 30, 2));
        assert_eq!(s.nonce(&id("a")), 1);
        assert_eq!(s.total(), 100);
    }

    #[test]
    fn rejects_replay_overdraft_and_unknown() {
        let mut s = funded();
        s.apply(&tx("a", "b", 30, 0, 0)).unwrap();
        let before = s.clone();
        assert!(s.apply(&tx("a", "b", 1, 0, 0)).is_err());
        assert!(s.apply(&tx("a", "b", 71, 0, 1)).is_err());
        assert!(s.apply(&tx("a", "zed", 1, 0, 1)).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn root_tracks_every_field() {
        let s = funded();
        let mut t = s.clone();
        t.apply(&tx("a", "b", 1, 0, 0)).unwrap();
        assert_ne!(s.root(), t.root());
        let mut u = s.clone();
        u.credit_unchecked(&id("a"), 1);
        assert_ne!(s.root(), u.root());
    }

    #[test]
    fn withdraw_burns_amount() {
        let mut s = funded();
        s.apply(&RollupOp::Withdraw { account: id("a"), amount: 40, fee: 1, nonce: 0 }).unwrap();
        assert_eq!(s.balance(&id("a")), 59);
        assert_eq!(s.total(), 60);
    }
}
