use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::hash::{domain, sign, Hash256, Secret};
use crate::types::{AccountId, Amount};

use super::PlasmaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Outpoint {
    pub tx: Hash256,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOutput {
    pub owner: AccountId,
    pub amount: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utxo {
    pub outpoint: Outpoint,
    pub owner: AccountId,
    pub amount: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxInput {
    pub outpoint: Outpoint,
    pub signature: Hash256,
}

/// A child-chain transfer. Signatures cover [`PlasmaTx::id`], which
/// excludes them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlasmaTx {
    pub inputs: Vec<TxInput>,
    pub outputs: Vec<TxOutput>,
    pub fee: Amount,
    /// Free-form value bound into the id.
    pub memo: u64,
}

impl PlasmaTx {
    pub fn unsigned(inputs: &[Outpoint], outputs: Vec<TxOutput>, fee: Amount) -> Self {
        PlasmaTx {
            inputs: inputs.iter().map(|&outpoint| TxInput { outpoint, signature: Hash256::ZERO }).collect(),
            outputs,
            fee,
            memo: 0,
        }
    }

    pub fn id(&self) -> Hash256 {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"transfer");
        buf.extend_from_slice(&(self.inputs.len() as u32).to_le_bytes());
        for input in &self.inputs {
            buf.extend_from_slice(&input.outpoint.tx.0);
            buf.extend_from_slice(&input.outpoint.index.to_le_bytes());
        }
        buf.extend_from_slice(&(self.outputs.len() as u32).to_le_bytes());
        for out in &self.outputs {
            let owner = out.owner.as_str().as_bytes();
            buf.extend_from_slice(&(owner.len() as u32).to_le_bytes());
            buf.extend_from_slice(owner);
            buf.extend_from_slice(&out.amount.to_le_bytes());
        }
        buf.extend_from_slice(&self.fee.to_le_bytes());
        buf.extend_from_slice(&self.memo.to_le_bytes());
        Hash256::tagged(domain::TX, &[&buf])
    }

    /// Signs every input with `key`.
    pub fn signed_by(mut self, key: &Secret) -> Self {
        let id = self.id();
        for input in &mut self.inputs {
            input.signature = sign(key, &id.0);
        }
        self
    }

    pub fn sign_input(&mut self, index: usize, key: &Secret) {
        let id = self.id();
        self.inputs[index].signature = sign(key, &id.0);
    }

    pub fn output_total(&self) -> Amount {
        self.outputs.iter().map(|o| o.amount).sum()
    }
}

/// Everything a child block can carry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChildTx {
    Transfer(PlasmaTx),
    /// The operator's record that an L1 deposit will become spendable.
    Deposit {
        deposit_id: u64,
        owner: AccountId,
        amount: Amount,
        l1_tx: Hash256,
    },
    /// The depositor's acknowledgment of the record; spendable from here.
    DepositAck {
        deposit_id: u64,
        record: Hash256,
        owner: AccountId,
        amount: Amount,
        signature: Hash256,
    },
}

impl ChildTx {
    pub fn id(&self) -> Hash256 {
        match self {
            ChildTx::Transfer(tx) => tx.id(),
            ChildTx::Deposit { deposit_id, owner, amount, l1_tx } => Hash256::tagged(
                domain::TX,
                &[b"deposit", &deposit_id.to_le_bytes(), owner.as_str().as_bytes(), &amount.to_le_bytes(), &l1_tx.0],
            ),
            ChildTx::DepositAck { record, signature, .. } => {
                Hash256::tagged(domain::TX, &[b"deposit-ack", &record.0, &signature.0])
            }
        }
    }

    /// Outputs an exit can point at.
    pub fn outputs(&self) -> Vec<TxOutput> {
        match self {
            ChildTx::Transfer(tx) => tx.outputs.clone(),
            ChildTx::Deposit { owner, amount, .. } => vec![TxOutput { owner: owner.clone(), amount: *amount }],
            ChildTx::DepositAck { .. } => Vec::new(),
        }
    }

    pub fn fee(&self) -> Amount {
        match self {
            ChildTx::Transfer(tx) => tx.fee,
            _ => 0,
        }
    }
}

/// Unspent outputs keyed by outpoint.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct UtxoSet {
    outputs: BTreeMap<Outpoint, TxOutput>,
}

impl UtxoSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, outpoint: &Outpoint) -> Option<&TxOutput> {
        self.outputs.get(outpoint)
    }

    pub fn contains(&self, outpoint: &Outpoint) -> bool {
        self.outputs.contains_key(outpoint)
    }

    pub fn insert(&mut self, outpoint: Outpoint, output: TxOutput) {
        self.outputs.insert(outpoint, output);
    }

    pub fn remove(&mut self, outpoint: &Outpoint) -> Option<TxOutput> {
        self.outputs.remove(outpoint)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn total(&self) -> Amount {
        self.outputs.values().map(|o| o.amount).sum()
    }

    /// In outpoint order, which also defines bitmap positions.
    pub fn iter(&self) -> impl Iterator<Item = Utxo> + '_ {
        self.outputs.iter().map(|(op, out)| Utxo { outpoint: *op, owner: out.owner.clone(), amount: out.amount })
    }

    pub fn balance_of(&self, owner: &AccountId) -> Amount {
        self.outputs.values().filter(|o| &o.owner == owner).map(|o| o.amount).sum()
    }

    pub fn owned_by(&self, owner: &AccountId) -> Vec<Utxo> {
        self.iter().filter(|u| &u.owner == owner).collect()
    }

    pub fn balances(&self) -> BTreeMap<AccountId, Amount> {
        let mut out = BTreeMap::new();
        for o in self.outputs.values() {
            *out.entry(o.owner.clone()).or_default() += o.amount;
        }
        out
    }

    /// Checks `tx` against this set: inputs present, distinct and signed
    /// by their owners, outputs positive, value conserved.
    pub fn validate(&self, tx: &PlasmaTx, keys: &BTreeMap<AccountId, Secret>) -> Result<(), PlasmaError> {
        let id = tx.id();
        let mut seen = std::collections::BTreeSet::new();
        let mut input_total: Amount = 0;
        for input in &tx.inputs {
            if !seen.insert(input.outpoint) {
                return Err(PlasmaError::DoubleSpend(input.outpoint));
            }
            let out = self.get(&input.outpoint).ok_or(PlasmaError::UnknownOutput(input.outpoint))?;
            let key = keys.get(&out.owner).ok_or(PlasmaError::BadAuthorization(input.outpoint))?;
            if input.signature != sign(key, &id.0) {
                return Err(PlasmaError::BadAuthorization(input.outpoint));
            }
            input_total += out.amount;
        }
        if tx.outputs.iter().any(|o| o.amount == 0) {
            return Err(PlasmaError::ZeroOutput);
        }
        let spent = tx.output_total() + tx.fee;
        if tx.inputs.is_empty() || input_total != spent {
            return Err(PlasmaError::ValueMismatch { inputs: input_total, outputs: spent });
        }
        Ok(())
    }

    /// Applies a validated transfer.
    pub fn apply(&mut self, tx: &PlasmaTx) {
        let id = tx.id();
        for input in &tx.inputs {
            self.remove(&input.outpoint);
        }
        for (i, out) in tx.outputs.iter().enumerate() {
            self.insert(Outpoint { tx: id, index: i as u32 }, out.clone());
        }
    }

    /// Applies any child tx whose effect on the set is unconditional
    /// (transfers must be validated first).
    pub fn apply_child(&mut self, tx: &ChildTx) {
        match tx {
            ChildTx::Transfer(t) => self.apply(t),
            ChildTx::Deposit { .. } => {}
            ChildTx::DepositAck { record, owner, amount, .. } => {
                self.insert(Outpoint { tx: *record, index: 0 }, TxOutput { owner: owner.clone(), amount: *amount });
            }
        }
    }
}
