use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::hash::{Hash256, Secret};
use crate::rng::{self, SimRng};
use crate::types::{AccountId, Amount};

use super::ChannelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelId(pub u64);

impl std::fmt::Display for ChannelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ch{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AToB,
    BToA,
}

impl Direction {
    pub fn from_payer(payer: Side) -> Self {
        match payer {
            Side::A => Direction::AToB,
            Side::B => Direction::BToA,
        }
    }

    pub fn payer(self) -> Side {
        match self {
            Direction::AToB => Side::A,
            Direction::BToA => Side::B,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Htlc {
    pub id: u64,
    pub amount: Amount,
    pub payment_hash: Hash256,
    pub expiry_height: u64,
    pub direction: Direction,
}

/// A commitment both parties signed. Either side may broadcast any commitment
/// it holds; revocation makes broadcasting an old one punishable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Commitment {
    pub state_number: u64,
    pub balance_a: Amount,
    pub balance_b: Amount,
    pub htlcs: Vec<Htlc>,
}

impl Commitment {
    pub fn balance(&self, side: Side) -> Amount {
        match side {
            Side::A => self.balance_a,
            Side::B => self.balance_b,
        }
    }

    /// Balance plus the HTLCs this side offered, which refund to it on chain.
    pub fn claimable(&self, side: Side) -> Amount {
        self.balance(side) + self.htlcs.iter().filter(|h| h.direction.payer() == side).map(|h| h.amount).sum::<Amount>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RevocationEntry {
    pub hash: Hash256,
    /// Present once the owner has handed it to the counterparty.
    #[serde(skip)]
    pub secret: Option<Secret>,
}

impl RevocationEntry {
    pub fn is_revealed(&self) -> bool {
        self.secret.is_some_and(|s| Hash256::of_secret(&s) == self.hash)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StateRevocations {
    pub a: RevocationEntry,
    pub b: RevocationEntry,
}

impl StateRevocations {
    pub fn of(&self, side: Side) -> &RevocationEntry {
        match side {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum ChannelStatus {
    Open,
    ClosingUnilateral { broadcaster: Side, state: u64, unlock_height: u64, locked: Amount },
    Closed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Channel {
    pub id: ChannelId,
    pub party_a: AccountId,
    pub party_b: AccountId,
    pub capacity: Amount,
    pub balance_a: Amount,
    pub balance_b: Amount,
    pub state_number: u64,
    pub revocation_store: BTreeMap<u64, StateRevocations>,
    pub pending_htlcs: Vec<Htlc>,
    pub timelock_blocks: u64,
    pub status: ChannelStatus,
    #[serde(skip)]
    commitments: BTreeMap<u64, Commitment>,
    #[serde(skip)]
    current_secret_a: Secret,
    #[serde(skip)]
    current_secret_b: Secret,
    #[serde(skip)]
    next_htlc_id: u64,
}

impl Channel {
    pub fn open(
        id: ChannelId,
        party_a: AccountId,
        party_b: AccountId,
        fund_a: Amount,
        fund_b: Amount,
        timelock_blocks: u64,
        rng: &mut SimRng,
    ) -> Result<Self, ChannelError> {
        if fund_a + fund_b == 0 {
            return Err(ChannelError::ZeroCapacity);
        }
        if party_a == party_b {
            return Err(ChannelError::SelfChannel);
        }
        let secret_a = rng::secret(rng);
        let secret_b = rng::secret(rng);
        let mut channel = Channel {
            id,
            party_a,
            party_b,
            capacity: fund_a + fund_b,
            balance_a: fund_a,
            balance_b: fund_b,
            state_number: 0,
            revocation_store: BTreeMap::new(),
            pending_htlcs: Vec::new(),
            timelock_blocks,
            status: ChannelStatus::Open,
            commitments: BTreeMap::new(),
            current_secret_a: secret_a,
            current_secret_b: secret_b,
            next_htlc_id: 0,
        };
        channel.record_state();
        Ok(channel)
    }

    fn record_state(&mut self) {
        self.revocation_store.insert(
            self.state_number,
            StateRevocations {
                a: RevocationEntry { hash: Hash256::of_secret(&self.current_secret_a), secret: None },
                b: RevocationEntry { hash: Hash256::of_secret(&self.current_secret_b), secret: None },
            },
        );
        self.commitments.insert(self.state_number, self.current_commitment());
    }

    pub fn current_commitment(&self) -> Commitment {
        Commitment {
            state_number: self.state_number,
            balance_a: self.balance_a,
            balance_b: self.balance_b,
            htlcs: self.pending_htlcs.clone(),
        }
    }

    pub fn commitment(&self, state: u64) -> Option<&Commitment> {
        self.commitments.get(&state)
    }

    /// Both parties reveal the current state's revocation secret and commit
    /// to fresh ones for the next state.
    fn advance_state(&mut self, rng: &mut SimRng) {
        let entry = self.revocation_store.get_mut(&self.state_number).expect("current state recorded");
        entry.a.secret = Some(self.current_secret_a);
        entry.b.secret = Some(self.current_secret_b);
        self.current_secret_a = rng::secret(rng);
        self.current_secret_b = rng::secret(rng);
        self.state_number += 1;
        self.record_state();
    }

    pub fn side_of(&self, account: &AccountId) -> Option<Side> {
        if *account == self.party_a {
            Some(Side::A)
        } else if *account == self.party_b {
            Some(Side::B)
        } else {
            None
        }
    }

    pub fn party(&self, side: Side) -> &AccountId {
        match side {
            Side::A => &self.party_a,
            Side::B => &self.party_b,
        }
    }

    pub fn balance(&self, side: Side) -> Amount {
        match side {
            Side::A => self.balance_a,
            Side::B => self.balance_b,
        }
    }

    fn balance_mut(&mut self, side: Side) -> &mut Amount {
        match side {
            Side::A => &mut self.balance_a,
            Side::B => &mut self.balance_b,
        }
    }

    pub fn is_open(&self) -> bool {
        self.status == ChannelStatus::Open
    }

    fn ensure_open(&self) -> Result<(), ChannelError> {
        if self.is_open() {
            Ok(())
        } else {
            Err(ChannelError::ChannelNotOpen(self.id))
        }
    }

    fn ensure_balance(&self, side: Side, amount: Amount) -> Result<(), ChannelError> {
        let available = self.balance(side);
        if available < amount {
            return Err(ChannelError::InsufficientBalance { channel: self.id, needed: amount, available });
        }
        Ok(())
    }

    /// Off-chain payment; no fee.
    pub fn pay(&mut self, payer: Side, amount: Amount, rng: &mut SimRng) -> Result<u64, ChannelError> {
        self.ensure_open()?;
        self.ensure_balance(payer, amount)?;
        *self.balance_mut(payer) -= amount;
        *self.balance_mut(payer.other()) += amount;
        self.advance_state(rng);
        Ok(self.state_number)
    }

    pub fn add_htlc(
        &mut self,
        direction: Direction,
        amount: Amount,
        payment_hash: Hash256,
        expiry_height: u64,
        rng: &mut SimRng,
    ) -> Result<u64, ChannelError> {
        self.ensure_open()?;
        if amount == 0 {
            return Err(ChannelError::ZeroHtlc);
        }
        let payer = direction.payer();
        self.ensure_balance(payer, amount)?;
        *self.balance_mut(payer) -= amount;
        let id = self.next_htlc_id;
        self.next_htlc_id += 1;
        self.pending_htlcs.push(Htlc { id, amount, payment_hash, expiry_height, direction });
        self.advance_state(rng);
        Ok(id)
    }

    fn take_htlc(&mut self, htlc_id: u64) -> Result<Htlc, ChannelError> {
        let pos = self.pending_htlcs.iter().position(|h| h.id == htlc_id).ok_or(ChannelError::UnknownHtlc(htlc_id))?;
        Ok(self.pending_htlcs.remove(pos))
    }

    fn htlc(&self, htlc_id: u64) -> Result<&Htlc, ChannelError> {
        self.pending_htlcs.iter().find(|h| h.id == htlc_id).ok_or(ChannelError::UnknownHtlc(htlc_id))
    }

    /// Hashlock branch: only the preimage of `payment_hash`, only before expiry.
    pub fn settle_htlc(
        &mut self,
        htlc_id: u64,
        preimage: &Secret,
        height: u64,
        rng: &mut SimRng,
    ) -> Result<(), ChannelError> {
        self.ensure_open()?;
        let htlc = self.htlc(htlc_id)?;
        if Hash256::of_secret(preimage) != htlc.payment_hash {
            return Err(ChannelError::WrongPreimage);
        }
        if height >= htlc.expiry_height {
            return Err(ChannelError::HtlcExpired { expiry: htlc.expiry_height, height });
        }
        let htlc = self.take_htlc(htlc_id)?;
        *self.balance_mut(htlc.direction.payer().other()) += htlc.amount;
        self.advance_state(rng);
        Ok(())
    }

    /// Timelock branch: refund to the payer once expired.
    pub fn refund_htlc(&mut self, htlc_id: u64, height: u64, rng: &mut SimRng) -> Result<(), ChannelError> {
        self.ensure_open()?;
        let htlc = self.htlc(htlc_id)?;
        if height < htlc.expiry_height {
            return Err(ChannelError::HtlcNotExpired { expiry: htlc.expiry_height, height });
        }
        self.fail_htlc(htlc_id, rng)
    }

    /// Cooperative removal, used when a downstream hop fails: the payee side
    /// agrees to cancel instead of waiting for expiry.
    pub fn fail_htlc(&mut self, htlc_id: u64, rng: &mut SimRng) -> Result<(), ChannelError> {
        self.ensure_open()?;
        let htlc = self.take_htlc(htlc_id)?;
        *self.balance_mut(htlc.direction.payer()) += htlc.amount;
        self.advance_state(rng);
        Ok(())
    }

    /// Splice-out of `amount` from `side`'s balance; the channel stays open.
    pub fn withdraw(&mut self, side: Side, amount: Amount, rng: &mut SimRng) -> Result<(), ChannelError> {
        self.ensure_open()?;
        self.ensure_balance(side, amount)?;
        *self.balance_mut(side) -= amount;
        self.capacity -= amount;
        self.advance_state(rng);
        Ok(())
    }

    pub fn htlc_total(&self) -> Amount {
        self.pending_htlcs.iter().map(|h| h.amount).sum()
    }

    pub fn is_stale(&self, state: u64) -> bool {
        state < self.state_number
    }

    /// Revocation secret of `side` for `state`, if it has been handed over.
    pub fn revealed_secret(&self, side: Side, state: u64) -> Option<Secret> {
        let entry = self.revocation_store.get(&state)?.of(side);
        if entry.is_revealed() {
            entry.secret
        } else {
            None
        }
    }

    pub(crate) fn set_status(&mut self, status: ChannelStatus) {
        self.status = status;
    }

    /// Conservation, monotone state numbers and revocation completeness.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.status == ChannelStatus::Open && self.balance_a + self.balance_b + self.htlc_total() != self.capacity {
            return Err(format!(
                "{}: {} + {} + {} != {}",
                self.id,
                self.balance_a,
                self.balance_b,
                self.htlc_total(),
                self.capacity
            ));
        }
        let states: Vec<u64> = self.revocation_store.keys().copied().collect();
        if states != (0..=self.state_number).collect::<Vec<_>>() {
            return Err(format!("{}: revocation store has gaps", self.id));
        }
        for (n, entry) in &self.revocation_store {
            let revealed = entry.a.is_revealed() && entry.b.is_revealed();
            if *n < self.state_number && !revealed {
                return Err(format!("{}: state {n} not revoked", self.id));
            }
            if *n == self.state_number && (entry.a.secret.is_some() || entry.b.secret.is_some()) {
                return Err(format!("{}: current state already revealed", self.id));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn channel(fund_a: Amount, fund_b: Amount) -> (Channel, SimRng) {
        let mut rng = seeded(7);
        let ch = Channel::open(ChannelId(0), "A".into(), "B".into(), fund_a, fund_b, 144, &mut rng).unwrap();
        (ch, rng)
    }

    #[test]
    fn ten_payments_net_two_toward_a() {
        let (mut ch, mut rng) = channel(3, 3);
        // six payments B->A of 1 and four A->B of 1
        for i in 0..10 {
            let payer = if i % 2 == 0 || i == 9 { Side::B } else { Side::A };
            ch.pay(payer, 1, &mut rng).unwrap();
        }
        assert_eq!((ch.balance_a, ch.balance_b), (5, 1));
        assert_eq!(ch.state_number, 10);
        ch.check_invariants().unwrap();
    }

    #[test]
    fn zero_payment_advances_state() {
        let (mut ch, mut rng) = channel(1, 0);
        assert_eq!(ch.pay(Side::A, 0, &mut rng).unwrap(), 1);
        assert_eq!((ch.balance_a, ch.balance_b), (1, 0));
    }

    #[test]
    fn draining_counterparty_then_overpaying_fails() {
        let (mut ch, mut rng) = channel(3, 3);
        ch.pay(Side::B, 3, &mut rng).unwrap();
        assert_eq!(ch.balance_b, 0);
        assert!(matches!(ch.pay(Side::B, 1, &mut rng), Err(ChannelError::InsufficientBalance { .. })));
    }

    #[test]
    fn old_states_are_revoked() {
        let (mut ch, mut rng) = channel(3, 3);
        ch.pay(Side::A, 1, &mut rng).unwrap();
        ch.pay(Side::A, 1, &mut rng).unwrap();
        assert!(ch.revealed_secret(Side::A, 0).is_some());
        assert!(ch.revealed_secret(Side::B, 1).is_some());
        assert!(ch.revealed_secret(Side::A, 2).is_none());
        ch.check_invariants().unwrap();
    }

    #[test]
    fn htlc_hashlock_and_timelock() {
        let (mut ch, mut rng) = channel(5, 0);
        let secret = [9u8; 32];
        let hash = Hash256::of_secret(&secret);
        let id = ch.add_htlc(Direction::AToB, 2, hash, 100, &mut rng).unwrap();
        ch.check_invariants().unwrap();
        assert_eq!(ch.settle_htlc(id, &[1u8; 32], 10, &mut rng), Err(ChannelError::WrongPreimage));
        assert!(matches!(ch.settle_htlc(id, &secret, 100, &mut rng), Err(ChannelError::HtlcExpired { .. })));
        assert!(matches!(ch.refund_htlc(id, 99, &mut rng), Err(ChannelError::HtlcNotExpired { .. })));
        ch.settle_htlc(id, &secret, 99, &mut rng).unwrap();
        assert_eq!((ch.balance_a, ch.balance_b), (3, 2));

        let id = ch.add_htlc(Direction::BToA, 1, hash, 50, &mut rng).unwrap();
        ch.refund_htlc(id, 50, &mut rng).unwrap();
        assert_eq!((ch.balance_a, ch.balance_b), (3, 2));
        ch.check_invariants().unwrap();
    }

    #[test]
    fn withdraw_keeps_channel_open() {
        let (mut ch, mut rng) = channel(5, 1);
        ch.withdraw(Side::A, 2, &mut rng).unwrap();
        assert_eq!((ch.capacity, ch.balance_a, ch.balance_b), (4, 3, 1));
        ch.withdraw(Side::A, 3, &mut rng).unwrap();
        assert_eq!(ch.balance_a, 0);
        assert!(ch.is_open());
        ch.check_invariants().unwrap();
    }

    #[test]
    fn zero_capacity_rejected() {
        let mut rng = seeded(1);
        assert_eq!(
            Channel::open(ChannelId(0), "A".into(), "B".into(), 0, 0, 144, &mut rng).unwrap_err(),
            ChannelError::ZeroCapacity
        );
    }
}
