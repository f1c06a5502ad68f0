//! On-chain batch layout.
//!
//! ```text
//! header   prev_root (32) | new_root (32) | op count (u32 LE)
//! type map 2 bits per op, LSB first: 0 deposit, 1 transfer, 2 withdraw
//! payloads in op order
//! ```
//!
//! Deposits carry no payload; they consume the contract's deposit queue in
//! order. A zk transfer is `from (3) | to (3) | amount (4) | fee (2)` with
//! decimal-float amounts and an implied nonce. An optimistic transfer spells
//! out full amounts and the nonce and adds a 28-byte post-state witness for
//! the sender. Both are zero-padded to `tx_size_bytes`.

use crate::hash::Hash256;
use crate::types::{AccountId, Amount};

use super::state::{AccountState, RollupOp, Transfer};
use super::{RollupError, RollupMode, RollupParams};

pub const HEADER_BYTES: u64 = 68;
pub const WITHDRAW_BYTES: u64 = 40;
const ZK_INDEX_LIMIT: u32 = 1 << 24;
const EXP_BITS: u32 = 5;
const AMOUNT_MANTISSA_BITS: u32 = 27;
const FEE_MANTISSA_BITS: u32 = 11;

/// Packs `v` as `mantissa * 10^exp` into `mantissa_bits + 5` bits, or
/// `None` if it is not exactly representable.
pub fn pack_amount(v: Amount, mantissa_bits: u32) -> Option<u64> {
    let mut m = v;
    let mut e = 0u32;
    while m >= 1 << mantissa_bits {
        if !m.is_multiple_of(10) || e + 1 >= 1 << EXP_BITS {
            return None;
        }
        m /= 10;
        e += 1;
    }
    Some(((m as u64) << EXP_BITS) | e as u64)
}

/// Splits `v` greedily into values that each pack exactly as fees.
pub fn split_fee(v: Amount) -> Vec<Amount> {
    let max_m: Amount = (1 << FEE_MANTISSA_BITS) - 1;
    let mut parts = Vec::new();
    let mut rem = v;
    while rem > 0 {
        let part = (0..(1u32 << EXP_BITS) - 1)
            .map(|e| 10u128.checked_pow(e).map_or(0, |p| (rem / p).min(max_m) * p))
            .max()
            .unwrap_or(rem);
        parts.push(part);
        rem -= part;
    }
    parts
}

/// Whether `op` has a wire encoding under `mode`, ignoring account indices.
pub fn check_encodable(mode: RollupMode, op: &RollupOp) -> Result<(), String> {
    if let (RollupMode::Zk, RollupOp::Transfer(t)) = (mode, op) {
        if pack_amount(t.amount, AMOUNT_MANTISSA_BITS).is_none() {
            return Err("amount not packable".into());
        }
        if pack_amount(t.fee, FEE_MANTISSA_BITS).is_none() {
            return Err("fee not packable".into());
        }
    }
    Ok(())
}

pub fn unpack_amount(packed: u64) -> Amount {
    let e = (packed & ((1 << EXP_BITS) - 1)) as u32;
    ((packed >> EXP_BITS) as Amount) * 10u128.pow(e)
}

fn witness(state: &AccountState, id: &AccountId) -> [u8; 28] {
    let a = state.get(id).expect("sender exists");
    let h = Hash256::leaf(&[&a.balance.to_le_bytes()[..], &a.nonce.to_le_bytes()].concat());
    let mut out = [0u8; 28];
    out.copy_from_slice(&h.0[..28]);
    out
}

fn index_of(state: &AccountState, id: &AccountId, op: usize) -> Result<u32, RollupError> {
    state.get(id).map(|a| a.index).ok_or(RollupError::InvalidTx { index: op, reason: format!("unknown account {id}") })
}

/// Encodes `ops`, which must be valid in order against `prev`.
pub fn encode_ops(
    params: &RollupParams,
    prev: &AccountState,
    new_root: &Hash256,
    ops: &[RollupOp],
) -> Result<Vec<u8>, RollupError> {
    let mut out = Vec::new();
    out.extend_from_slice(&prev.root().0);
    out.extend_from_slice(&new_root.0);
    out.extend_from_slice(&(ops.len() as u32).to_le_bytes());
    let mut map = vec![0u8; (ops.len() * 2).div_ceil(8)];
    for (i, op) in ops.iter().enumerate() {
        let t = match op {
            RollupOp::Deposit { .. } => 0,
            RollupOp::Transfer(_) => 1,
            RollupOp::Withdraw { .. } => 2,
        };
        map[i / 4] |= t << ((i % 4) * 2);
    }
    out.extend_from_slice(&map);
    let mut state = prev.clone();
    for (i, op) in ops.iter().enumerate() {
        let invalid = |reason: String| RollupError::InvalidTx { index: i, reason };
        let start = out.len();
        match op {
            RollupOp::Deposit { .. } => {}
            RollupOp::Transfer(t) => {
                let from = index_of(&state, &t.from, i)?;
                let to = index_of(&state, &t.to, i)?;
                match params.mode {
                    RollupMode::Zk => {
                        if from >= ZK_INDEX_LIMIT || to >= ZK_INDEX_LIMIT {
                            return Err(invalid("account index exceeds 24 bits".into()));
                        }
                        let amount = pack_amount(t.amount, AMOUNT_MANTISSA_BITS)
                            .ok_or_else(|| invalid("amount not packable".into()))?;
                        let fee =
                            pack_amount(t.fee, FEE_MANTISSA_BITS).ok_or_else(|| invalid("fee not packable".into()))?;
                        out.extend_from_slice(&from.to_le_bytes()[..3]);
                        out.extend_from_slice(&to.to_le_bytes()[..3]);
                        out.extend_from_slice(&(amount as u32).to_le_bytes());
                        out.extend_from_slice(&(fee as u16).to_le_bytes());
                    }
                    RollupMode::Optimistic => {
                        out.extend_from_slice(&from.to_le_bytes());
                        out.extend_from_slice(&to.to_le_bytes());
                        out.extend_from_slice(&t.amount.to_le_bytes());
                        out.extend_from_slice(&t.fee.to_le_bytes());
                        out.extend_from_slice(&t.nonce.to_le_bytes());
                    }
                }
                state.apply(op).map_err(invalid)?;
                if params.mode == RollupMode::Optimistic {
                    out.extend_from_slice(&witness(&state, &t.from));
                }
                out.resize(start + params.tx_size_bytes as usize, 0);
                continue;
            }
            RollupOp::Withdraw { account, amount, fee, nonce } => {
                out.extend_from_slice(&index_of(&state, account, i)?.to_le_bytes());
                out.extend_from_slice(&amount.to_le_bytes());
                out.extend_from_slice(&fee.to_le_bytes());
                out.extend_from_slice(&nonce.to_le_bytes());
            }
        }
        state.apply(op).map_err(invalid)?;
    }
    Ok(out)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RollupError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.data.len());
        let end = end.ok_or_else(|| RollupError::Decode("truncated".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn uint(&mut self, n: usize) -> Result<u128, RollupError> {
        let mut buf = [0u8; 16];
        buf[..n].copy_from_slice(self.take(n)?);
        Ok(u128::from_le_bytes(buf))
    }

    fn hash(&mut self) -> Result<Hash256, RollupError> {
        let mut h = [0u8; 32];
        h.copy_from_slice(self.take(32)?);
        Ok(Hash256(h))
    }
}

/// What a batch's calldata says, decoded and replayed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedBatch {
    pub prev_root: Hash256,
    pub new_root: Hash256,
    pub ops: Vec<RollupOp>,
    /// State after replaying `ops` on the given pre-state.
    pub post: AccountState,
}

/// Decodes and replays batch data on `prev`. Deposit ops are filled from
/// `deposits`, the contract's queue from this batch's first deposit on.
/// Any op that does not apply is a decoding error.
pub fn decode_ops(
    params: &RollupParams,
    data: &[u8],
    prev: &AccountState,
    deposits: &[(AccountId, Amount)],
) -> Result<DecodedBatch, RollupError> {
    let mut r = Reader { data, pos: 0 };
    let prev_root = r.hash()?;
    let new_root = r.hash()?;
    let n = r.uint(4)? as usize;
    let map = r.take((n * 2).div_ceil(8))?.to_vec();
    let mut state = prev.clone();
    let mut ops = Vec::with_capacity(n);
    let mut next_deposit = 0;
    let fail = |i: usize, e: String| RollupError::Decode(format!("op {i}: {e}"));
    for i in 0..n {
        let kind = (map[i / 4] >> ((i % 4) * 2)) & 0b11;
        let op = match kind {
            0 => {
                let (account, amount) =
                    deposits.get(next_deposit).cloned().ok_or_else(|| fail(i, "deposit queue exhausted".into()))?;
                next_deposit += 1;
                RollupOp::Deposit { account, amount }
            }
            1 => {
                let start = r.pos;
                let account = |idx: u128, st: &AccountState| {
                    st.id_at(idx as u32).cloned().ok_or_else(|| fail(i, format!("unknown index {idx}")))
                };
                let t = match params.mode {
                    RollupMode::Zk => {
                        let from = account(r.uint(3)?, &state)?;
                        let to = account(r.uint(3)?, &state)?;
                        let amount = unpack_amount(r.uint(4)? as u64);
                        let fee = unpack_amount(r.uint(2)? as u64);
                        let nonce = state.nonce(&from);
                        Transfer { from, to, amount, fee, nonce }
                    }
                    RollupMode::Optimistic => {
                        let from = account(r.uint(4)?, &state)?;
                        let to = account(r.uint(4)?, &state)?;
                        let amount = r.uint(16)?;
                        let fee = r.uint(16)?;
                        let nonce = r.uint(4)? as u32;
                        Transfer { from, to, amount, fee, nonce }
                    }
                };
                let op = RollupOp::Transfer(t.clone());
                state.apply(&op).map_err(|e| fail(i, e))?;
                if params.mode == RollupMode::Optimistic && r.take(28)? != witness(&state, &t.from) {
                    return Err(fail(i, "witness mismatch".into()));
                }
                r.pos = start;
                r.take(params.tx_size_bytes as usize)?;
                ops.push(op);
                continue;
            }
            2 => {
                let account = state.id_at(r.uint(4)? as u32).cloned().ok_or_else(|| fail(i, "unknown index".into()))?;
                let amount = r.uint(16)?;
                let fee = r.uint(16)?;
                let nonce = r.uint(4)? as u32;
                RollupOp::Withdraw { account, amount, fee, nonce }
            }
            _ => return Err(fail(i, "bad op type".into())),
        };
        state.apply(&op).map_err(|e| fail(i, e))?;
        ops.push(op);
    }
    if r.pos != data.len() {
        return Err(RollupError::Decode("trailing bytes".into()));
    }
    Ok(DecodedBatch { prev_root, new_root, ops, post: state })
}

/// Calldata length of `ops` without encoding them.
pub fn encoded_len(params: &RollupParams, ops: &[RollupOp]) -> u64 {
    let payload: u64 = ops
        .iter()
        .map(|op| match op {
            RollupOp::Deposit { .. } => 0,
            RollupOp::Transfer(_) => params.tx_size_bytes,
            RollupOp::Withdraw { .. } => WITHDRAW_BYTES,
        })
        .sum();
    HEADER_BYTES + (ops.len() as u64 * 2).div_ceil(8) + payload
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::WEI_PER_GWEI;

    fn id(s: &str) -> AccountId {
        AccountId::from(s)
    }

    fn ops() -> Vec<RollupOp> {
        vec![
            RollupOp::Deposit { account: id("a"), amount: 5_000_000 * WEI_PER_GWEI },
            RollupOp::Deposit { account: id("b"), amount: 0 },
            RollupOp::Transfer(Transfer {
                from: id("a"),
                to: id("b"),
                amount: 1_230_000 * WEI_PER_GWEI,
                fee: 10_840 * WEI_PER_GWEI,
                nonce: 0,
            }),
            RollupOp::Withdraw { account: id("a"), amount: 1_000 * WEI_PER_GWEI, fee: 0, nonce: 1 },
        ]
    }

    fn round_trip(params: &RollupParams) {
        let prev = AccountState::with_fee_account(&id("op"));
        let mut post = prev.clone();
        post.apply_all(&ops()).unwrap();
        let data = encode_ops(params, &prev, &post.root(), &ops()).unwrap();
        assert_eq!(data.len() as u64, encoded_len(params, &ops()));
        let deposits = vec![(id("a"), 5_000_000 * WEI_PER_GWEI), (id("b"), 0)];
        let d = decode_ops(params, &data, &prev, &deposits).unwrap();
        assert_eq!(d.ops, ops());
        assert_eq!(d.post.root(), post.root());
        assert_eq!(d.new_root, post.root());
    }

    #[test]
    fn zk_round_trip() {
        round_trip(&RollupParams::zk());
    }

    #[test]
    fn optimistic_round_trip() {
        round_trip(&RollupParams::optimistic());
    }

    #[test]
    fn packing() {
        assert_eq!(unpack_amount(pack_amount(0, 27).unwrap()), 0);
        assert_eq!(unpack_amount(pack_amount(134_217_727, 27).unwrap()), 134_217_727);
        assert_eq!(pack_amount(134_217_729, 27), None);
        let wei = 10_840 * WEI_PER_GWEI;
        assert_eq!(unpack_amount(pack_amount(wei, 11).unwrap()), wei);
    }

    #[test]
    fn fee_split_parts_pack_and_sum() {
        for n in 1..=40u128 {
            let total = n * 10_840 * WEI_PER_GWEI + n;
            let parts = split_fee(total);
            assert_eq!(parts.iter().sum::<Amount>(), total);
            assert!(parts.iter().all(|p| pack_amount(*p, FEE_MANTISSA_BITS).is_some()), "{total}: {parts:?}");
            assert!(parts.len() <= 4, "{total}: {parts:?}");
        }
        assert_eq!(split_fee(10_840 * WEI_PER_GWEI).len(), 1);
        assert!(split_fee(0).is_empty());
    }

    #[test]
    fn zk_transfer_is_twelve_bytes() {
        let p = RollupParams::zk();
        let one = vec![ops()[2].clone()];
        assert_eq!(encoded_len(&p, &one), HEADER_BYTES + 1 + 12);
    }

    #[test]
    fn truncated_data_rejected() {
        let p = RollupParams::zk();
        let prev = AccountState::with_fee_account(&id("op"));
        let mut post = prev.clone();
        post.apply_all(&ops()).unwrap();
        let data = encode_ops(&p, &prev, &post.root(), &ops()).unwrap();
        let deposits = vec![(id("a"), 5_000_000 * WEI_PER_GWEI), (id("b"), 0)];
        assert!(decode_ops(&p, &data[..data.len() - 1], &prev, &deposits).is_err());
        assert!(decode_ops(&p, &data, &prev, &deposits[..1]).is_err());
    }
}
