use std::collections::BTreeMap;

use l2sim::plasma::{ExitStatus, OperatorMode, Outpoint, PlasmaChain, PlasmaConfig, PlasmaError, SwapStatus, TxOutput};
use l2sim::rational::int;
use l2sim::types::WEI_PER_ETH;
use l2sim::{AccountId, Amount};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ETH: Amount = WEI_PER_ETH;
const DAY: i128 = 86_400;

fn acct(i: usize) -> AccountId {
    AccountId::new(format!("user{i}"))
}

fn setup(users: usize, deposit: Amount, seed: u64) -> (PlasmaChain, Vec<AccountId>) {
    let mut c = PlasmaChain::new(PlasmaConfig::default(), seed).unwrap();
    let names: Vec<AccountId> = (0..users).map(acct).collect();
    for n in &names {
        c.fund_l1(n, 1_000 * ETH);
    }
    c.fund_l1(&AccountId::from("watcher"), 1_000 * ETH);
    for n in &names {
        c.deposit(n, deposit).unwrap();
    }
    c.produce_and_commit().unwrap();
    for (i, n) in names.iter().enumerate() {
        c.acknowledge_deposit(n, i as u64).unwrap();
    }
    (c, names)
}

/// Replays transfers over a plain map of outputs, deciding validity
/// without any of the chain's indexes.
#[derive(Default)]
struct Oracle {
    outputs: BTreeMap<Outpoint, (AccountId, Amount)>,
}

impl Oracle {
    fn accepts(&self, owner: &AccountId, inputs: &[Outpoint], outs: &[TxOutput], fee: Amount) -> bool {
        let mut total = 0;
        for (i, op) in inputs.iter().enumerate() {
            if inputs[..i].contains(op) {
                return false;
            }
            match self.outputs.get(op) {
                Some((o, a)) if o == owner => total += a,
                _ => return false,
            }
        }
        !inputs.is_empty()
            && outs.iter().all(|o| o.amount > 0)
            && total == outs.iter().map(|o| o.amount).sum::<Amount>() + fee
    }

    fn balances(&self) -> BTreeMap<AccountId, Amount> {
        let mut out = BTreeMap::new();
        for (o, a) in self.outputs.values() {
            *out.entry(o.clone()).or_default() += a;
        }
        out
    }
}

#[test]
fn thousand_random_transfers_match_replay() {
    let (mut c, names) = setup(8, 1_000, 42);
    let mut oracle = Oracle::default();
    for u in c.utxos().iter() {
        oracle.outputs.insert(u.outpoint, (u.owner, u.amount));
    }
    let mut seen: Vec<Outpoint> = oracle.outputs.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut fees = 0;
    let mut accepted = 0;
    for step in 0..1_000 {
        let from = names[rng.random_range(0..names.len())].clone();
        let mine: Vec<Outpoint> = oracle.outputs.iter().filter(|(_, (o, _))| o == &from).map(|(op, _)| *op).collect();
        // Mostly honest spends, sometimes stale or foreign inputs.
        let mut inputs: Vec<Outpoint> = mine.iter().take(rng.random_range(1..=2)).copied().collect();
        if rng.random_bool(0.1) || inputs.is_empty() {
            inputs = vec![seen[rng.random_range(0..seen.len())]];
        }
        let held: Amount = inputs.iter().filter_map(|op| oracle.outputs.get(op)).map(|(_, a)| *a).sum();
        let fee = if held > 2 { rng.random_range(0..2) } else { 0 };
        let to = names[rng.random_range(0..names.len())].clone();
        let outs = if held > fee + 1 {
            let x = rng.random_range(1..held - fee);
            vec![TxOutput { owner: to, amount: x }, TxOutput { owner: from.clone(), amount: held - fee - x }]
        } else {
            vec![TxOutput { owner: to, amount: held.max(1) }]
        };
        let expect = oracle.accepts(&from, &inputs, &outs, fee);
        let got = c.transfer(&from, &inputs, outs.clone(), fee);
        assert_eq!(got.is_ok(), expect, "step {step}: {got:?}");
        if let Ok(id) = got {
            accepted += 1;
            fees += fee;
            for op in &inputs {
                oracle.outputs.remove(op);
            }
            for (i, o) in outs.into_iter().enumerate() {
                let op = Outpoint { tx: id, index: i as u32 };
                seen.push(op);
                oracle.outputs.insert(op, (o.owner, o.amount));
            }
        }
        if step % 50 == 49 {
            c.produce_and_commit().unwrap();
        }
    }
    while c.queue_len() > 0 {
        c.produce_and_commit().unwrap();
    }
    assert!(accepted > 800, "only {accepted} accepted");
    assert_eq!(c.utxos().balances(), oracle.balances());
    assert_eq!(c.snapshot(c.height()).unwrap().balances(), oracle.balances());
    assert_eq!(c.fees_total(), fees);
    c.check_invariants().unwrap();
}

#[test]
fn withheld_block_blocks_exit_of_its_outputs() {
    let (mut c, names) = setup(2, 100, 1);
    c.produce_and_commit().unwrap();
    c.set_mode(OperatorMode::Withhold);
    let id = c.pay(&names[0], &names[1], 40, 0).unwrap();
    let h = c.produce_and_commit().unwrap().height;
    assert_eq!(c.exit_claim(&Outpoint { tx: id, index: 0 }).err(), Some(PlasmaError::Withheld(h)));
    assert_eq!(c.first_withheld(), Some(h));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Exits of spent outputs are always challenged; exits of unspent
    /// outputs always finalize; value is conserved throughout.
    #[test]
    fn exit_soundness_and_completeness(seed in 0u64..500, spends in prop::collection::vec(any::<bool>(), 4)) {
        let (mut c, names) = setup(4, 10 * ETH, seed);
        c.produce_and_commit().unwrap();
        let ops: Vec<Outpoint> = names.iter().map(|n| c.utxos().owned_by(n)[0].outpoint).collect();
        let mut claims = Vec::new();
        for (i, n) in names.iter().enumerate() {
            let op = ops[i];
            claims.push((n.clone(), c.exit_claim(&op).unwrap(), spends[i]));
            if spends[i] {
                c.transfer(n, &[op], vec![TxOutput { owner: names[(i + 1) % 4].clone(), amount: 10 * ETH }], 0).unwrap();
            }
        }
        c.produce_and_commit().unwrap();
        let mut ids = Vec::new();
        for (n, claim, spent) in &claims {
            ids.push((c.start_exit(n, claim.clone()).unwrap(), *spent));
        }
        c.challenge_all(&AccountId::from("watcher")).unwrap();
        c.advance_time(int(7 * DAY)).unwrap();
        c.finalize_due().unwrap();
        let mut exited = 0;
        for (id, spent) in ids {
            let status = c.exit(id).unwrap().status;
            if spent {
                prop_assert_eq!(status, ExitStatus::Challenged);
            } else {
                prop_assert_eq!(status, ExitStatus::Finalized);
                exited += 10 * ETH;
            }
        }
        prop_assert_eq!(c.exited_total(), exited);
        prop_assert!(c.check_invariants().is_ok(), "{:?}", c.check_invariants());
    }

    /// Either the LP paid and owns the child output, or neither happened.
    #[test]
    fn fast_withdrawal_atomicity(seed in 0u64..500, pay in any::<bool>(), delay in 0i128..4_000, fee in 0u128..1_000) {
        let (mut c, names) = setup(1, 5 * ETH, seed);
        let lp = AccountId::from("lp");
        c.register_lp(&lp, true, 100 * ETH);
        c.produce_and_commit().unwrap();
        let op = c.utxos().owned_by(&names[0])[0].outpoint;
        let user_l1 = c.l1().balance(&names[0]);
        let lp_l1 = c.l1().balance(&lp);
        let id = c.start_fast_withdrawal(&names[0], op, &lp, fee).unwrap();
        c.advance_time(int(delay)).unwrap();
        let paid = pay && c.lp_pay(id).is_ok();
        c.advance_time(int(4_000)).unwrap();
        let s = c.swap(id).unwrap().clone();
        let user_gain = c.l1().balance(&names[0]) - user_l1;
        match s.status {
            SwapStatus::Completed => {
                prop_assert!(paid);
                prop_assert_eq!(user_gain, 5 * ETH - fee);
                prop_assert_eq!(c.utxos().balance_of(&lp), 5 * ETH);
                prop_assert_eq!(c.utxos().balance_of(&names[0]), 0);
            }
            SwapStatus::Reclaimed => {
                prop_assert_eq!(user_gain, 0);
                prop_assert_eq!(c.utxos().balance_of(&lp), 0);
                prop_assert_eq!(c.utxos().balance_of(&names[0]), 5 * ETH);
                prop_assert!(c.l1().balance(&lp) <= lp_l1);
            }
            SwapStatus::Locked => prop_assert!(false, "swap still locked"),
        }
        prop_assert!(c.check_invariants().is_ok(), "{:?}", c.check_invariants());
    }

    /// Payout per user equals the sum of their snapshot outputs not spent
    /// in a published block after the snapshot.
    #[test]
    fn mass_exit_bits_match_oracle(seed in 0u64..500, spends in prop::collection::vec(any::<bool>(), 6), join in prop::collection::vec(any::<bool>(), 6)) {
        let (mut c, names) = setup(6, 1_000, seed);
        c.produce_and_commit().unwrap();
        let snap = c.height();
        let snapshot: Vec<_> = c.snapshot(snap).unwrap().iter().collect();
        for (i, n) in names.iter().enumerate() {
            if spends[i] {
                c.pay(n, &AccountId::from("sink"), 1_000, 0).unwrap();
            }
        }
        c.produce_and_commit().unwrap();
        c.set_mode(OperatorMode::Withhold);
        c.produce_and_commit().unwrap();
        let participants: Vec<AccountId> = names.iter().enumerate().filter(|(i, _)| join[*i]).map(|(_, n)| n.clone()).collect();
        let before: Vec<Amount> = names.iter().map(|n| c.l1().balance(n)).collect();
        let watcher = AccountId::from("watcher");
        let id = match c.mass_exit(&watcher, &participants, Some(snap)) {
            Ok(Some(id)) => id,
            Ok(None) => { prop_assert!(participants.is_empty()); return Ok(()); }
            Err(e) => { prop_assert!(participants.is_empty(), "{e}"); return Ok(()); }
        };
        c.challenge_meit_all(id, &watcher).unwrap();
        c.advance_time(int(21 * DAY)).unwrap();
        c.finalize_meit(id).unwrap();
        for (i, n) in names.iter().enumerate() {
            let expected: Amount = if join[i] && !spends[i] {
                snapshot.iter().filter(|u| &u.owner == n).map(|u| u.amount).sum()
            } else {
                0
            };
            prop_assert_eq!(c.l1().balance(n) - before[i], expected, "user {}", i);
        }
        prop_assert!(c.check_invariants().is_ok(), "{:?}", c.check_invariants());
    }
}
