use std::collections::BTreeMap;

use l2sim::l1::ChainParams;
use l2sim::rational::int;
use l2sim::rollup::{
    batch_fee_split, rollup_throughput, BatchStatus, ChallengeOutcome, Rollup, RollupError, RollupMode, RollupParams,
};
use l2sim::types::WEI_PER_ETH;
use l2sim::{AccountId, Amount};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ETH: Amount = WEI_PER_ETH;

fn user(i: usize) -> AccountId {
    AccountId::new(format!("user{i}"))
}

fn setup(mode: RollupMode, users: usize, seed: u64) -> Rollup {
    let mut r = Rollup::new(RollupParams::preset(mode), ChainParams::ethereum_2021(), seed).unwrap();
    r.fund_l1(&AccountId::from("watcher"), 1_000 * ETH);
    for i in 0..users {
        r.fund_l1(&user(i), 1_000 * ETH);
    }
    r
}

/// Balances as a plain map, updated each time the rollup accepts an
/// operation into its pool.
#[derive(Default)]
struct Oracle {
    balances: BTreeMap<AccountId, Amount>,
    deposited: Amount,
    withdrawn: Amount,
}

impl Oracle {
    fn add(&mut self, who: &AccountId, amount: Amount) {
        *self.balances.entry(who.clone()).or_default() += amount;
    }

    fn sub(&mut self, who: &AccountId, amount: Amount) {
        *self.balances.get_mut(who).unwrap() -= amount;
    }
}

#[derive(Debug, Clone)]
enum Step {
    Deposit(usize, Amount),
    Transfer(usize, usize, Amount),
    Withdraw(usize, Amount),
    Tick,
    Fraud(Amount),
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        2 => (0..6usize, 1..20u128).prop_map(|(u, a)| Step::Deposit(u, a * ETH / 10)),
        5 => (0..6usize, 0..6usize, 1..50u128).prop_map(|(f, t, a)| Step::Transfer(f, t, a * ETH / 100)),
        1 => (0..6usize, 1..10u128).prop_map(|(u, a)| Step::Withdraw(u, a * ETH / 100)),
        2 => Just(Step::Tick),
        1 => (1..5u128).prop_map(|m| Step::Fraud(m * ETH)),
    ]
}

/// Runs `steps` against a rollup, with a watcher challenging every wrong
/// root after each tick. Returns the rollup and the oracle.
fn run(mode: RollupMode, steps: &[Step], seed: u64) -> (Rollup, Oracle) {
    let mut r = setup(mode, 6, seed);
    let mut o = Oracle::default();
    o.add(r.operator(), 0);
    let op = r.operator().clone();
    let watcher = AccountId::from("watcher");
    let interval = r.params().batch_interval_s;
    for s in steps {
        match s {
            Step::Deposit(u, a) => {
                r.deposit(&user(*u), *a).unwrap();
                o.add(&user(*u), *a);
                o.deposited += a;
            }
            Step::Transfer(f, t, a) => {
                let fee = r.params().transfer_fee;
                if r.transfer(&user(*f), &user(*t), *a).is_ok() {
                    o.sub(&user(*f), a + fee);
                    o.add(&user(*t), *a);
                    o.add(&op, fee);
                }
            }
            Step::Withdraw(u, a) => {
                let fee = r.params().withdrawal_fee;
                if r.withdraw(&user(*u), *a).is_ok() {
                    o.sub(&user(*u), a + fee);
                    o.add(&op, fee);
                    o.withdrawn += a;
                }
            }
            Step::Tick => {
                r.advance_time(interval).unwrap();
                r.watch(&watcher).unwrap();
                restake(&mut r);
            }
            Step::Fraud(m) => r.schedule_fraud(*m),
        }
        r.check_invariants().unwrap();
    }
    (r, o)
}

/// Posts a fresh bond for the operator once it has been slashed.
fn restake(r: &mut Rollup) {
    let op = r.operator().clone();
    if r.bond(&op) == 0 {
        r.stake_publisher(&op).unwrap();
    }
}

/// Publishes everything still pooled, challenging as it goes, then waits
/// out every window.
fn drain(r: &mut Rollup) {
    let watcher = AccountId::from("watcher");
    let interval = r.params().batch_interval_s;
    for _ in 0..20 {
        r.advance_time(interval).unwrap();
        r.watch(&watcher).unwrap();
        restake(r);
        if r.pool_len() == 0 && r.queued_deposits().is_empty() {
            break;
        }
    }
    let period = r.params().challenge_period_s;
    r.advance_time(period + interval).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn replay_from_calldata_recovers_every_finalized_root(
        zk in any::<bool>(),
        steps in prop::collection::vec(step(), 1..40),
        seed in any::<u64>(),
    ) {
        let mode = if zk { RollupMode::Zk } else { RollupMode::Optimistic };
        let (mut r, _) = run(mode, &steps, seed);
        drain(&mut r);
        let replay = r.replay_finalized().unwrap();
        prop_assert_eq!(replay.root(), r.finalized_root());
        prop_assert_eq!(replay.root(), r.state().root());
        prop_assert_eq!(&replay, r.state());
        // Every finalized prefix replays to its own root.
        for b in r.batches().iter().filter(|b| b.status() == BatchStatus::Finalized) {
            prop_assert_eq!(r.correct_root(b.index).unwrap(), b.batch.new_root);
        }
    }

    #[test]
    fn vigilant_chain_matches_honest_oracle(
        zk in any::<bool>(),
        steps in prop::collection::vec(step(), 1..40),
        seed in any::<u64>(),
    ) {
        let mode = if zk { RollupMode::Zk } else { RollupMode::Optimistic };
        let (mut r, o) = run(mode, &steps, seed);
        drain(&mut r);
        r.check_invariants().unwrap();
        prop_assert_eq!(r.pool_len(), 0);
        let balances: BTreeMap<AccountId, Amount> =
            r.state().balances().into_iter().filter(|(k, _)| o.balances.contains_key(k)).collect();
        prop_assert_eq!(&balances, &o.balances);
        prop_assert_eq!(r.state().total() + o.withdrawn, o.deposited);
        let credited: Amount = r.withdrawals().iter().filter(|w| w.credited_at.is_some()).map(|w| w.amount).sum();
        prop_assert_eq!(credited, o.withdrawn);
        prop_assert!(r.batches().iter().all(|b| b.status() != BatchStatus::Pending));
    }

    #[test]
    fn throughput_falls_with_tx_size_and_proof_gas(
        size in 1..500u64,
        extra in 1..100u64,
        gas in 0..10_000_000u64,
        more_gas in 1..2_000_000u64,
    ) {
        let l1 = ChainParams::ethereum_2021();
        let base = RollupParams { tx_size_bytes: size, proof_gas: gas, ..RollupParams::zk() };
        let t = rollup_throughput(&l1, &base).unwrap();
        let bigger = RollupParams { tx_size_bytes: size + extra, ..base.clone() };
        prop_assert!(rollup_throughput(&l1, &bigger).unwrap().tps < t.tps);
        let heavier = RollupParams { proof_gas: gas + more_gas, ..base };
        match rollup_throughput(&l1, &heavier) {
            Ok(h) => prop_assert!(h.tps < t.tps),
            Err(e) => prop_assert!(
                matches!(e, RollupError::ProofExceedsGasLimit { .. }),
                "unexpected error {e}"
            ),
        }
    }
}

#[test]
fn zk_never_finalizes_a_wrong_root() {
    let mut r = setup(RollupMode::Zk, 3, 7);
    r.deposit(&user(0), 5 * ETH).unwrap();
    r.register(&user(1)).unwrap();
    r.advance_time(int(600)).unwrap();
    let op = r.operator().clone();
    r.set_auto_publish(false);
    for k in 1..=5u128 {
        r.transfer(&user(0), &user(1), ETH / 10).unwrap();
        r.schedule_fraud(k * ETH);
        assert_eq!(r.publish(&op), Err(RollupError::MissingProof));
        r.publish(&op).unwrap().unwrap();
    }
    for b in r.batches() {
        assert_eq!(b.status(), BatchStatus::Finalized);
        assert_eq!(r.correct_root(b.index).unwrap(), b.batch.new_root);
    }
    assert_eq!(r.state().balance(&user(1)), ETH / 2);
    r.check_invariants().unwrap();
}

#[test]
fn fraud_at_k_reverts_to_oracle_at_k_minus_one() {
    let mut r = setup(RollupMode::Optimistic, 4, 11);
    for i in 0..4 {
        r.deposit(&user(i), 10 * ETH).unwrap();
    }
    r.advance_time(int(600)).unwrap();
    for k in 1..3 {
        r.transfer(&user(k), &user(0), ETH).unwrap();
        r.advance_time(int(600)).unwrap();
    }
    // Oracle: replay batches 0..k-1 from calldata before the fraud.
    let oracle_root = r.replay_chain().unwrap().root();
    let k = r.batches().len() as u64;
    r.transfer(&user(3), &user(0), ETH).unwrap();
    r.schedule_fraud(100 * ETH);
    r.advance_time(int(600)).unwrap();
    for i in 0..3 {
        r.transfer(&user(i), &user(3), ETH / 2).unwrap();
        r.advance_time(int(600)).unwrap();
    }
    let correct = r.correct_root(k).unwrap();
    assert_ne!(correct, r.batches()[k as usize].batch.new_root);
    let out = r.challenge_batch(&AccountId::from("watcher"), k, correct).unwrap();
    assert_eq!(out, ChallengeOutcome::Fraud { reverted: vec![k, k + 1, k + 2, k + 3], slashed: 10 * ETH });
    assert_eq!(r.head_root(), oracle_root);
    assert_eq!(r.state().root(), oracle_root);
    assert_eq!(r.pool_len(), 4);
    r.check_invariants().unwrap();
    // The reverted operations are published again, honestly.
    restake(&mut r);
    r.advance_time(int(600)).unwrap();
    assert_eq!(r.pool_len(), 0);
    assert_eq!(r.state().balance(&user(3)), 10 * ETH - ETH - r.params().transfer_fee + 3 * ETH / 2);
}

#[test]
fn hundred_batches_mean_fee_matches_direct_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ledger: Vec<(Amount, usize)> =
        (0..100).map(|_| (rng.random_range(0..100 * ETH / 1_000), rng.random_range(1..300))).collect();
    let split: Vec<Amount> = ledger.iter().map(|(c, n)| batch_fee_split(*c, *n).unwrap().per_tx).collect();
    let mean = split.iter().sum::<Amount>() as f64 / 100.0;
    let direct = ledger.iter().map(|(c, n)| *c as f64 / *n as f64).sum::<f64>() / 100.0;
    // Floor division loses under one wei per batch.
    assert!((mean - direct).abs() <= 1.0, "{mean} vs {direct}");
    assert_eq!(batch_fee_split(0, 5).unwrap().per_tx, 0);
}

#[test]
fn batch_ledger_costs_split_across_ops() {
    let mut r = setup(RollupMode::Zk, 5, 2);
    for i in 0..5 {
        r.deposit(&user(i), ETH).unwrap();
    }
    r.advance_time(int(600)).unwrap();
    for i in 0..5 {
        r.transfer(&user(i), &user((i + 1) % 5), ETH / 10).unwrap();
    }
    r.advance_time(int(600)).unwrap();
    for line in r.batch_ledger_jsonl().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let cost: Amount = v["l1_cost"].as_str().unwrap().parse().unwrap();
        let per: Amount = v["per_tx_fee"].as_str().unwrap().parse().unwrap();
        let ops = v["ops"].as_u64().unwrap() as Amount;
        assert_eq!(per, cost / ops);
    }
}
