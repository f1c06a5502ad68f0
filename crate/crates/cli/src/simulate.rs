use std::fmt::Debug;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::value::RawValue;

use l2sim::channels::{ChannelId, Enforcer, PaymentNetwork};
use l2sim::events::EventLog;
use l2sim::l1::ChainParams;
use l2sim::plasma::{MeitId, PlasmaChain};
use l2sim::rollup::{BatchStatus, Rollup};
use l2sim::{AccountId, Amount, Hash256};

use crate::scenario::{self, ChannelStep, Kind, PlasmaStep, RollupStep, Scenario};
use crate::CliError;

/// Serialized through the writer so amounts above `u64::MAX` survive.
pub fn raw<T: Serialize + ?Sized>(v: &T) -> Box<RawValue> {
    RawValue::from_string(serde_json::to_string(v).expect("serializable")).expect("valid json")
}

/// A JSON object from already-serialized members.
fn obj(members: &[(&str, Box<RawValue>)]) -> Box<RawValue> {
    let body: Vec<String> =
        members.iter().map(|(k, v)| format!("{}:{}", serde_json::to_string(k).expect("string"), v.get())).collect();
    RawValue::from_string(format!("{{{}}}", body.join(","))).expect("valid json")
}

#[derive(Serialize)]
struct StepRecord {
    index: usize,
    action: String,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<Box<RawValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct Summary {
    backend: Kind,
    seed: u64,
    steps: Vec<StepRecord>,
    /// "ok", or the first violation found.
    invariants: String,
    #[serde(rename = "final")]
    final_state: Box<RawValue>,
}

/// `ChannelStep::DirectPay { .. }` becomes `direct_pay`.
fn action_name(step: &impl Debug) -> String {
    let debug = format!("{step:?}");
    let head = debug.split(|c: char| !c.is_alphanumeric()).next().unwrap_or_default();
    let mut out = String::new();
    for (i, c) in head.chars().enumerate() {
        if c.is_uppercase() && i > 0 {
            out.push('_');
        }
        out.push(c.to_ascii_lowercase());
    }
    out
}

struct Transcript {
    steps: Vec<StepRecord>,
    violation: Option<String>,
}

impl Transcript {
    fn new() -> Self {
        Transcript { steps: Vec::new(), violation: None }
    }

    fn record(&mut self, index: usize, step: &impl Debug, outcome: Result<Box<RawValue>, String>) {
        let (ok, result, error) = match outcome {
            Ok(v) => (true, Some(v), None),
            Err(e) => (false, None, Some(e)),
        };
        self.steps.push(StepRecord { index, action: action_name(step), ok, result, error });
    }

    /// Returns false once a violation has been seen.
    fn check(&mut self, at: &str, result: Result<(), String>) -> bool {
        if let Err(e) = result {
            self.violation = Some(format!("{at}: {e}"));
        }
        self.violation.is_none()
    }

    fn finish(
        self,
        backend: Kind,
        seed: u64,
        out: &Path,
        events: &EventLog,
        final_state: Box<RawValue>,
        extra: &[(&str, String)],
    ) -> Result<(), CliError> {
        fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let write = |name: &str, body: &str| {
            let p = out.join(name);
            fs::write(&p, body).map_err(|e| CliError::io(&p, e))
        };
        write("events.jsonl", &events.to_jsonl())?;
        for (name, body) in extra {
            write(name, body)?;
        }
        let failed = self.steps.iter().filter(|s| !s.ok).count();
        let total = self.steps.len();
        let summary = Summary {
            backend,
            seed,
            steps: self.steps,
            invariants: self.violation.clone().unwrap_or_else(|| "ok".into()),
            final_state,
        };
        let mut text = serde_json::to_string_pretty(&summary).expect("serializable");
        text.push('\n');
        write("summary.json", &text)?;
        println!("{total} steps, {failed} rejected, {} events; wrote {}", events.len(), out.display());
        match self.violation {
            Some(v) => Err(CliError::Violation(v)),
            None => Ok(()),
        }
    }
}

fn setup_err(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("scenario setup: {e}"))
}

fn ok<T: Serialize, E: std::fmt::Display>(r: Result<T, E>) -> Result<Box<RawValue>, String> {
    r.map(|v| raw(&v)).map_err(|e| e.to_string())
}

pub fn run(path: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let sc = scenario::load(path)?;
    let seed = seed.or(sc.seed);
    match sc.backend {
        Kind::Channels => channels(&sc, seed.unwrap_or(0), out),
        Kind::Plasma => plasma(&sc, seed.unwrap_or(0), out),
        Kind::Rollup => rollup(&sc, seed.unwrap_or(0), out),
        Kind::Bench => crate::bench::run_section(sc.bench.unwrap_or_default(), seed, out),
    }
}

#[derive(Serialize)]
struct ChannelView<'a> {
    index: usize,
    id: ChannelId,
    party_a: &'a AccountId,
    balance_a: Amount,
    party_b: &'a AccountId,
    balance_b: Amount,
    state_number: u64,
    open: bool,
    payouts: std::collections::BTreeMap<AccountId, Amount>,
}

fn channels(sc: &Scenario, seed: u64, out: &Path) -> Result<(), CliError> {
    let sec = sc.channels.as_ref().expect("validated");
    let params = sc.chain_or(ChainParams::bitcoin_2021())?;
    let mut net = PaymentNetwork::new(params, sec.config.clone(), seed).map_err(setup_err)?;
    for n in &sec.nodes {
        net.add_node(&n.id);
        net.fund_l1(&n.id, n.l1_funds);
    }
    let mut ids = Vec::new();
    for c in &sec.channels {
        ids.push(net.open_channel(&c.a, &c.b, c.fund_a, c.fund_b, c.fee).map_err(setup_err)?);
    }
    let mut t = Transcript::new();
    if t.check("setup", net.check_invariants()) {
        for (i, step) in sec.script.iter().enumerate() {
            let outcome = match step {
                ChannelStep::Pay { from, to, amount, max_attempts } => net
                    .create_invoice(to, *amount)
                    .and_then(|inv| net.pay_invoice(from, &inv, *max_attempts))
                    .map(|(outcome, attempts)| obj(&[("outcome", raw(&outcome)), ("attempts", raw(&attempts))]))
                    .map_err(|e| e.to_string()),
                ChannelStep::DirectPay { channel, payer, amount } => net
                    .direct_pay(ids[*channel], payer, *amount)
                    .map(|state| obj(&[("state", raw(&state))]))
                    .map_err(|e| e.to_string()),
                ChannelStep::SetOnline { node, online } => {
                    net.set_online(node, *online);
                    Ok(raw(&online))
                }
                ChannelStep::RegisterMonitor { channel, party, operator, reward } => {
                    ok(net.register_monitor(ids[*channel], party, operator, *reward))
                }
                ChannelStep::CloseUnilateral { channel, broadcaster, state } => {
                    let id = ids[*channel];
                    let latest = net.channel(id).map(|c| c.state_number).unwrap_or_default();
                    ok(net.close_unilateral(id, broadcaster, state.unwrap_or(latest)))
                }
                ChannelStep::CloseCooperative { channel } => ok(net.close_cooperative(ids[*channel])),
                ChannelStep::Penalize { channel } => ok(net.penalize_cheat(ids[*channel], Enforcer::Victim)),
                ChannelStep::AdvanceBlocks { n } => ok(net.advance_blocks(*n).map(|()| net.height())),
            };
            t.record(i, step, outcome);
            if !t.check(&format!("script[{i}]"), net.check_invariants()) {
                break;
            }
        }
    }
    let view: Vec<ChannelView> = net
        .channels()
        .map(|c| ChannelView {
            index: ids.iter().position(|id| *id == c.id).unwrap_or(usize::MAX),
            id: c.id,
            party_a: &c.party_a,
            balance_a: c.balance_a,
            party_b: &c.party_b,
            balance_b: c.balance_b,
            state_number: c.state_number,
            open: c.is_open(),
            payouts: net.payouts(c.id),
        })
        .collect();
    let l1: std::collections::BTreeMap<&AccountId, Amount> =
        sec.nodes.iter().map(|n| (&n.id, net.l1().balance(&n.id))).collect();
    let final_state = obj(&[("height", raw(&net.height())), ("channels", raw(&view)), ("l1_balances", raw(&l1))]);
    t.finish(Kind::Channels, seed, out, net.events(), final_state, &[])
}

fn plasma(sc: &Scenario, seed: u64, out: &Path) -> Result<(), CliError> {
    let sec = sc.plasma.as_ref().expect("validated");
    let params = sc.chain_or(ChainParams::ethereum_2021())?;
    let mut c = PlasmaChain::with_l1(sec.config.clone(), params, seed).map_err(setup_err)?;
    for u in &sec.users {
        c.register_user(&u.id);
        c.fund_l1(&u.id, u.l1_funds);
    }
    for lp in &sec.lps {
        c.register_lp(&lp.id, lp.validates_chain, lp.l1_funds);
    }
    let mut pending = Vec::new();
    for u in sec.users.iter().filter(|u| u.deposit > 0) {
        pending.push((&u.id, c.deposit(&u.id, u.deposit).map_err(setup_err)?));
    }
    if !pending.is_empty() {
        c.produce_and_commit().map_err(setup_err)?;
        for (user, id) in pending {
            c.acknowledge_deposit(user, id).map_err(setup_err)?;
        }
    }
    let fee = sec.config.transfer_fee();
    let mut meit: Option<MeitId> = None;
    let mut t = Transcript::new();
    if t.check("setup", c.check_invariants()) {
        for (i, step) in sec.script.iter().enumerate() {
            let outcome = match step {
                PlasmaStep::Pay { from, to, amount, fee: f } => ok(c.pay(from, to, *amount, f.unwrap_or(fee))),
                PlasmaStep::ProduceBlocks { count } => {
                    let mut heights = Vec::new();
                    let mut res = Ok(());
                    for _ in 0..*count {
                        match c.produce_and_commit() {
                            Ok(b) => heights.push(b.height),
                            Err(e) => {
                                res = Err(e);
                                break;
                            }
                        }
                    }
                    ok(res.map(|()| heights))
                }
                PlasmaStep::SetMode { mode } => {
                    c.set_mode(*mode);
                    Ok(raw(mode))
                }
                PlasmaStep::AdvanceTime { seconds } => {
                    ok(c.advance_time(*seconds).map(|()| l2sim::rational::Exact(c.now())))
                }
                PlasmaStep::StartExits { user } => {
                    let mut started = Vec::new();
                    let mut refused = Vec::new();
                    for u in c.utxos().owned_by(user) {
                        match c.exit_claim(&u.outpoint).and_then(|claim| c.start_exit(user, claim)) {
                            Ok(id) => started.push(id),
                            Err(e) => refused.push((u.outpoint, e.to_string())),
                        }
                    }
                    Ok(obj(&[("started", raw(&started)), ("refused", raw(&refused))]))
                }
                PlasmaStep::ChallengeAll { challenger } => ok(c.challenge_all(challenger)),
                PlasmaStep::FinalizeDue => ok(c.finalize_due()),
                PlasmaStep::MassExit { operator, participants, snapshot } => {
                    let r = c.mass_exit(operator, participants, *snapshot);
                    if let Ok(Some(id)) = r {
                        meit = Some(id);
                    }
                    ok(r)
                }
                PlasmaStep::ChallengeMassExit { challenger } => match meit {
                    Some(id) => ok(c.challenge_meit_all(id, challenger)),
                    None => Err("no mass exit started".into()),
                },
                PlasmaStep::FinalizeMassExit => match meit {
                    Some(id) => ok(c.finalize_meit(id)),
                    None => Err("no mass exit started".into()),
                },
                PlasmaStep::FastWithdrawal { user, lp, fee, lp_pays } => {
                    match c.utxos().owned_by(user).into_iter().max_by_key(|u| (u.amount, u.outpoint)) {
                        None => Err(format!("{user} holds no outputs")),
                        Some(u) => ok(c.start_fast_withdrawal(user, u.outpoint, lp, *fee).and_then(|id| {
                            if *lp_pays {
                                c.lp_pay(id)?;
                            }
                            Ok(id)
                        })),
                    }
                }
            };
            t.record(i, step, outcome);
            if !t.check(&format!("script[{i}]"), c.check_invariants()) {
                break;
            }
        }
    }
    let accounts: Vec<&AccountId> = sec.users.iter().map(|u| &u.id).chain(sec.lps.iter().map(|l| &l.id)).collect();
    let l1: std::collections::BTreeMap<&AccountId, Amount> = accounts.iter().map(|a| (*a, c.l1().balance(a))).collect();
    let exits = c.exits();
    let meits: Vec<_> = meit.map(|last| (0..=last).filter_map(|id| c.meit(id)).collect()).unwrap_or_default();
    let final_state = obj(&[
        ("height", raw(&c.height())),
        ("halted", raw(&c.is_halted())),
        ("l2_balances", raw(&c.utxos().balances())),
        ("l1_balances", raw(&l1)),
        ("exited_total", raw(&c.exited_total())),
        ("fees_total", raw(&c.fees_total())),
        ("exits", raw(exits)),
        ("mass_exits", raw(&meits)),
    ]);
    t.finish(Kind::Plasma, seed, out, c.events(), final_state, &[])
}

fn rollup(sc: &Scenario, seed: u64, out: &Path) -> Result<(), CliError> {
    let sec = sc.rollup.as_ref().expect("validated");
    let params = sc.chain_or(ChainParams::ethereum_2021())?;
    let mut r = Rollup::new(sec.params(), params, seed).map_err(setup_err)?;
    r.set_auto_publish(sec.auto_publish);
    for p in &sec.publishers {
        r.fund_l1(&p.id, p.l1_funds);
        r.stake_publisher(&p.id).map_err(setup_err)?;
    }
    for u in &sec.users {
        r.fund_l1(&u.id, u.l1_funds);
        if u.deposit > 0 {
            r.deposit(&u.id, u.deposit).map_err(setup_err)?;
        } else {
            r.register(&u.id).map_err(setup_err)?;
        }
    }
    let operator = r.operator().clone();
    let mut t = Transcript::new();
    if t.check("setup", r.check_invariants()) {
        for (i, step) in sec.script.iter().enumerate() {
            let outcome = match step {
                RollupStep::Deposit { user, amount } => ok(r.deposit(user, *amount)),
                RollupStep::Transfer { from, to, amount } => ok(r.transfer(from, to, *amount)),
                RollupStep::BatchedTransfer { fee_payer, transfers } => {
                    let list: Vec<(AccountId, AccountId, Amount)> =
                        transfers.iter().map(|x| (x.from.clone(), x.to.clone(), x.amount)).collect();
                    ok(r.batched_transfer(fee_payer, &list).map(|fee| fee.to_string()))
                }
                RollupStep::Withdraw { user, amount } => ok(r.withdraw(user, *amount)),
                RollupStep::Fraud { mint } => {
                    r.schedule_fraud(*mint);
                    Ok(raw(&mint.to_string()))
                }
                RollupStep::Publish { publisher } => ok(r.publish(publisher.as_ref().unwrap_or(&operator))),
                RollupStep::Stake { publisher } => ok(r.stake_publisher(publisher)),
                RollupStep::AdvanceTime { seconds } => {
                    ok(r.advance_time(*seconds).map(|()| l2sim::rational::Exact(r.now())))
                }
                RollupStep::Watch { challenger } => ok(r.watch(challenger)),
                RollupStep::Challenge { challenger, batch, root } => {
                    let claimed = match root {
                        Some(hex) => Ok(Hash256::from_hex(hex).expect("validated")),
                        None => r.correct_root(*batch),
                    };
                    ok(claimed.and_then(|root| r.challenge_batch(challenger, *batch, root)))
                }
                RollupStep::Settle => {
                    let wait = r.params().challenge_period_s + r.params().batch_interval_s;
                    ok(r.advance_time(wait).map(|()| l2sim::rational::Exact(r.now())))
                }
            };
            t.record(i, step, outcome);
            if !t.check(&format!("script[{i}]"), r.check_invariants()) {
                break;
            }
        }
    }
    let count = |s: BatchStatus| r.batches().iter().filter(|b| b.status() == s).count();
    let balances = r.state().balances();
    let batches = obj(&[
        ("pending", raw(&count(BatchStatus::Pending))),
        ("finalized", raw(&count(BatchStatus::Finalized))),
        ("reverted", raw(&count(BatchStatus::Reverted))),
    ]);
    let final_state = obj(&[
        ("now", raw(&l2sim::rational::Exact(r.now()))),
        ("head_root", raw(&r.head_root())),
        ("finalized_root", raw(&r.finalized_root())),
        ("batches", batches),
        ("pool", raw(&r.pool_len())),
        ("l2_balances", raw(&balances)),
        ("withdrawals", raw(r.withdrawals())),
    ]);
    let ledger = r.batch_ledger_jsonl();
    t.finish(Kind::Rollup, seed, out, r.events(), final_state, &[("batches.jsonl", ledger)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_names_are_snake_case() {
        let step = ChannelStep::AdvanceBlocks { n: 1 };
        assert_eq!(action_name(&step), "advance_blocks");
        assert_eq!(action_name(&PlasmaStep::FinalizeDue), "finalize_due");
    }

    #[test]
    fn raw_keeps_wide_integers() {
        let big: Amount = 1_000 * l2sim::types::WEI_PER_ETH;
        let o = obj(&[("v", raw(&big))]);
        assert_eq!(o.get(), "{\"v\":1000000000000000000000}");
    }
}
