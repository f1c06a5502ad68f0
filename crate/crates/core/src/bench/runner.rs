use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::channels::{FeePolicy, PaymentNetwork, PaymentOutcome};
use crate::events::EventLog;
use crate::hash::Hash256;
use crate::l1::{byte_fee, ChainParams, L1Chain, TxKind};
use crate::plasma::{ChildTx, PlasmaChain};
use crate::rational::{self, int, Rational};
use crate::rollup::{BatchStatus, Rollup, RollupError, RollupOp};
use crate::types::{AccountId, Amount};

use super::{generate_workload, Backend, BenchConfig, BenchError, Currency, PaymentIntent, WorkloadSpec};

/// Latencies in milliseconds; percentiles by nearest rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyStats {
    #[serde(with = "rational::serde_exact")]
    pub mean: Rational,
    #[serde(with = "rational::serde_exact")]
    pub p50: Rational,
    #[serde(with = "rational::serde_exact")]
    pub p95: Rational,
    #[serde(with = "rational::serde_exact")]
    pub max: Rational,
}

impl LatencyStats {
    pub fn from_samples(mut ms: Vec<Rational>) -> Option<Self> {
        if ms.is_empty() {
            return None;
        }
        ms.sort();
        let n = ms.len();
        let rank = |p: i128| ms[(rational::ratio(p * n as i128, 100).ceil().to_integer() as usize).clamp(1, n) - 1];
        let mean = ms.iter().copied().sum::<Rational>() / int(n as i128);
        Some(LatencyStats { mean, p50: rank(50), p95: rank(95), max: ms[n - 1] })
    }
}

/// Fees paid during a run, by payer and layer, in the backend's base unit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeeTotals {
    pub customer_l1: Amount,
    pub customer_l2: Amount,
    pub merchant_l1: Amount,
    pub merchant_l2: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub intent: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub backend: Backend,
    pub submitted: usize,
    pub completed: usize,
    /// First submission to last finality.
    #[serde(with = "rational::serde_exact")]
    pub elapsed_s: Rational,
    #[serde(with = "rational::serde_exact")]
    pub achieved_tps: Rational,
    pub latency_ms: Option<LatencyStats>,
    pub fee_totals: FeeTotals,
    pub failures: Vec<Failure>,
    /// Measured drop in customer holdings across L1 and L2.
    pub customer_debits: Amount,
    /// Measured rise in the merchant's L2 holdings.
    pub merchant_credits: Amount,
    pub completed_intents: Vec<usize>,
    #[serde(skip)]
    pub events: EventLog,
}

impl RunResult {
    /// Customer debits equal merchant credits plus every fee charged on
    /// the payment path.
    pub fn accounting_closes(&self) -> bool {
        let f = &self.fee_totals;
        self.customer_debits == self.merchant_credits + f.customer_l1 + f.customer_l2 + f.merchant_l2
    }
}

fn customer(i: usize) -> AccountId {
    AccountId::new(format!("customer{i}"))
}

fn merchant() -> AccountId {
    AccountId::from("supermarket")
}

/// Collects per-intent outcomes and turns them into a [`RunResult`].
struct Tally {
    backend: Backend,
    t0: Rational,
    submitted: usize,
    done: BTreeMap<usize, Rational>,
    failures: Vec<Failure>,
    fees: FeeTotals,
    events: EventLog,
}

impl Tally {
    fn new(backend: Backend, t0: Rational, intents: &[PaymentIntent]) -> Self {
        let mut events = EventLog::new();
        events.push(t0, "bench_start", json!({ "backend": backend, "intents": intents.len() }));
        Tally {
            backend,
            t0,
            submitted: intents.len(),
            done: BTreeMap::new(),
            failures: Vec::new(),
            fees: FeeTotals::default(),
            events,
        }
    }

    fn fail(&mut self, intent: usize, reason: impl ToString) {
        let reason = reason.to_string();
        self.events.push(
            self.t0,
            "payment_failed",
            json!({ "backend": self.backend, "intent": intent, "reason": reason }),
        );
        self.failures.push(Failure { intent, reason });
    }

    fn complete(&mut self, intent: usize, at: Rational) {
        self.done.insert(intent, at);
    }

    fn finish(mut self, customer_debits: Amount, merchant_credits: Amount) -> RunResult {
        let mut latencies = Vec::with_capacity(self.done.len());
        let mut order: Vec<(&usize, &Rational)> = self.done.iter().collect();
        order.sort_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(b.0)));
        for (intent, at) in order {
            let ms = (*at - self.t0) * int(1_000);
            latencies.push(ms);
            self.events.push(
                *at,
                "payment_final",
                json!({ "backend": self.backend, "intent": intent, "latency_ms": rational::to_exact_string(&ms) }),
            );
        }
        let last = self.done.values().max().copied().unwrap_or(self.t0);
        let elapsed_s = last - self.t0;
        let completed = self.done.len();
        let achieved_tps =
            if completed == 0 || elapsed_s == int(0) { int(0) } else { int(completed as i128) / elapsed_s };
        self.events.push(
            last,
            "bench_end",
            json!({
                "backend": self.backend,
                "completed": completed,
                "failed": self.failures.len(),
                "tps": rational::to_exact_string(&achieved_tps),
            }),
        );
        RunResult {
            backend: self.backend,
            submitted: self.submitted,
            completed,
            elapsed_s,
            achieved_tps,
            latency_ms: LatencyStats::from_samples(latencies),
            fee_totals: self.fees,
            failures: self.failures,
            customer_debits,
            merchant_credits,
            completed_intents: self.done.into_keys().collect(),
            events: self.events,
        }
    }
}

/// Runs one backend over the workload `spec` generates. All intents are
/// submitted at once; throughput is completions over the time from first
/// submission to last finality.
pub fn run_benchmark(backend: Backend, spec: &WorkloadSpec, config: &BenchConfig) -> Result<RunResult, BenchError> {
    config.validate()?;
    let intents = generate_workload(spec)?;
    let seed = spec.seed;
    if intents.is_empty() {
        return Ok(Tally::new(backend, int(0), &intents).finish(0, 0));
    }
    match backend {
        Backend::Channels => run_channels(&intents, config, seed),
        Backend::Plasma => run_plasma(&intents, config, seed),
        Backend::RollupZk => run_rollup(Backend::RollupZk, &intents, config, seed),
        Backend::RollupOptimistic => run_rollup(Backend::RollupOptimistic, &intents, config, seed),
        Backend::L1Direct => run_l1(&intents, config),
    }
}

/// Runs each backend on its own thread; results keep the input order.
pub fn run_all(backends: &[Backend], spec: &WorkloadSpec, config: &BenchConfig) -> Result<Vec<RunResult>, BenchError> {
    std::thread::scope(|s| {
        let handles: Vec<_> = backends.iter().map(|b| s.spawn(move || run_benchmark(*b, spec, config))).collect();
        handles.into_iter().map(|h| h.join().expect("benchmark thread panicked")).collect()
    })
}

fn native(intent: &PaymentIntent, cur: Currency) -> Amount {
    intent.amount * cur.base_per_micro
}

fn wallet(intents: &[PaymentIntent], cur: Currency) -> Amount {
    intents.iter().map(|i| native(i, cur)).max().unwrap_or(0)
}

/// Customers each open a channel to one routing node, which has a single
/// channel to the merchant. The routing node serves payments one at a
/// time; each HTLC round trip crosses every hop twice.
fn run_channels(intents: &[PaymentIntent], cfg: &BenchConfig, seed: u64) -> Result<RunResult, BenchError> {
    let cur = Currency::BTC;
    let ch = &cfg.channels;
    let mut net = PaymentNetwork::new(cfg.channel_chain.clone(), ch.clone(), seed)?;
    let hub = AccountId::from("routing-node");
    let shop = merchant();
    let open_fee = byte_fee(ch.open_tx_bytes, ch.feerate_sat_per_byte);
    let total: Amount = intents.iter().map(|i| native(i, cur)).sum();
    // Headroom so the largest payment still covers its routing fee.
    let wallet = wallet(intents, cur);
    let wallet = wallet + wallet / 100;
    net.fund_l1(&hub, total + open_fee);
    net.add_node(&shop);
    let policy = FeePolicy { base_fee: cfg.routing_base_fee_sat, proportional_ppm: 0 };
    let shop_channel = net.open_channel(&hub, &shop, total, 0, policy)?;
    let mut t = Tally::new(Backend::Channels, int(0), intents);
    let mut channels = Vec::with_capacity(intents.len());
    for i in intents {
        let c = customer(i.id);
        net.fund_l1(&c, wallet + open_fee);
        channels.push(net.open_channel(&c, &hub, wallet, 0, FeePolicy::zero())?);
        t.fees.customer_l1 += open_fee;
    }
    let service = cfg.hub_service_ms / int(1_000);
    let hop = cfg.hop_latency_ms / int(1_000);
    let mut served = 0i128;
    for i in intents {
        let c = customer(i.id);
        let amount = native(i, cur);
        let attempt = (|| {
            let fee = net.find_route(&c, &shop, amount)?.total_fee();
            if fee >= amount {
                return Err(BenchError::Misconfigured(format!("routing fee {fee} exceeds payment {amount}")));
            }
            let invoice = net.create_invoice(&shop, amount - fee)?;
            let route = net.find_route(&c, &shop, amount - fee)?;
            Ok(net.route_payment(&route, &invoice)?)
        })();
        served += 1;
        match attempt {
            Ok(PaymentOutcome::Settled { fees, hops }) => {
                t.fees.merchant_l2 += fees;
                t.complete(i.id, service * int(served) + hop * int(2 * hops as i128));
            }
            Ok(PaymentOutcome::Failed { at_hop }) => t.fail(i.id, format!("htlc failed at hop {at_hop}")),
            Err(e) => t.fail(i.id, e),
        }
    }
    let mut debits = 0;
    for (i, id) in intents.iter().zip(&channels) {
        let c = customer(i.id);
        let held = net.l1().balance(&c) + net.channel_balance(*id, &c)?;
        debits += wallet + open_fee - held;
    }
    let credits = net.channel_balance(shop_channel, &shop)?;
    Ok(t.finish(debits, credits))
}

/// Customers deposit once; the merchant absorbs the child-chain fee by
/// receiving the payment net of it.
fn run_plasma(intents: &[PaymentIntent], cfg: &BenchConfig, seed: u64) -> Result<RunResult, BenchError> {
    let cur = Currency::ETH;
    let p = &cfg.plasma;
    let mut chain = PlasmaChain::new(p.clone(), seed)?;
    let shop = merchant();
    chain.register_user(&shop);
    let wallet = wallet(intents, cur);
    let mut deposits = Vec::with_capacity(intents.len());
    for i in intents {
        let c = customer(i.id);
        chain.fund_l1(&c, wallet + p.deposit_fee());
        deposits.push(chain.deposit(&c, wallet)?);
    }
    chain.produce_and_commit()?;
    for (i, d) in intents.iter().zip(&deposits) {
        chain.acknowledge_deposit(&customer(i.id), *d)?;
    }
    while chain.queue_len() > 0 {
        chain.produce_and_commit()?;
    }
    let mut t = Tally::new(Backend::Plasma, chain.now(), intents);
    t.fees.customer_l1 = intents.len() as Amount * p.deposit_fee();
    let start = chain.height();
    let fee = p.transfer_fee();
    let mut pending: BTreeMap<Hash256, usize> = BTreeMap::new();
    for i in intents {
        let amount = native(i, cur);
        if amount <= fee {
            t.fail(i.id, format!("payment {amount} does not cover the transfer fee"));
            continue;
        }
        match chain.pay(&customer(i.id), &shop, amount - fee, fee) {
            Ok(id) => {
                pending.insert(id, i.id);
            }
            Err(e) => t.fail(i.id, e),
        }
    }
    while chain.queue_len() > 0 {
        chain.produce_and_commit()?;
    }
    for h in start + 1..=chain.height() {
        let block = chain.block(h).expect("produced");
        for tx in &block.txs {
            if let ChildTx::Transfer(ptx) = tx {
                if let Some(intent) = pending.remove(&ptx.id()) {
                    t.fees.merchant_l2 += ptx.fee;
                    t.complete(intent, block.timestamp_s);
                }
            }
        }
    }
    for intent in pending.into_values() {
        t.fail(intent, "never included in a child block");
    }
    let mut debits = 0;
    for i in intents {
        let c = customer(i.id);
        debits += wallet + p.deposit_fee() - chain.l1().balance(&c) - chain.utxos().balance_of(&c);
    }
    let credits = chain.utxos().balance_of(&shop);
    Ok(t.finish(debits, credits))
}

/// Customers deposit once; payments go out in bundles of at most
/// `max_authors` whose fees the merchant pays. A payment is final when the
/// contract accepts its batch.
fn run_rollup(
    backend: Backend,
    intents: &[PaymentIntent],
    cfg: &BenchConfig,
    seed: u64,
) -> Result<RunResult, BenchError> {
    let cur = Currency::ETH;
    let params = if backend == Backend::RollupZk { &cfg.rollup_zk } else { &cfg.rollup_optimistic };
    let mut r = Rollup::new(params.clone(), ChainParams::ethereum_2021(), seed)?;
    let shop = merchant();
    let deposit_fee = params.deposit_fee();
    let wallet = wallet(intents, cur);
    r.fund_l1(&shop, deposit_fee);
    r.register(&shop)?;
    for i in intents {
        let c = customer(i.id);
        r.fund_l1(&c, wallet + deposit_fee);
        r.deposit(&c, wallet)?;
    }
    let interval = params.batch_interval_s;
    r.advance_time(interval)?;
    let mut t = Tally::new(backend, r.now(), intents);
    t.fees.customer_l1 = intents.len() as Amount * deposit_fee;
    t.fees.merchant_l1 = deposit_fee;
    for chunk in intents.chunks(params.max_authors.max(1)) {
        let mut bundle: Vec<&PaymentIntent> = chunk.iter().collect();
        while !bundle.is_empty() {
            let txs: Vec<(AccountId, AccountId, Amount)> =
                bundle.iter().map(|i| (customer(i.id), shop.clone(), native(i, cur))).collect();
            match r.batched_transfer(&shop, &txs) {
                Ok(fee) => {
                    t.fees.merchant_l2 += fee;
                    break;
                }
                Err(RollupError::InvalidTx { index, reason }) => {
                    t.fail(bundle.remove(index).id, reason);
                }
                Err(e) => {
                    let reason = e.to_string();
                    for i in bundle.drain(..) {
                        t.fail(i.id, &reason);
                    }
                }
            }
        }
    }
    let by_customer: BTreeMap<AccountId, usize> = intents.iter().map(|i| (customer(i.id), i.id)).collect();
    for _ in 0..1_000 {
        if r.pool_len() == 0 {
            break;
        }
        r.advance_time(interval)?;
    }
    for b in r.batches().iter().filter(|b| b.status() != BatchStatus::Reverted) {
        for op in &b.batch.ops {
            if let RollupOp::Transfer(tx) = op {
                if tx.to == shop && tx.amount > 0 {
                    if let Some(intent) = by_customer.get(&tx.from) {
                        t.complete(*intent, b.submitted_at);
                    }
                }
            }
        }
    }
    for i in intents {
        let settled = t.done.contains_key(&i.id) || t.failures.iter().any(|f| f.intent == i.id);
        if !settled {
            t.fail(i.id, "never published in a batch");
        }
    }
    let mut debits = 0;
    for i in intents {
        let c = customer(i.id);
        debits += wallet + deposit_fee - r.l1().balance(&c) - r.state().balance(&c);
    }
    let credits = r.state().balance(&shop);
    Ok(t.finish(debits, credits))
}

/// Each payment is an ordinary L1 transaction of average size.
fn run_l1(intents: &[PaymentIntent], cfg: &BenchConfig) -> Result<RunResult, BenchError> {
    let cur = Currency::BTC;
    let params = &cfg.l1_direct;
    let mut l1 = L1Chain::new(params.clone())?;
    let shop = merchant();
    let fee = byte_fee(params.avg_tx_size_bytes, cfg.l1_feerate_sat_per_byte);
    let wallet = wallet(intents, cur);
    for i in intents {
        l1.mint(&customer(i.id), wallet + fee);
    }
    let mut t = Tally::new(Backend::L1Direct, l1.now(), intents);
    let mut sent = Vec::with_capacity(intents.len());
    for i in intents {
        match l1.send(TxKind::Transfer, &customer(i.id), &shop, native(i, cur), params.avg_tx_size_bytes, None, fee) {
            Ok(id) => {
                t.fees.customer_l1 += fee;
                sent.push((i.id, id));
            }
            Err(e) => t.fail(i.id, e),
        }
    }
    while l1.mempool_len() > 0 {
        l1.produce_block();
    }
    for (intent, id) in sent {
        let at = l1.inclusion_time(&id).expect("mempool drained");
        t.complete(intent, at);
    }
    let debits = intents.iter().map(|i| wallet + fee - l1.balance(&customer(i.id))).sum();
    let credits = l1.balance(&shop);
    Ok(t.finish(debits, credits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::l1::tps_capacity;
    use crate::rational::ratio;

    fn small() -> WorkloadSpec {
        WorkloadSpec { total_txs: 30, ..Default::default() }
    }

    #[test]
    fn latency_percentiles_by_rank() {
        let s = LatencyStats::from_samples((1..=20).map(int).collect()).unwrap();
        assert_eq!((s.p50, s.p95, s.max), (int(10), int(19), int(20)));
        assert_eq!(s.mean, ratio(21, 2));
        assert!(LatencyStats::from_samples(Vec::new()).is_none());
    }

    #[test]
    fn every_backend_closes_its_books() {
        for b in Backend::ALL {
            let r = run_benchmark(b, &small(), &BenchConfig::default()).unwrap();
            assert_eq!(r.completed + r.failures.len(), 30, "{b}");
            assert!(r.failures.is_empty(), "{b}: {:?}", r.failures);
            assert!(r.accounting_closes(), "{b}: {r:?}");
        }
    }

    #[test]
    fn channel_timing_is_serial_service_plus_round_trips() {
        let r = run_benchmark(Backend::Channels, &small(), &BenchConfig::default()).unwrap();
        // 30 payments at 5 ms each, then two hops out and back at 50 ms.
        assert_eq!(r.elapsed_s, ratio(30 * 5 + 200, 1_000));
        assert_eq!(r.fee_totals.merchant_l2, 30);
    }

    #[test]
    fn l1_direct_respects_capacity() {
        let cfg = BenchConfig::default();
        let r = run_benchmark(Backend::L1Direct, &small(), &cfg).unwrap();
        assert!(r.achieved_tps <= tps_capacity(&cfg.l1_direct).unwrap().tps);
        let big = WorkloadSpec { total_txs: 6_000, ..Default::default() };
        let r = run_benchmark(Backend::L1Direct, &big, &cfg).unwrap();
        assert!(r.achieved_tps <= tps_capacity(&cfg.l1_direct).unwrap().tps);
        assert_eq!(r.elapsed_s, int(1_800));
    }

    #[test]
    fn empty_workload_has_zero_tps() {
        let spec = WorkloadSpec { total_txs: 0, ..Default::default() };
        for b in Backend::ALL {
            let r = run_benchmark(b, &spec, &BenchConfig::default()).unwrap();
            assert_eq!(r.achieved_tps, int(0));
            assert!(r.latency_ms.is_none());
        }
    }

    #[test]
    fn failures_are_not_completions() {
        let spec = WorkloadSpec { payment_amount_range: [1, 60], total_txs: 20, ..Default::default() };
        let r = run_benchmark(Backend::Plasma, &spec, &BenchConfig::default()).unwrap();
        assert_eq!(r.completed, 0);
        assert_eq!(r.failures.len(), 20);
        for f in &r.failures {
            assert!(!r.completed_intents.contains(&f.intent));
        }
        assert!(r.accounting_closes());
    }
}
