//! Retail payment workload and a benchmark harness over every engine.
//!
//! A chain of 400 stores with 10 registers each, one payment per register
//! every two minutes, needs about 33 TPS of dedicated capacity. The runner
//! submits a burst of payments through each backend's native path and
//! measures how quickly they reach finality on that backend.

mod report;
mod runner;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::channels::{ChannelConfig, ChannelError};
use crate::l1::{byte_fee, ChainParams, L1Error};
use crate::plasma::{PlasmaConfig, PlasmaError};
use crate::rational::{self, int, ratio, Rational};
use crate::rng;
use crate::rollup::{encoded_len, RollupError, RollupOp, RollupParams, Transfer};
use crate::types::{AccountId, Amount};

pub use report::{emit_report, ComparisonReport, ReportRow, COLUMNS};
pub use runner::{run_all, run_benchmark, Failure, FeeTotals, LatencyStats, RunResult};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid workload: {0}")]
    InvalidSpec(String),
    #[error("backend misconfigured: {0}")]
    Misconfigured(String),
    #[error("no results to report")]
    EmptyResults,
    #[error(transparent)]
    L1(#[from] L1Error),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Plasma(#[from] PlasmaError),
    #[error(transparent)]
    Rollup(#[from] RollupError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Channels,
    Plasma,
    RollupZk,
    RollupOptimistic,
    L1Direct,
}

impl Backend {
    pub const ALL: [Backend; 5] =
        [Backend::Channels, Backend::Plasma, Backend::RollupZk, Backend::RollupOptimistic, Backend::L1Direct];

    pub fn id(self) -> &'static str {
        match self {
            Backend::Channels => "channels",
            Backend::Plasma => "plasma",
            Backend::RollupZk => "rollup-zk",
            Backend::RollupOptimistic => "rollup-optimistic",
            Backend::L1Direct => "l1-direct",
        }
    }

    pub fn is_l2(self) -> bool {
        self != Backend::L1Direct
    }

    pub fn currency(self) -> Currency {
        match self {
            Backend::Channels | Backend::L1Direct => Currency::BTC,
            _ => Currency::ETH,
        }
    }

    /// Static qualitative ratings: scalability, security, decentralization,
    /// privacy, fees and micropayments.
    pub fn descriptor(self) -> [&'static str; 5] {
        match self {
            Backend::Channels => [
                "high; bounded by route liquidity",
                "hashlocks, timelocks, penalty transactions",
                "peer-to-peer; hub-centric in practice",
                "high; onion-routed hops",
                "L1 open and close; small per-hop fee",
            ],
            Backend::Plasma => [
                "high; operator block cadence",
                "root commitments, exit game, fraud proofs",
                "operator-run child chain",
                "operator sees all child txs",
                "L1 deposit and exit; small child-chain fee",
            ],
            Backend::RollupZk => [
                "high; calldata-bound, proof gas per batch",
                "validity attestations",
                "all data on L1; few contracts",
                "low; transfers published on L1",
                "L1 deposit; shared batch cost",
            ],
            Backend::RollupOptimistic => [
                "medium; larger calldata per tx",
                "fraud proofs within a challenge window",
                "all data on L1; few contracts",
                "low; transfers published on L1",
                "L1 deposit; shared batch cost; slow exit",
            ],
            Backend::L1Direct => {
                ["base chain capacity", "L1 consensus", "full", "public ledger", "full L1 fee per payment"]
            }
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Backend {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Backend::ALL
            .into_iter()
            .find(|b| b.id() == s)
            .ok_or_else(|| BenchError::Misconfigured(format!("unknown backend {s:?}")))
    }
}

/// Native unit of a backend. Payment amounts in a [`WorkloadSpec`] are in
/// millionths of the coin and scaled by `base_per_micro`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Currency {
    pub symbol: &'static str,
    pub decimals: u32,
    pub base_per_micro: Amount,
}

impl Currency {
    pub const BTC: Currency = Currency { symbol: "BTC", decimals: 8, base_per_micro: 100 };
    pub const ETH: Currency = Currency { symbol: "ETH", decimals: 18, base_per_micro: 1_000_000_000_000 };

    pub fn format(&self, amount: Amount) -> String {
        crate::types::format_units(amount, self.decimals)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub stores: u32,
    pub registers_per_store: u32,
    #[serde(with = "rational::serde_exact")]
    pub mean_interpayment_s: Rational,
    pub total_txs: usize,
    /// Inclusive bounds, in millionths of the backend's coin.
    pub payment_amount_range: [Amount; 2],
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            stores: 400,
            registers_per_store: 10,
            mean_interpayment_s: int(120),
            total_txs: 200,
            payment_amount_range: [1_000, 20_000],
            seed: 2021,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidSpec(m.to_string()));
        if self.stores == 0 || self.registers_per_store == 0 {
            return bad("stores and registers_per_store must be positive");
        }
        if !rational::is_positive(&self.mean_interpayment_s) {
            return bad("mean_interpayment_s must be positive");
        }
        let [lo, hi] = self.payment_amount_range;
        if lo == 0 || lo > hi {
            return bad("payment_amount_range must satisfy 0 < min <= max");
        }
        Ok(())
    }

    pub fn registers(&self) -> u64 {
        self.stores as u64 * self.registers_per_store as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RequiredThroughput {
    #[serde(with = "rational::serde_exact")]
    pub per_store_tps: Rational,
    #[serde(with = "rational::serde_exact")]
    pub total_tps: Rational,
}

pub fn required_throughput(spec: &WorkloadSpec) -> Result<RequiredThroughput, BenchError> {
    spec.validate()?;
    let per_store_tps = int(spec.registers_per_store as i128) / spec.mean_interpayment_s;
    Ok(RequiredThroughput { per_store_tps, total_tps: per_store_tps * int(spec.stores as i128) })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PaymentIntent {
    pub id: usize,
    /// Arrival time, microsecond resolution.
    #[serde(with = "rational::serde_exact")]
    pub at_s: Rational,
    pub store: u32,
    pub register: u32,
    /// Micro-units; see [`Currency`].
    pub amount: Amount,
}

/// Poisson arrivals at every register, merged in time order and cut to
/// `total_txs`. Each intent is paid by a distinct customer.
pub fn generate_workload(spec: &WorkloadSpec) -> Result<Vec<PaymentIntent>, BenchError> {
    spec.validate()?;
    if spec.total_txs == 0 {
        return Ok(Vec::new());
    }
    let mean = rational::to_f64(&spec.mean_interpayment_s);
    let exp = Exp::new(1.0 / mean).map_err(|e| BenchError::InvalidSpec(e.to_string()))?;
    let registers = spec.registers();
    // Expected arrivals by `horizon` are 1.5x what is needed; widen until
    // enough arrive.
    let mut horizon = 1.5 * spec.total_txs as f64 * mean / registers as f64 + 10.0 * mean;
    loop {
        let mut r = rng::seeded(spec.seed);
        let mut arrivals: Vec<(u64, u32, u32)> = Vec::new();
        for store in 0..spec.stores {
            for register in 0..spec.registers_per_store {
                let mut t = 0.0;
                loop {
                    t += exp.sample(&mut r);
                    if t > horizon {
                        break;
                    }
                    arrivals.push(((t * 1e6).round() as u64, store, register));
                }
            }
        }
        if arrivals.len() < spec.total_txs {
            horizon *= 2.0;
            continue;
        }
        arrivals.sort();
        arrivals.truncate(spec.total_txs);
        let [lo, hi] = spec.payment_amount_range;
        let intents = arrivals
            .into_iter()
            .enumerate()
            .map(|(id, (us, store, register))| PaymentIntent {
                id,
                at_s: ratio(us as i128, 1_000_000),
                store,
                register,
                amount: r.random_range(lo..=hi),
            })
            .collect();
        return Ok(intents);
    }
}

/// Backend settings for a benchmark run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub channels: ChannelConfig,
    pub channel_chain: ChainParams,
    /// Serial processing time of the routing node per payment.
    #[serde(with = "rational::serde_exact")]
    pub hub_service_ms: Rational,
    /// One-way message latency per hop.
    #[serde(with = "rational::serde_exact")]
    pub hop_latency_ms: Rational,
    pub routing_base_fee_sat: Amount,
    pub plasma: PlasmaConfig,
    pub rollup_zk: RollupParams,
    pub rollup_optimistic: RollupParams,
    pub l1_direct: ChainParams,
    pub l1_feerate_sat_per_byte: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            channels: ChannelConfig::default(),
            channel_chain: ChainParams::bitcoin_2021(),
            hub_service_ms: int(5),
            hop_latency_ms: int(50),
            routing_base_fee_sat: 1,
            plasma: PlasmaConfig::default(),
            rollup_zk: RollupParams { batch_interval_s: int(3), ..RollupParams::zk() },
            rollup_optimistic: RollupParams { batch_interval_s: int(3), ..RollupParams::optimistic() },
            l1_direct: ChainParams::bitcoin_2021(),
            l1_feerate_sat_per_byte: 100,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        self.channel_chain.validate()?;
        self.l1_direct.validate()?;
        self.plasma.validate()?;
        self.rollup_zk.validate()?;
        self.rollup_optimistic.validate()?;
        if self.rollup_zk.mode != crate::rollup::RollupMode::Zk
            || self.rollup_optimistic.mode != crate::rollup::RollupMode::Optimistic
        {
            return Err(BenchError::Misconfigured("rollup sections have the wrong mode".into()));
        }
        if self.hub_service_ms < int(0) || self.hop_latency_ms < int(0) {
            return Err(BenchError::Misconfigured("latencies must be non-negative".into()));
        }
        Ok(())
    }
}

/// Itemized cost of using a backend, in its base unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeeBurden {
    pub backend: Backend,
    pub currency: Currency,
    /// Paid once per customer: channel open and close, or L1 deposit and
    /// withdrawal.
    pub customer_one_time: Amount,
    pub customer_per_tx: Amount,
    pub merchant_per_tx: Amount,
    /// L1 batch cost per transfer for a batch of `total_txs` transfers;
    /// rollups only.
    pub onchain_share_per_tx: Option<Amount>,
}

pub fn fee_burden(backend: Backend, spec: &WorkloadSpec, config: &BenchConfig) -> Result<FeeBurden, BenchError> {
    spec.validate()?;
    let ch = &config.channels;
    let (customer_one_time, customer_per_tx, merchant_per_tx, onchain_share_per_tx) = match backend {
        Backend::Channels => (
            byte_fee(ch.open_tx_bytes, ch.feerate_sat_per_byte) + byte_fee(ch.close_tx_bytes, ch.feerate_sat_per_byte),
            0,
            config.routing_base_fee_sat,
            None,
        ),
        Backend::Plasma => {
            let p = &config.plasma;
            (p.deposit_fee() + p.withdraw_fee(), 0, p.transfer_fee(), None)
        }
        Backend::RollupZk | Backend::RollupOptimistic => {
            let p = if backend == Backend::RollupZk { &config.rollup_zk } else { &config.rollup_optimistic };
            let n = spec.total_txs.max(1);
            let ops: Vec<RollupOp> = (0..n)
                .map(|i| {
                    RollupOp::Transfer(Transfer {
                        from: AccountId::new(format!("c{i}")),
                        to: AccountId::from("merchant"),
                        amount: 1,
                        fee: 0,
                        nonce: 0,
                    })
                })
                .collect();
            let l1 = ChainParams::ethereum_2021();
            let gas = p.proof_gas + encoded_len(p, &ops) * l1.gas_per_byte;
            let cost = crate::l1::gas_fee(gas, p.l1_gas_price);
            let share = crate::rollup::batch_fee_split(cost, n)?.per_tx;
            (p.deposit_fee(), 0, p.transfer_fee, Some(share))
        }
        Backend::L1Direct => (0, byte_fee(config.l1_direct.avg_tx_size_bytes, config.l1_feerate_sat_per_byte), 0, None),
    };
    Ok(FeeBurden {
        backend,
        currency: backend.currency(),
        customer_one_time,
        customer_per_tx,
        merchant_per_tx,
        onchain_share_per_tx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::to_f64;

    #[test]
    fn default_spec_needs_33_tps() {
        let r = required_throughput(&WorkloadSpec::default()).unwrap();
        assert_eq!(r.per_store_tps, ratio(1, 12));
        assert_eq!(r.total_tps, ratio(100, 3));
        assert_eq!(rational::format_sig(&r.per_store_tps, 2), "0.083");
    }

    #[test]
    fn one_register_one_second() {
        let spec =
            WorkloadSpec { stores: 1, registers_per_store: 1, mean_interpayment_s: int(1), ..Default::default() };
        assert_eq!(required_throughput(&spec).unwrap().total_tps, int(1));
    }

    #[test]
    fn total_scales_with_stores() {
        let a = WorkloadSpec::default();
        let b = WorkloadSpec { stores: 800, ..a.clone() };
        assert_eq!(required_throughput(&b).unwrap().total_tps, required_throughput(&a).unwrap().total_tps * int(2));
    }

    #[test]
    fn invalid_specs() {
        let zero = WorkloadSpec { stores: 0, ..Default::default() };
        assert!(required_throughput(&zero).is_err());
        let inverted = WorkloadSpec { payment_amount_range: [5, 4], ..Default::default() };
        assert!(generate_workload(&inverted).is_err());
    }

    #[test]
    fn workload_size_and_determinism() {
        let spec = WorkloadSpec::default();
        let a = generate_workload(&spec).unwrap();
        assert_eq!(a.len(), 200);
        let b = generate_workload(&spec).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        assert!(a.windows(2).all(|w| w[0].at_s <= w[1].at_s));
        assert!(a.iter().all(|i| (1_000..=20_000).contains(&i.amount)));
        let other = generate_workload(&WorkloadSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn inter_arrival_mean_within_ten_percent() {
        let spec = WorkloadSpec { total_txs: 10_000, ..Default::default() };
        let w = generate_workload(&spec).unwrap();
        let span = to_f64(&w.last().unwrap().at_s) - to_f64(&w[0].at_s);
        let merged = span / (w.len() - 1) as f64;
        let expected = 120.0 / 4_000.0;
        assert!((merged - expected).abs() / expected < 0.1, "{merged}");
        // Per-register gaps, pooled.
        let one = WorkloadSpec { stores: 1, registers_per_store: 2, total_txs: 10_000, ..Default::default() };
        let w = generate_workload(&one).unwrap();
        let mut gaps = Vec::new();
        for reg in 0..2 {
            let times: Vec<f64> = w.iter().filter(|i| i.register == reg).map(|i| to_f64(&i.at_s)).collect();
            gaps.extend(times.windows(2).map(|p| p[1] - p[0]));
        }
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!((mean - 120.0).abs() / 120.0 < 0.1, "{mean}");
    }

    #[test]
    fn empty_workload() {
        let spec = WorkloadSpec { total_txs: 0, ..Default::default() };
        assert!(generate_workload(&spec).unwrap().is_empty());
    }

    #[test]
    fn fee_burden_presets() {
        let spec = WorkloadSpec::default();
        let cfg = BenchConfig::default();
        let ch = fee_burden(Backend::Channels, &spec, &cfg).unwrap();
        assert_eq!(ch.customer_one_time, 23_500 + 30_000);
        assert_eq!(ch.merchant_per_tx, 1);
        let pl = fee_burden(Backend::Plasma, &spec, &cfg).unwrap();
        assert_eq!(pl.currency.format(pl.merchant_per_tx), "0.000063");
        assert_eq!(pl.currency.format(pl.customer_one_time), "0.01288");
        let zk = fee_burden(Backend::RollupZk, &spec, &cfg).unwrap();
        assert_eq!(zk.currency.format(zk.customer_one_time), "0.0016875");
        let share = zk.onchain_share_per_tx.unwrap();
        let op = fee_burden(Backend::RollupOptimistic, &spec, &cfg).unwrap().onchain_share_per_tx.unwrap();
        // Tiny batches amortize the proof badly; larger calldata costs more.
        assert!(share > 0 && op > 0);
        let l1 = fee_burden(Backend::L1Direct, &spec, &cfg).unwrap();
        assert_eq!(l1.customer_per_tx, 38_000);
    }

    #[test]
    fn backend_ids_round_trip() {
        for b in Backend::ALL {
            assert_eq!(b.id().parse::<Backend>().unwrap(), b);
            assert_eq!(serde_json::to_value(b).unwrap(), b.id());
        }
        assert!("lightning".parse::<Backend>().is_err());
    }
}
