use clap::{Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use l2sim::bench::{fee_burden, Backend, BenchConfig, Currency, WorkloadSpec};
use l2sim::l1::{byte_fee, tps_capacity, ChainParams};
use l2sim::plasma::plasma_throughput_estimate;
use l2sim::rational::{self, ExactValue, Rational};
use l2sim::rollup::{rollup_throughput, RollupMode, RollupParams};
use l2sim::Amount;

use crate::CliError;

#[derive(Subcommand)]
pub enum CalcKind {
    /// Transactions per block and per second of a base chain preset.
    L1Tps {
        #[arg(long, default_value = "bitcoin-2021")]
        preset: String,
    },
    /// Child-chain throughput when each child tx costs an average L1 tx.
    PlasmaTps {
        #[arg(long, default_value_t = 20_000_000)]
        l2_gas_limit: u64,
        /// Defaults to the preset's block gas limit.
        #[arg(long)]
        l1_gas_limit: Option<u64>,
        #[arg(long, default_value_t = 1_500_000)]
        l1_txs_per_day: u64,
        #[arg(long, default_value_t = 6_500)]
        l1_blocks_per_day: u64,
        #[arg(long, default_value = "2.1")]
        l2_block_time: String,
        /// Base chain to compare against.
        #[arg(long, default_value = "ethereum-2021")]
        preset: String,
    },
    /// Rollup throughput when a whole L1 block is batch calldata.
    RollupTps {
        #[arg(long)]
        mode: Mode,
        #[arg(long, default_value = "ethereum-2021")]
        preset: String,
        #[arg(long)]
        tx_size: Option<u64>,
        #[arg(long)]
        proof_gas: Option<u64>,
    },
    /// Itemized fees of one backend.
    Fee {
        #[arg(long, value_parser = parse_backend)]
        backend: Backend,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Mode {
    Zk,
    Optimistic,
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    s.parse().map_err(|e: l2sim::bench::BenchError| e.to_string())
}

fn preset(name: &str) -> Result<ChainParams, CliError> {
    ChainParams::preset(name).map_err(|e| CliError::Usage(e.to_string()))
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

/// Named results, in print order.
struct Output {
    kind: &'static str,
    fields: Vec<(String, Value)>,
    lines: Vec<String>,
}

impl Output {
    fn new(kind: &'static str) -> Self {
        Output { kind, fields: Vec::new(), lines: Vec::new() }
    }

    fn text(&mut self, key: &str, value: &str) {
        self.fields.push((key.to_string(), json!(value)));
        self.lines.push(format!("{key}: {value}"));
    }

    fn exact(&mut self, key: &str, value: &Rational) {
        self.fields.push((key.to_string(), serde_json::to_value(ExactValue::from(value)).expect("serializable")));
        self.lines.push(format!("{key}: {}", rational::format_sig(value, 6)));
    }

    fn amount(&mut self, key: &str, value: Amount, currency: Currency) {
        let unit = if currency == Currency::BTC { "sat" } else { "wei" };
        let formatted = currency.format(value);
        self.fields.push((
            key.to_string(),
            json!({ "base_units": value.to_string(), "unit": unit, "formatted": formatted, "currency": currency.symbol }),
        ));
        self.lines.push(format!("{key}: {value} {unit} ({formatted} {})", currency.symbol));
    }

    fn print(self, as_json: bool) {
        if as_json {
            let mut m = Map::new();
            m.insert("kind".into(), json!(self.kind));
            m.extend(self.fields);
            println!("{}", Value::Object(m));
        } else {
            for l in self.lines {
                println!("{l}");
            }
        }
    }
}

pub fn run(kind: CalcKind, as_json: bool) -> Result<(), CliError> {
    let out = match kind {
        CalcKind::L1Tps { preset: name } => {
            let params = preset(&name)?;
            let cap = tps_capacity(&params).map_err(failed)?;
            let mut o = Output::new("l1-tps");
            o.text("preset", &name);
            o.exact("tx_per_block", &cap.tpb);
            o.exact("tps", &cap.tps);
            o
        }
        CalcKind::PlasmaTps {
            l2_gas_limit,
            l1_gas_limit,
            l1_txs_per_day,
            l1_blocks_per_day,
            l2_block_time,
            preset: name,
        } => {
            let params = preset(&name)?;
            let block_time = rational::parse(&l2_block_time).map_err(|e| CliError::Usage(e.to_string()))?;
            let l1_gas = l1_gas_limit.unwrap_or(params.gas_limit_per_block);
            let t = plasma_throughput_estimate(l2_gas_limit, l1_gas, l1_txs_per_day, l1_blocks_per_day, block_time)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let l1 = tps_capacity(&params).map_err(failed)?;
            let mut o = Output::new("plasma-tps");
            o.text("preset", &name);
            o.exact("avg_tx_per_block", &t.avg_tx_per_block);
            o.exact("avg_gas_per_tx", &t.avg_gas_per_tx);
            o.exact("tps", &t.tps);
            o.exact("l1_tps", &l1.tps);
            o.exact("improvement", &(t.tps / l1.tps));
            o
        }
        CalcKind::RollupTps { mode, preset: name, tx_size, proof_gas } => {
            let l1 = preset(&name)?;
            let mut p = RollupParams::preset(match mode {
                Mode::Zk => RollupMode::Zk,
                Mode::Optimistic => RollupMode::Optimistic,
            });
            p.tx_size_bytes = tx_size.unwrap_or(p.tx_size_bytes);
            p.proof_gas = proof_gas.unwrap_or(p.proof_gas);
            let t = rollup_throughput(&l1, &p).map_err(|e| CliError::Usage(e.to_string()))?;
            let mut o = Output::new("rollup-tps");
            o.text("preset", &name);
            o.text(
                "mode",
                match p.mode {
                    RollupMode::Zk => "zk",
                    RollupMode::Optimistic => "optimistic",
                },
            );
            o.exact("block_bytes", &t.block_bytes);
            o.exact("tx_per_block", &t.tx_per_block);
            o.exact("tps", &t.tps);
            o
        }
        CalcKind::Fee { backend } => fees(backend)?,
    };
    out.print(as_json);
    Ok(())
}

fn fees(backend: Backend) -> Result<Output, CliError> {
    let cfg = BenchConfig::default();
    let burden = fee_burden(backend, &WorkloadSpec::default(), &cfg).map_err(failed)?;
    let cur = backend.currency();
    let mut o = Output::new("fee");
    o.text("backend", backend.id());
    match backend {
        Backend::Channels => {
            let ch = &cfg.channels;
            o.amount("channel_open", byte_fee(ch.open_tx_bytes, ch.feerate_sat_per_byte), cur);
            o.amount("channel_close", byte_fee(ch.close_tx_bytes, ch.feerate_sat_per_byte), cur);
            o.amount("routing_fee_per_hop", cfg.routing_base_fee_sat, cur);
        }
        Backend::Plasma => {
            o.amount("transfer", cfg.plasma.transfer_fee(), cur);
            o.amount("deposit", cfg.plasma.deposit_fee(), cur);
            o.amount("withdraw", cfg.plasma.withdraw_fee(), cur);
        }
        Backend::RollupZk | Backend::RollupOptimistic => {
            let p = if backend == Backend::RollupZk { &cfg.rollup_zk } else { &cfg.rollup_optimistic };
            o.amount("deposit", p.deposit_fee(), cur);
            o.amount("transfer", p.transfer_fee, cur);
            o.amount("withdrawal", p.withdrawal_fee, cur);
        }
        Backend::L1Direct => {}
    }
    o.amount("customer_one_time", burden.customer_one_time, cur);
    o.amount("customer_per_tx", burden.customer_per_tx, cur);
    o.amount("merchant_per_tx", burden.merchant_per_tx, cur);
    if let Some(share) = burden.onchain_share_per_tx {
        o.amount("onchain_share_per_tx", share, cur);
    }
    Ok(o)
}
