//! Scenario files. Every section rejects unknown keys, and cross
//! references are checked before a simulation starts.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use l2sim::bench::{Backend, BenchConfig, WorkloadSpec};
use l2sim::channels::{ChannelConfig, FeePolicy};
use l2sim::l1::{ChainParams, PRESET_NAMES};
use l2sim::plasma::{OperatorMode, PlasmaConfig};
use l2sim::rational::{self, Rational};
use l2sim::rollup::{RollupMode, RollupParams};
use l2sim::{AccountId, Amount, Hash256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Channels,
    Plasma,
    Rollup,
    Bench,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub chain: Option<ChainSpec>,
    pub backend: Kind,
    #[serde(default)]
    pub channels: Option<ChannelsSection>,
    #[serde(default)]
    pub plasma: Option<PlasmaSection>,
    #[serde(default)]
    pub rollup: Option<RollupSection>,
    #[serde(default)]
    pub bench: Option<BenchSection>,
}

/// A preset name or a full parameter set.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ChainSpec {
    Preset(String),
    Inline(ChainParams),
}

impl ChainSpec {
    pub fn resolve(&self) -> Result<ChainParams, CliError> {
        let params = match self {
            ChainSpec::Preset(name) => ChainParams::preset(name).map_err(|_| {
                CliError::Usage(format!("unknown chain preset {name:?}; known: {}", PRESET_NAMES.join(", ")))
            })?,
            ChainSpec::Inline(p) => p.clone(),
        };
        params.validate().map_err(|e| CliError::Usage(format!("chain: {e}")))?;
        Ok(params)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Funded {
    pub id: AccountId,
    #[serde(default, deserialize_with = "amount::de")]
    pub l1_funds: Amount,
    /// Deposited into the L2 during setup.
    #[serde(default, deserialize_with = "amount::de")]
    pub deposit: Amount,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelsSection {
    #[serde(default)]
    pub config: ChannelConfig,
    pub nodes: Vec<Funded>,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    #[serde(default)]
    pub script: Vec<ChannelStep>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub a: AccountId,
    pub b: AccountId,
    #[serde(deserialize_with = "amount::de")]
    pub fund_a: Amount,
    #[serde(deserialize_with = "amount::de")]
    pub fund_b: Amount,
    #[serde(default)]
    pub fee: FeePolicy,
}

fn one() -> usize {
    1
}

/// Channels are referred to by their position in `channels`.
#[derive(Debug, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelStep {
    Pay {
        from: AccountId,
        to: AccountId,
        #[serde(deserialize_with = "amount::de")]
        amount: Amount,
        #[serde(default = "one")]
        max_attempts: usize,
    },
    DirectPay {
        channel: usize,
        payer: AccountId,
        #[serde(deserialize_with = "amount::de")]
        amount: Amount,
    },
    SetOnline {
        node: AccountId,
        online: bool,
    },
    RegisterMonitor {
        channel: usize,
        party: AccountId,
        operator: AccountId,
        #[serde(default, deserialize_with = "amount::de")]
        reward: Amount,
    },
    /// Broadcasts an old or current commitment; `state` defaults to the
    /// latest.
    CloseUnilateral {
        channel: usize,
        broadcaster: AccountId,
        #[serde(default)]
        state: Option<u64>,
    },
    CloseCooperative {
        channel: usize,
    },
    Penalize {
        channel: usize,
    },
    AdvanceBlocks {
        n: u64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlasmaSection {
    #[serde(default)]
    pub config: PlasmaConfig,
    pub users: Vec<Funded>,
    #[serde(default)]
    pub lps: Vec<LpSpec>,
    #[serde(default)]
    pub script: Vec<PlasmaStep>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LpSpec {
    pub id: AccountId,
    #[serde(deserialize_with = "amount::de")]
    pub l1_funds: Amount,
    #[serde(default = "yes")]
    pub validates_chain: bool,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlasmaStep {
    /// `fee` defaults to the configured transfer fee.
    Pay {
        from: AccountId,
        to: AccountId,
        #[serde(deserialize_with = "amount::de")]
        amount: Amount,
        #[serde(default, deserialize_with = "amount::de_opt")]
        fee: Option<Amount>,
    },
    ProduceBlocks {
        #[serde(default = "one")]
        count: usize,
    },
    SetMode {
        mode: OperatorMode,
    },
    AdvanceTime {
        #[serde(with = "rational::serde_exact")]
        seconds: Rational,
    },
    /// Starts an exit for every output the user holds.
    StartExits {
        user: AccountId,
    },
    ChallengeAll {
        challenger: AccountId,
    },
    FinalizeDue,
    MassExit {
        operator: AccountId,
        participants: Vec<AccountId>,
        #[serde(default)]
        snapshot: Option<u64>,
    },
    /// Acts on the most recent mass exit.
    ChallengeMassExit {
        challenger: AccountId,
    },
    FinalizeMassExit,
    /// Swaps the user's largest output for L1 funds from an LP.
    FastWithdrawal {
        user: AccountId,
        lp: AccountId,
        #[serde(deserialize_with = "amount::de")]
        fee: Amount,
        #[serde(default = "yes")]
        lp_pays: bool,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollupSection {
    pub mode: RollupMode,
    /// Replaces the mode's preset entirely.
    #[serde(default)]
    pub params: Option<RollupParams>,
    /// Extra publishers, staked during setup with the configured bond.
    #[serde(default)]
    pub publishers: Vec<Funded>,
    pub users: Vec<Funded>,
    #[serde(default = "yes")]
    pub auto_publish: bool,
    #[serde(default)]
    pub script: Vec<RollupStep>,
}

impl RollupSection {
    pub fn params(&self) -> RollupParams {
        self.params.clone().unwrap_or_else(|| RollupParams::preset(self.mode))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSpec {
    pub from: AccountId,
    pub to: AccountId,
    #[serde(deserialize_with = "amount::de")]
    pub amount: Amount,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum RollupStep {
    Deposit {
        user: AccountId,
        #[serde(deserialize_with = "amount::de")]
        amount: Amount,
    },
    Transfer {
        from: AccountId,
        to: AccountId,
        #[serde(deserialize_with = "amount::de")]
        amount: Amount,
    },
    BatchedTransfer {
        fee_payer: AccountId,
        transfers: Vec<TransferSpec>,
    },
    Withdraw {
        user: AccountId,
        #[serde(deserialize_with = "amount::de")]
        amount: Amount,
    },
    /// The operator's next batch mints `mint` to itself.
    Fraud {
        #[serde(deserialize_with = "amount::de")]
        mint: Amount,
    },
    /// Publishes now, outside the cadence. `publisher` defaults to the
    /// operator.
    Publish {
        #[serde(default)]
        publisher: Option<AccountId>,
    },
    Stake {
        publisher: AccountId,
    },
    AdvanceTime {
        #[serde(with = "rational::serde_exact")]
        seconds: Rational,
    },
    /// Challenges every pending batch whose root is wrong.
    Watch {
        challenger: AccountId,
    },
    /// Claims `root` (hex, defaults to the replayed root) for `batch`.
    Challenge {
        challenger: AccountId,
        batch: u64,
        #[serde(default)]
        root: Option<String>,
    },
    /// Waits out the challenge window of everything published.
    Settle,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub workload: WorkloadSpec,
    pub config: BenchConfig,
    pub backends: Option<Vec<Backend>>,
}

/// Amounts are integers in base units, or strings such as `"1.5 eth"`,
/// `"20 gwei"` or `"0.001 btc"`.
pub mod amount {
    use serde::{Deserialize, Deserializer};

    use l2sim::rational;
    use l2sim::Amount;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(u64),
        Text(String),
    }

    const UNITS: [(&str, u32); 6] = [("wei", 0), ("gwei", 9), ("eth", 18), ("sat", 0), ("btc", 8), ("", 0)];

    pub fn parse(s: &str) -> Result<Amount, String> {
        let s = s.trim();
        let (number, unit) = s.split_once(' ').unwrap_or((s, ""));
        let unit = unit.trim().to_ascii_lowercase();
        let (_, decimals) =
            UNITS.iter().find(|(u, _)| *u == unit).ok_or_else(|| format!("unknown unit {unit:?} in {s:?}"))?;
        let value = rational::parse(number).map_err(|e| format!("{s:?}: {e}"))?;
        let scaled = value * rational::int(10i128.pow(*decimals));
        if !scaled.is_integer() || scaled < rational::int(0) {
            return Err(format!("{s:?} is not a whole number of base units"));
        }
        Ok(scaled.to_integer() as Amount)
    }

    fn from_raw<E: serde::de::Error>(raw: Raw) -> Result<Amount, E> {
        match raw {
            Raw::Int(n) => Ok(n as Amount),
            Raw::Text(t) => parse(&t).map_err(E::custom),
        }
    }

    pub fn de<'de, D: Deserializer<'de>>(d: D) -> Result<Amount, D::Error> {
        from_raw(Raw::deserialize(d)?)
    }

    pub fn de_opt<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Amount>, D::Error> {
        Option::<Raw>::deserialize(d)?.map(from_raw).transpose()
    }
}

pub fn load(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let s: Scenario = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    s.validate()?;
    Ok(s)
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Usage(format!("scenario: {}", msg.into()))
}

fn known(set: &BTreeSet<&AccountId>, who: &AccountId, ctx: &str) -> Result<(), CliError> {
    if set.contains(who) {
        Ok(())
    } else {
        Err(schema(format!("{ctx}: unknown account {who}")))
    }
}

fn positive(r: &Rational, ctx: &str) -> Result<(), CliError> {
    if rational::is_positive(r) {
        Ok(())
    } else {
        Err(schema(format!("{ctx}: must be positive")))
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(c) = &self.chain {
            c.resolve()?;
        }
        let present = [
            (Kind::Channels, self.channels.is_some()),
            (Kind::Plasma, self.plasma.is_some()),
            (Kind::Rollup, self.rollup.is_some()),
            (Kind::Bench, self.bench.is_some()),
        ];
        for (kind, is_set) in present {
            if is_set && kind != self.backend {
                return Err(schema(format!("section {kind:?} given but backend is {:?}", self.backend)));
            }
        }
        match self.backend {
            Kind::Channels => self.channels.as_ref().ok_or_else(|| schema("missing channels section"))?.validate(),
            Kind::Plasma => self.plasma.as_ref().ok_or_else(|| schema("missing plasma section"))?.validate(),
            Kind::Rollup => self.rollup.as_ref().ok_or_else(|| schema("missing rollup section"))?.validate(),
            Kind::Bench => {
                if self.chain.is_some() {
                    return Err(schema("bench chains are set in bench.config"));
                }
                let b = self.bench.as_ref().ok_or_else(|| schema("missing bench section"))?;
                b.workload.validate().map_err(|e| schema(e.to_string()))?;
                b.config.validate().map_err(|e| schema(e.to_string()))?;
                if b.backends.as_ref().is_some_and(|v| v.is_empty()) {
                    return Err(schema("bench.backends is empty"));
                }
                Ok(())
            }
        }
    }

    pub fn chain_or(&self, default: ChainParams) -> Result<ChainParams, CliError> {
        self.chain.as_ref().map_or(Ok(default), ChainSpec::resolve)
    }
}

impl ChannelsSection {
    fn validate(&self) -> Result<(), CliError> {
        let nodes: BTreeSet<&AccountId> = self.nodes.iter().map(|n| &n.id).collect();
        if nodes.len() != self.nodes.len() {
            return Err(schema("duplicate node id"));
        }
        if self.nodes.iter().any(|n| n.deposit != 0) {
            return Err(schema("channel nodes take l1_funds only"));
        }
        for (i, c) in self.channels.iter().enumerate() {
            let ctx = format!("channels[{i}]");
            known(&nodes, &c.a, &ctx)?;
            known(&nodes, &c.b, &ctx)?;
        }
        let n = self.channels.len();
        let channel = |idx: usize, ctx: &str| {
            if idx < n {
                Ok(idx)
            } else {
                Err(schema(format!("{ctx}: no channel {idx}")))
            }
        };
        let party = |idx: usize, who: &AccountId, ctx: &str| {
            let c = &self.channels[idx];
            if &c.a == who || &c.b == who {
                Ok(())
            } else {
                Err(schema(format!("{ctx}: {who} is not a party of channel {idx}")))
            }
        };
        for (i, step) in self.script.iter().enumerate() {
            let ctx = format!("script[{i}]");
            match step {
                ChannelStep::Pay { from, to, max_attempts, .. } => {
                    known(&nodes, from, &ctx)?;
                    known(&nodes, to, &ctx)?;
                    if *max_attempts == 0 {
                        return Err(schema(format!("{ctx}: max_attempts must be positive")));
                    }
                }
                ChannelStep::DirectPay { channel: c, payer, .. } => party(channel(*c, &ctx)?, payer, &ctx)?,
                ChannelStep::SetOnline { node, .. } => known(&nodes, node, &ctx)?,
                ChannelStep::RegisterMonitor { channel: c, party: p, .. } => party(channel(*c, &ctx)?, p, &ctx)?,
                ChannelStep::CloseUnilateral { channel: c, broadcaster, .. } => {
                    party(channel(*c, &ctx)?, broadcaster, &ctx)?
                }
                ChannelStep::CloseCooperative { channel: c } | ChannelStep::Penalize { channel: c } => {
                    channel(*c, &ctx)?;
                }
                ChannelStep::AdvanceBlocks { .. } => {}
            }
        }
        Ok(())
    }
}

impl PlasmaSection {
    fn validate(&self) -> Result<(), CliError> {
        self.config.validate().map_err(|e| schema(format!("plasma.config: {e}")))?;
        let mut ids: BTreeSet<&AccountId> = self.users.iter().map(|u| &u.id).collect();
        ids.extend(self.lps.iter().map(|l| &l.id));
        if ids.len() != self.users.len() + self.lps.len() {
            return Err(schema("duplicate user or lp id"));
        }
        let lps: BTreeSet<&AccountId> = self.lps.iter().map(|l| &l.id).collect();
        for (i, step) in self.script.iter().enumerate() {
            let ctx = format!("script[{i}]");
            match step {
                PlasmaStep::Pay { from, .. } => known(&ids, from, &ctx)?,
                PlasmaStep::StartExits { user } => known(&ids, user, &ctx)?,
                PlasmaStep::MassExit { participants, .. } => {
                    for p in participants {
                        known(&ids, p, &ctx)?;
                    }
                }
                PlasmaStep::FastWithdrawal { user, lp, .. } => {
                    known(&ids, user, &ctx)?;
                    known(&lps, lp, &ctx)?;
                }
                PlasmaStep::AdvanceTime { seconds } => positive(seconds, &ctx)?,
                _ => {}
            }
        }
        Ok(())
    }
}

impl RollupSection {
    fn validate(&self) -> Result<(), CliError> {
        let p = self.params();
        p.validate().map_err(|e| schema(format!("rollup.params: {e}")))?;
        if p.mode != self.mode {
            return Err(schema("rollup.params.mode differs from rollup.mode"));
        }
        let mut ids: BTreeSet<&AccountId> = self.users.iter().map(|u| &u.id).collect();
        ids.extend(self.publishers.iter().map(|u| &u.id));
        if ids.len() != self.users.len() + self.publishers.len() {
            return Err(schema("duplicate user or publisher id"));
        }
        for (i, step) in self.script.iter().enumerate() {
            let ctx = format!("script[{i}]");
            match step {
                RollupStep::AdvanceTime { seconds } => positive(seconds, &ctx)?,
                RollupStep::Challenge { root: Some(r), .. } => {
                    Hash256::from_hex(r).map_err(|e| schema(format!("{ctx}: root: {e}")))?;
                }
                RollupStep::BatchedTransfer { transfers, .. } if transfers.is_empty() => {
                    return Err(schema(format!("{ctx}: no transfers")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}
