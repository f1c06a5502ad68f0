//! Payment-channel network: channel lifecycle, revocation penalty game,
//! HTLC multi-hop routing over hidden balances, onion visibility and
//! monitoring services.

mod channel;
mod graph;
mod network;
pub mod onion;

pub use channel::{
    Channel, ChannelId, ChannelStatus, Commitment, Direction, Htlc, RevocationEntry, Side, StateRevocations,
};
pub use graph::{
    find_route, network_stats, route_fee, FeePolicy, NetworkGraph, NetworkStats, PublicEdge, Route, RouteFinder,
    RouteHop, MAX_ROUTE_HOPS,
};
pub use network::{Enforcer, Invoice, MonitorHandle, PaymentNetwork, PaymentOutcome, PenaltyOutcome, PendingClose};
pub use onion::{HopView, OnionPacket};

use serde::{Deserialize, Serialize};

use crate::l1::L1Error;
use crate::types::{AccountId, Amount};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChannelError {
    #[error(transparent)]
    L1(#[from] L1Error),
    #[error("channel funding must be positive")]
    ZeroCapacity,
    #[error("a channel needs two distinct parties")]
    SelfChannel,
    #[error("unknown node {0}")]
    UnknownNode(AccountId),
    #[error("unknown channel {0}")]
    UnknownChannel(ChannelId),
    #[error("channel {0} is not open")]
    ChannelNotOpen(ChannelId),
    #[error("{channel}: balance {available} below {needed}")]
    InsufficientBalance { channel: ChannelId, needed: Amount, available: Amount },
    #[error("HTLC amount must be positive")]
    ZeroHtlc,
    #[error("invoice amount must be positive")]
    ZeroInvoice,
    #[error("unknown HTLC {0}")]
    UnknownHtlc(u64),
    #[error("preimage does not match payment hash")]
    WrongPreimage,
    #[error("HTLC expired at {expiry}, height {height}")]
    HtlcExpired { expiry: u64, height: u64 },
    #[error("HTLC expires at {expiry}, height {height}")]
    HtlcNotExpired { expiry: u64, height: u64 },
    #[error("{0} is not an endpoint of the channel")]
    NotEndpoint(AccountId),
    #[error("source and destination are the same node")]
    SameEndpoints,
    #[error("no capacity-feasible route")]
    RouteNotFound,
    #[error("route does not deliver the invoice to its payee")]
    RouteInvoiceMismatch,
    #[error("invoice already paid")]
    InvoiceAlreadyPaid,
    #[error("no signed commitment for state {0}")]
    UnknownState(u64),
    #[error("no unilateral close is pending on {0}")]
    NoPendingClose(ChannelId),
    #[error("broadcast state is the latest; nothing to punish")]
    NotStale,
    #[error("penalty window expired at height {unlock_height}")]
    WindowExpired { unlock_height: u64 },
    #[error("revocation secret for state {0} not held")]
    SecretNotHeld(u64),
    #[error("{0} is offline")]
    PartyOffline(AccountId),
    #[error("counterparty {0} refused to co-sign")]
    CounterpartyRefused(AccountId),
    #[error("unknown monitor {0}")]
    UnknownMonitor(u64),
    #[error("node is not on this route")]
    NotAHop,
    #[error("route must have at least two nodes")]
    RouteTooShort,
}

/// Protocol constants. Byte sizes and feerate drive the L1 fees of opening
/// and closing; deltas drive HTLC expiry spacing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub timelock_blocks: u64,
    pub htlc_final_delta: u64,
    pub htlc_hop_delta: u64,
    pub feerate_sat_per_byte: u64,
    pub open_tx_bytes: u64,
    pub close_tx_bytes: u64,
    pub withdraw_tx_bytes: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            timelock_blocks: 144,
            htlc_final_delta: 144,
            htlc_hop_delta: 144,
            feerate_sat_per_byte: 100,
            open_tx_bytes: 235,
            close_tx_bytes: 300,
            withdraw_tx_bytes: 235,
        }
    }
}
