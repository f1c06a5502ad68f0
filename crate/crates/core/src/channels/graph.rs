//! Public channel graph and fee-ordered route enumeration.
//!
//! The graph holds what gossip would reveal: endpoints, capacity and fee
//! policy. Balances live only in [`Channel`](super::Channel) and are never
//! reachable from here.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::types::{AccountId, Amount};

use super::{ChannelError, ChannelId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeePolicy {
    pub base_fee: Amount,
    pub proportional_ppm: Amount,
}

impl FeePolicy {
    pub fn zero() -> Self {
        FeePolicy::default()
    }
}

/// `base + ⌊amount · ppm / 10^6⌋`.
pub fn route_fee(policy: &FeePolicy, amount: Amount) -> Amount {
    policy.base_fee + amount * policy.proportional_ppm / 1_000_000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PublicEdge {
    pub channel: ChannelId,
    pub a: AccountId,
    pub b: AccountId,
    pub capacity: Amount,
    pub fee_policy: FeePolicy,
}

impl PublicEdge {
    pub fn other(&self, node: &AccountId) -> Option<&AccountId> {
        if *node == self.a {
            Some(&self.b)
        } else if *node == self.b {
            Some(&self.a)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NetworkGraph {
    nodes: BTreeSet<AccountId>,
    edges: BTreeMap<ChannelId, PublicEdge>,
}

impl NetworkGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, node: AccountId) {
        self.nodes.insert(node);
    }

    pub fn upsert_edge(&mut self, edge: PublicEdge) {
        self.nodes.insert(edge.a.clone());
        self.nodes.insert(edge.b.clone());
        self.edges.insert(edge.channel, edge);
    }

    pub fn remove_edge(&mut self, channel: ChannelId) {
        self.edges.remove(&channel);
    }

    pub fn set_capacity(&mut self, channel: ChannelId, capacity: Amount) {
        if let Some(edge) = self.edges.get_mut(&channel) {
            edge.capacity = capacity;
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &AccountId> {
        self.nodes.iter()
    }

    pub fn edges(&self) -> impl Iterator<Item = &PublicEdge> {
        self.edges.values()
    }

    pub fn edge(&self, channel: ChannelId) -> Option<&PublicEdge> {
        self.edges.get(&channel)
    }

    pub fn contains(&self, node: &AccountId) -> bool {
        self.nodes.contains(node)
    }

    fn incident<'a>(&'a self, node: &'a AccountId) -> impl Iterator<Item = &'a PublicEdge> + 'a {
        self.edges.values().filter(move |e| e.a == *node || e.b == *node)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RouteHop {
    pub channel: ChannelId,
    pub from: AccountId,
    pub to: AccountId,
    /// Amount locked on this edge.
    pub amount: Amount,
    /// Fee kept by `from` for forwarding onto this edge (zero on the first hop).
    pub fee: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Route {
    pub hops: Vec<RouteHop>,
}

impl Route {
    pub fn nodes(&self) -> Vec<AccountId> {
        let mut out: Vec<AccountId> = self.hops.iter().map(|h| h.from.clone()).collect();
        if let Some(last) = self.hops.last() {
            out.push(last.to.clone());
        }
        out
    }

    pub fn intermediaries(&self) -> usize {
        self.hops.len().saturating_sub(1)
    }

    pub fn total_fee(&self) -> Amount {
        self.hops.iter().map(|h| h.fee).sum()
    }

    /// What the sender locks on the first hop.
    pub fn total_sent(&self) -> Amount {
        self.hops.first().map(|h| h.amount).unwrap_or(0)
    }

    pub fn delivered(&self) -> Amount {
        self.hops.last().map(|h| h.amount).unwrap_or(0)
    }
}

pub const MAX_ROUTE_HOPS: usize = 20;

/// Partial path grown backward from the destination.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Partial {
    /// `head..=dst`
    nodes: Vec<AccountId>,
    channels: Vec<ChannelId>,
    /// Amount entering each edge, aligned with `channels`.
    amounts: Vec<Amount>,
    fees: Vec<Amount>,
    /// Amount the head must receive (or, once complete, send).
    inbound: Amount,
    complete: bool,
}

type QueueKey = (Amount, usize, u8, Vec<AccountId>);

/// Lazily yields capacity-feasible simple routes in (total fee, hop count,
/// node sequence) order. The first item is the cheapest route; each further
/// call to `next` is a retry with the next-cheapest unexplored one.
pub struct RouteFinder<'g> {
    graph: &'g NetworkGraph,
    src: AccountId,
    amount: Amount,
    heap: BinaryHeap<Reverse<(QueueKey, usize)>>,
    arena: Vec<Partial>,
}

impl<'g> RouteFinder<'g> {
    pub fn new(
        graph: &'g NetworkGraph,
        src: &AccountId,
        dst: &AccountId,
        amount: Amount,
    ) -> Result<Self, ChannelError> {
        if src == dst {
            return Err(ChannelError::SameEndpoints);
        }
        let mut finder = RouteFinder { graph, src: src.clone(), amount, heap: BinaryHeap::new(), arena: Vec::new() };
        if graph.contains(src) && graph.contains(dst) {
            finder.push(Partial {
                nodes: vec![dst.clone()],
                channels: Vec::new(),
                amounts: Vec::new(),
                fees: Vec::new(),
                inbound: amount,
                complete: false,
            });
        }
        Ok(finder)
    }

    fn push(&mut self, partial: Partial) {
        let key =
            (partial.inbound - self.amount, partial.channels.len(), u8::from(!partial.complete), partial.nodes.clone());
        self.arena.push(partial);
        self.heap.push(Reverse((key, self.arena.len() - 1)));
    }

    fn expand(&mut self, index: usize) {
        let partial = self.arena[index].clone();
        if partial.channels.len() >= MAX_ROUTE_HOPS {
            return;
        }
        let head = partial.nodes[0].clone();
        let mut candidates: Vec<&PublicEdge> = self.graph.incident(&head).collect();
        candidates.sort_by_key(|e| e.channel);
        let mut next = Vec::new();
        for edge in candidates {
            let pred = edge.other(&head).expect("incident edge").clone();
            if partial.nodes.contains(&pred) {
                continue;
            }
            // `head` forwards `partial.inbound` minus its own fee; the
            // predecessor must push the full inbound amount over `edge`.
            let on_edge = partial.inbound;
            if edge.capacity < on_edge {
                continue;
            }
            let mut nodes = Vec::with_capacity(partial.nodes.len() + 1);
            nodes.push(pred.clone());
            nodes.extend(partial.nodes.iter().cloned());
            let mut channels = vec![edge.channel];
            channels.extend(partial.channels.iter().copied());
            let mut amounts = vec![on_edge];
            amounts.extend(partial.amounts.iter().copied());
            let complete = pred == self.src;
            let (inbound, fee) = if complete {
                (on_edge, 0)
            } else {
                let fee = route_fee(&edge.fee_policy, on_edge);
                (on_edge + fee, fee)
            };
            let mut fees = vec![fee];
            fees.extend(partial.fees.iter().copied());
            next.push(Partial { nodes, channels, amounts, fees, inbound, complete });
        }
        for p in next {
            self.push(p);
        }
    }

    fn to_route(partial: &Partial) -> Route {
        // fees[i] is charged by nodes[i] for forwarding onto channels[i].
        let hops = partial
            .channels
            .iter()
            .enumerate()
            .map(|(i, channel)| RouteHop {
                channel: *channel,
                from: partial.nodes[i].clone(),
                to: partial.nodes[i + 1].clone(),
                amount: partial.amounts[i],
                fee: partial.fees[i],
            })
            .collect();
        Route { hops }
    }
}

impl Iterator for RouteFinder<'_> {
    type Item = Route;

    fn next(&mut self) -> Option<Route> {
        while let Some(Reverse((_, index))) = self.heap.pop() {
            if self.arena[index].complete {
                return Some(Self::to_route(&self.arena[index]));
            }
            self.expand(index);
        }
        None
    }
}

pub fn find_route(
    graph: &NetworkGraph,
    src: &AccountId,
    dst: &AccountId,
    amount: Amount,
) -> Result<Route, ChannelError> {
    RouteFinder::new(graph, src, dst, amount)?.next().ok_or(ChannelError::RouteNotFound)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NetworkStats {
    pub degrees: BTreeMap<AccountId, usize>,
    /// degree → number of nodes with that degree
    pub histogram: BTreeMap<usize, usize>,
    pub hubs: Vec<AccountId>,
}

pub fn network_stats(graph: &NetworkGraph, hub_threshold: usize) -> NetworkStats {
    let mut degrees: BTreeMap<AccountId, usize> = graph.nodes().map(|n| (n.clone(), 0)).collect();
    for edge in graph.edges() {
        *degrees.entry(edge.a.clone()).or_default() += 1;
        *degrees.entry(edge.b.clone()).or_default() += 1;
    }
    let mut histogram = BTreeMap::new();
    for d in degrees.values() {
        *histogram.entry(*d).or_default() += 1;
    }
    let hubs = degrees.iter().filter(|(_, d)| **d >= hub_threshold).map(|(n, _)| n.clone()).collect();
    NetworkStats { degrees, histogram, hubs }
}
