//! Deterministic discrete-event engine: virtual clock, (time, seq)-ordered
//! queue, static shortest-latency routing with bottleneck bandwidth, and the
//! trace log every audit and regression test reads.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use crate::error::{GridError, Result};
use crate::model::{GridTopology, JobClass, NodeId, NodeSpec, SubgridId};

/// One routed path summary: total one-way latency and the bottleneck
/// bandwidth along the shortest-latency path. `a == b` routes have zero
/// latency and unbounded bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Route {
    pub latency: f64,
    pub bottleneck: f64,
}

impl Route {
    pub fn rtt(&self) -> f64 {
        2.0 * self.latency
    }
}

/// Static router: shortest-latency paths computed per source on demand and
/// cached. Ties between equal-latency paths are broken toward the smaller
/// predecessor node id so routing is deterministic.
pub struct Router {
    adj: Vec<Vec<(NodeId, f64, f64)>>,
    cache: std::cell::RefCell<BTreeMap<NodeId, Vec<Option<Route>>>>,
}

impl Router {
    pub fn new(topo: &GridTopology) -> Self {
        let mut adj = vec![Vec::new(); topo.nodes.len()];
        for link in &topo.links {
            let (a, b) = link.endpoints;
            adj[a as usize].push((b, link.latency, link.bandwidth));
            adj[b as usize].push((a, link.latency, link.bandwidth));
        }
        for nbrs in &mut adj {
            nbrs.sort_by_key(|&(id, _, _)| id);
        }
        Self {
            adj,
            cache: std::cell::RefCell::new(BTreeMap::new()),
        }
    }

    fn dijkstra(&self, src: NodeId) -> Vec<Option<Route>> {
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut bottleneck = vec![f64::INFINITY; n];
        let mut pred = vec![u32::MAX; n];
        let mut done = vec![false; n];
        dist[src as usize] = 0.0;

        #[derive(PartialEq)]
        struct Item(f64, NodeId);
        impl Eq for Item {}
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> Ordering {
                other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
            }
        }
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }

        let mut heap = BinaryHeap::new();
        heap.push(Item(0.0, src));
        while let Some(Item(d, u)) = heap.pop() {
            let ui = u as usize;
            if done[ui] {
                continue;
            }
            done[ui] = true;
            for &(v, lat, bw) in &self.adj[ui] {
                let vi = v as usize;
                let nd = d + lat;
                let better = nd < dist[vi]
                    || (nd == dist[vi] && pred[vi] != u32::MAX && u < pred[vi]);
                if better && !done[vi] {
                    dist[vi] = nd;
                    bottleneck[vi] = bw.min(bottleneck[ui]);
                    pred[vi] = u;
                    heap.push(Item(nd, v));
                }
            }
        }
        (0..n)
            .map(|i| {
                if dist[i].is_finite() {
                    Some(Route {
                        latency: dist[i],
                        bottleneck: bottleneck[i],
                    })
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn route(&self, from: NodeId, to: NodeId) -> Option<Route> {
        if from == to {
            return Some(Route {
                latency: 0.0,
                bottleneck: f64::INFINITY,
            });
        }
        let mut cache = self.cache.borrow_mut();
        let table = cache.entry(from).or_insert_with(|| self.dijkstra(from));
        table[to as usize]
    }

    /// Bottleneck transfer model over the routed path.
    pub fn transfer_time(&self, from: NodeId, to: NodeId, bytes: u64) -> Result<f64> {
        let route = self
            .route(from, to)
            .ok_or(GridError::NoRoute(from, to))?;
        Ok(transfer_time(bytes, &route))
    }
}

/// `sum(latency) + bytes * 8 / min(bandwidth)` over the hops of a path.
pub fn transfer_time(bytes: u64, route: &Route) -> f64 {
    let serialization = if bytes == 0 {
        0.0
    } else {
        bytes as f64 * 8.0 / route.bottleneck
    };
    route.latency + serialization
}

/// Processor-sharing load model: `concurrent_jobs` already occupy the node.
pub fn compute_time(flop: f64, node: &NodeSpec, concurrent_jobs: u32) -> f64 {
    if flop == 0.0 {
        0.0
    } else {
        flop / node.effective_rate(concurrent_jobs)
    }
}

// ── Event queue ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    JobSubmit { job_id: u32 },
    JobRetry { job_id: u32 },
    TransferComplete { job_id: u32, epoch: u32 },
    ComputeComplete { job_id: u32, epoch: u32 },
    CheckpointDue { job_id: u32, epoch: u32 },
    NodeFail { node_id: NodeId },
    NodeRecover { node_id: NodeId },
    DetectorFired { subgrid: SubgridId, suspect: NodeId },
    NodeJoin { node_id: NodeId },
    Timer { token: u64 },
}

#[derive(Debug, Clone)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

struct Queued(Event);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.0.time == other.0.time && self.0.seq == other.0.seq
    }
}
impl Eq for Queued {}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on (time, seq).
        other
            .0
            .time
            .total_cmp(&self.0.time)
            .then(other.0.seq.cmp(&self.0.seq))
    }
}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The virtual clock plus the pending event set. Dequeue order is strictly
/// (time, seq); scheduling behind the clock is a logic error and fails fast.
pub struct EventQueue {
    heap: BinaryHeap<Queued>,
    next_seq: u64,
    clock: f64,
}

impl Default for EventQueue {
    fn default() -> Self {
        Self::new()
    }
}

impl EventQueue {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
            clock: 0.0,
        }
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn schedule(&mut self, time: f64, kind: EventKind) -> Result<u64> {
        if time < self.clock {
            return Err(GridError::SchedulePast {
                event_time: time,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Queued(Event { time, seq, kind }));
        Ok(seq)
    }

    /// Next event with time <= t_end, advancing the clock to it. When the
    /// queue is exhausted (or only holds later events) the clock lands on
    /// t_end and `None` is returned.
    pub fn pop_until(&mut self, t_end: f64) -> Option<Event> {
        match self.heap.peek() {
            Some(q) if q.0.time <= t_end => {
                let ev = self.heap.pop().unwrap().0;
                self.clock = ev.time;
                Some(ev)
            }
            _ => {
                self.clock = self.clock.max(t_end);
                None
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

// ── Failure schedule ────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub node_id: NodeId,
    pub fail_time: f64,
    /// `None` means the node never comes back.
    pub recover_time: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureSchedule {
    pub entries: Vec<FailureEntry>,
}

impl FailureSchedule {
    pub fn validate(&self) -> Result<()> {
        let mut by_node: BTreeMap<NodeId, Vec<(f64, f64)>> = BTreeMap::new();
        for e in &self.entries {
            let recover = e.recover_time.unwrap_or(f64::INFINITY);
            if e.fail_time >= recover {
                return Err(GridError::InvalidSchedule(format!(
                    "node {}: fail_time {} >= recover_time {}",
                    e.node_id, e.fail_time, recover
                )));
            }
            by_node.entry(e.node_id).or_default().push((e.fail_time, recover));
        }
        for (node, mut intervals) in by_node {
            intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in intervals.windows(2) {
                if w[1].0 < w[0].1 {
                    return Err(GridError::InvalidSchedule(format!(
                        "node {node}: overlapping failure intervals"
                    )));
                }
            }
        }
        Ok(())
    }
}

// ── Trace ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Intra,
    Region,
    InterRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceKind {
    Message {
        from: NodeId,
        to: NodeId,
        tier: Tier,
        label: String,
        bytes: u64,
        #[serde(skip_serializing_if = "Option::is_none")]
        query_id: Option<u64>,
    },
    JobSubmitted {
        job_id: u32,
        origin: NodeId,
    },
    JobPlaced {
        job_id: u32,
        node: NodeId,
        policy: String,
    },
    TransferStarted {
        job_id: u32,
        from: NodeId,
        to: NodeId,
        bytes: u64,
    },
    TransferComplete {
        job_id: u32,
    },
    ComputeStarted {
        job_id: u32,
        node: NodeId,
        rate: f64,
        remaining_flop: f64,
    },
    ComputeComplete {
        job_id: u32,
        node: NodeId,
        executed_flop: f64,
    },
    CheckpointTaken {
        job_id: u32,
        node: NodeId,
        number: u32,
        progress_flop: f64,
    },
    CheckpointExported {
        job_id: u32,
        node: NodeId,
        parent: NodeId,
        number: u32,
        progress_flop: f64,
        bytes: u64,
    },
    NodeFailed {
        node: NodeId,
    },
    NodeRecovered {
        node: NodeId,
    },
    FailureDetected {
        subgrid: SubgridId,
        suspect: NodeId,
    },
    ElectionStarted {
        subgrid: SubgridId,
        candidates: u32,
    },
    SuperPeerElected {
        subgrid: SubgridId,
        leader: NodeId,
        messages: u64,
    },
    RegionPeerElected {
        region: u32,
        leader: NodeId,
    },
    RegistryRegenerated {
        subgrid: SubgridId,
        version: u64,
        entries: u64,
        shares_used: u32,
    },
    NodeRegistered {
        subgrid: SubgridId,
        node: NodeId,
        version: u64,
    },
    QueryIssued {
        query_id: u64,
        origin: NodeId,
    },
    QueryResolved {
        query_id: u64,
        outcome: String,
        matches: u64,
    },
    JobRecovered {
        job_id: u32,
        redone_flop: f64,
        resumed_from_flop: f64,
    },
    JobFailedPermanently {
        job_id: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: TraceKind,
}

/// Append-only trace of one simulation run. `seq` is a global append
/// counter, so two identical runs serialize to identical bytes.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct EventTrace {
    pub events: Vec<TraceEvent>,
}

impl EventTrace {
    pub fn record(&mut self, time: f64, kind: TraceKind) {
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent { time, seq, kind });
    }

    /// Line-delimited JSON, one event per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(buf)
    }
}

// ── Job record ──────────────────────────────────────────────────────────────

/// Per-job lifecycle outcome; the measurement substrate for all metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: u32,
    pub policy: String,
    pub class: JobClass,
    pub seed: u64,
    pub submit_time: f64,
    pub start_time: f64,
    pub end_time: f64,
    pub node_id: NodeId,
    pub origin_subgrid: SubgridId,
    pub exec_subgrid: SubgridId,
    pub checkpoints_taken: u32,
    pub exports_taken: u32,
    pub redone_flop: f64,
    pub messages_intra: u64,
    pub messages_region: u64,
    pub messages_inter_region: u64,
    pub completed: bool,
}
