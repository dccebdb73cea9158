//! The three brokering policies (NCDA, FLOPS-rank, round-robin) and the
//! completion-time estimator they share. Policies are pure decision
//! functions over bid snapshots; polling itself lives in the simulation,
//! which audits the two-messages-per-member cost in the trace.

use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::model::{Job, NodeId};

/// A node's advertised capability/load snapshot; the unit of registry state
/// and broker bids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceDescription {
    pub node_id: NodeId,
    pub capability: f64,
    pub owner_share: f64,
    pub running_jobs: u32,
    pub free_storage: u64,
    pub timestamp: f64,
}

impl ResourceDescription {
    pub fn effective_rate(&self) -> f64 {
        self.capability * self.owner_share / (1.0 + self.running_jobs as f64)
    }
}

/// One poll response: the member's description plus the bandwidth and rtt
/// the member measured back to the requester. A node bidding for its own
/// job reports unbounded bandwidth and zero rtt.
#[derive(Debug, Clone, PartialEq)]
pub struct Bid {
    pub description: ResourceDescription,
    pub measured_bandwidth: f64,
    pub measured_rtt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Ncda,
    Flops,
    #[serde(rename = "rr")]
    RoundRobin,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Ncda => "ncda",
            PolicyKind::Flops => "flops",
            PolicyKind::RoundRobin => "rr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ncda" => Ok(PolicyKind::Ncda),
            "flops" => Ok(PolicyKind::Flops),
            "rr" => Ok(PolicyKind::RoundRobin),
            other => Err(GridError::InvalidSpec(format!(
                "unknown policy {other:?} (expected ncda|flops|rr)"
            ))),
        }
    }
}

/// Round-robin keeps a cursor across decisions; the other policies are
/// stateless.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub kind: PolicyKind,
    pub rr_cursor: usize,
}

impl PolicyState {
    pub fn new(kind: PolicyKind) -> Self {
        Self { kind, rr_cursor: 0 }
    }

    pub fn select(&mut self, job: &Job, bids: &[Bid]) -> Result<NodeId> {
        match self.kind {
            PolicyKind::Ncda => ncda_select(job, bids),
            PolicyKind::Flops => flops_select(job, bids),
            PolicyKind::RoundRobin => round_robin_select(self, bids),
        }
    }
}

/// Predicted completion: rtt + transfer of the job's input over the
/// measured bandwidth + processor-shared compute.
pub fn estimate_completion(job: &Job, bid: &Bid) -> f64 {
    let transfer = if job.byte_demand == 0 {
        0.0
    } else {
        job.byte_demand as f64 * 8.0 / bid.measured_bandwidth
    };
    bid.measured_rtt + transfer + job.flop_demand / bid.description.effective_rate()
}

/// Network-compute-and-data-aware selection: argmin of predicted completion
/// time, ties toward the lower node id.
pub fn ncda_select(job: &Job, bids: &[Bid]) -> Result<NodeId> {
    bids.iter()
        .min_by(|a, b| {
            estimate_completion(job, a)
                .total_cmp(&estimate_completion(job, b))
                .then(a.description.node_id.cmp(&b.description.node_id))
        })
        .map(|b| b.description.node_id)
        .ok_or(GridError::NoCandidate)
}

/// ClassAds-style rank: argmax of load-adjusted compute rate, bandwidth
/// ignored entirely.
pub fn flops_select(_job: &Job, bids: &[Bid]) -> Result<NodeId> {
    bids.iter()
        .max_by(|a, b| {
            a.description
                .effective_rate()
                .total_cmp(&b.description.effective_rate())
                .then(b.description.node_id.cmp(&a.description.node_id))
        })
        .map(|b| b.description.node_id)
        .ok_or(GridError::NoCandidate)
}

/// Cyclic selection over the bid list (callers keep bids sorted by node id
/// for a stable cycle); advances the cursor.
pub fn round_robin_select(state: &mut PolicyState, bids: &[Bid]) -> Result<NodeId> {
    if bids.is_empty() {
        return Err(GridError::NoCandidate);
    }
    let chosen = bids[state.rr_cursor % bids.len()].description.node_id;
    state.rr_cursor = state.rr_cursor.wrapping_add(1);
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::JobClass;
    use proptest::prelude::*;

    fn bid(node_id: NodeId, capability: f64, bandwidth: f64, rtt: f64) -> Bid {
        Bid {
            description: ResourceDescription {
                node_id,
                capability,
                owner_share: 1.0,
                running_jobs: 0,
                free_storage: u64::MAX,
                timestamp: 0.0,
            },
            measured_bandwidth: bandwidth,
            measured_rtt: rtt,
        }
    }

    fn hybrid_job() -> Job {
        Job {
            job_id: 0,
            class: JobClass::Hybrid,
            flop_demand: 1e9,
            byte_demand: 1_000_000_000,
            submit_time: 0.0,
            origin_node: 0,
        }
    }

    #[test]
    fn estimate_hybrid_examples() {
        let job = hybrid_job();
        // A: 1e8 FLOP/s idle, 1 MB/s, rtt 0 -> 10 + 1000 = 1010 s.
        let a = bid(1, 1e8, 8e6, 0.0);
        assert_eq!(estimate_completion(&job, &a), 1010.0);
        // B: 1e7 FLOP/s idle, 10 MB/s -> 100 + 100 = 200 s.
        let b = bid(2, 1e7, 8e7, 0.0);
        assert_eq!(estimate_completion(&job, &b), 200.0);
    }

    #[test]
    fn estimate_compute_only_is_pure_compute_term() {
        let job = Job {
            byte_demand: 0,
            ..hybrid_job()
        };
        let b = bid(1, 1e8, 1.0, 0.0);
        assert_eq!(estimate_completion(&job, &b), 10.0);
    }

    #[test]
    fn ncda_prefers_fast_link_where_flops_prefers_fast_cpu() {
        let job = hybrid_job();
        let bids = vec![bid(1, 1e8, 8e6, 0.0), bid(2, 1e7, 8e7, 0.0)];
        assert_eq!(ncda_select(&job, &bids).unwrap(), 2);
        assert_eq!(flops_select(&job, &bids).unwrap(), 1);
    }

    #[test]
    fn single_bid_selected_by_all_policies() {
        let job = hybrid_job();
        let bids = vec![bid(3, 1e7, 1e6, 0.01)];
        assert_eq!(ncda_select(&job, &bids).unwrap(), 3);
        assert_eq!(flops_select(&job, &bids).unwrap(), 3);
        let mut state = PolicyState::new(PolicyKind::RoundRobin);
        for _ in 0..5 {
            assert_eq!(round_robin_select(&mut state, &bids).unwrap(), 3);
        }
    }

    #[test]
    fn ncda_ties_break_to_lower_node_id() {
        let job = hybrid_job();
        let bids = vec![bid(9, 1e7, 1e6, 0.0), bid(4, 1e7, 1e6, 0.0)];
        assert_eq!(ncda_select(&job, &bids).unwrap(), 4);
    }

    #[test]
    fn flops_ignores_bandwidth_and_respects_share() {
        let job = hybrid_job();
        let mut full = bid(1, 1e7, 1e3, 0.5);
        let mut half = bid(2, 1e7, 1e9, 0.0);
        full.description.owner_share = 1.0;
        half.description.owner_share = 0.5;
        assert_eq!(flops_select(&job, &[full, half]).unwrap(), 1);
    }

    #[test]
    fn empty_bids_error() {
        let job = hybrid_job();
        assert!(matches!(ncda_select(&job, &[]), Err(GridError::NoCandidate)));
        assert!(matches!(flops_select(&job, &[]), Err(GridError::NoCandidate)));
        let mut state = PolicyState::new(PolicyKind::RoundRobin);
        assert!(round_robin_select(&mut state, &[]).is_err());
    }

    #[test]
    fn round_robin_cycles() {
        let bids = vec![bid(0, 1e6, 1e6, 0.0), bid(1, 1e6, 1e6, 0.0), bid(2, 1e6, 1e6, 0.0)];
        let mut state = PolicyState::new(PolicyKind::RoundRobin);
        let picks: Vec<NodeId> = (0..4)
            .map(|_| round_robin_select(&mut state, &bids).unwrap())
            .collect();
        assert_eq!(picks, vec![0, 1, 2, 0]);
    }

    #[test]
    fn round_robin_even_spread() {
        let bids: Vec<Bid> = (0..10).map(|i| bid(i, 1e6, 1e6, 0.0)).collect();
        let mut state = PolicyState::new(PolicyKind::RoundRobin);
        let mut counts = [0u32; 10];
        for _ in 0..1000 {
            counts[round_robin_select(&mut state, &bids).unwrap() as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 100));
    }

    proptest! {
        // NCDA equals exhaustive argmin of the estimator.
        #[test]
        fn ncda_matches_bruteforce(
            caps in proptest::collection::vec(1e4f64..1e8, 1..10),
            bws in proptest::collection::vec(5.6e4f64..8e7, 10),
            rtts in proptest::collection::vec(0.0f64..0.5, 10),
        ) {
            let job = hybrid_job();
            let bids: Vec<Bid> = caps.iter().enumerate()
                .map(|(i, &c)| bid(i as NodeId, c, bws[i], rtts[i]))
                .collect();
            let chosen = ncda_select(&job, &bids).unwrap();
            let brute = bids.iter()
                .map(|b| (estimate_completion(&job, b), b.description.node_id))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .unwrap().1;
            prop_assert_eq!(chosen, brute);
        }

        // Scaling every capability by a common factor never changes the
        // FLOPS-rank winner.
        #[test]
        fn flops_rank_scale_invariant(
            caps in proptest::collection::vec(1e4f64..1e8, 1..10),
            scale in 0.001f64..1000.0,
        ) {
            let job = hybrid_job();
            let bids: Vec<Bid> = caps.iter().enumerate()
                .map(|(i, &c)| bid(i as NodeId, c, 1e6, 0.0))
                .collect();
            let scaled: Vec<Bid> = caps.iter().enumerate()
                .map(|(i, &c)| bid(i as NodeId, c * scale, 1e6, 0.0))
                .collect();
            prop_assert_eq!(
                flops_select(&job, &bids).unwrap(),
                flops_select(&job, &scaled).unwrap()
            );
        }

        // With equal links and no data to move, NCDA degenerates to
        // FLOPS-rank.
        #[test]
        fn ncda_coincides_with_flops_when_network_is_flat(
            caps in proptest::collection::vec(1e4f64..1e8, 1..10),
        ) {
            let job = Job { byte_demand: 0, ..hybrid_job() };
            let bids: Vec<Bid> = caps.iter().enumerate()
                .map(|(i, &c)| bid(i as NodeId, c, 1e6, 0.02))
                .collect();
            prop_assert_eq!(
                ncda_select(&job, &bids).unwrap(),
                flops_select(&job, &bids).unwrap()
            );
        }
    }
}
