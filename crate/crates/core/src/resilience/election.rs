//! Bully-style leader election keyed on (availability, node_id). The
//! decision itself is a deterministic argmax; the simulation charges the
//! bully message budget and the detection/round delays around it.

use crate::model::{NodeId, NodeSpec};

/// Winner over (availability, node_id) candidate pairs; `None` when the
/// live set is empty (sub-grid dissolved).
pub fn elect(candidates: &[(f64, NodeId)]) -> Option<NodeId> {
    candidates
        .iter()
        .max_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|&(_, id)| id)
}

pub fn elect_superpeer(live_members: &[&NodeSpec]) -> Option<NodeId> {
    elect(
        &live_members
            .iter()
            .map(|n| (n.availability, n.node_id))
            .collect::<Vec<_>>(),
    )
}

/// Message budget of one bully round over m live members: every member
/// challenges all higher-keyed peers and gets an answer back, then the
/// winner broadcasts. 2 * m(m-1)/2 + (m-1) = m^2 - 1, hence O(m^2).
pub fn bully_message_count(m: usize) -> u64 {
    if m == 0 {
        0
    } else {
        (m * m - 1) as u64
    }
}
