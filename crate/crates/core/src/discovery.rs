//! Two-tier super-peer resource discovery: registration, intra-sub-grid
//! query matching, region-peer dispatch over cumulative power, and the
//! inter-region P2P fallback.
//!
//! Wire format of record: every protocol step is logged as a `Message`
//! trace event labelled register / register_ack / query / query_result /
//! forward / dispatch / decline / power_push with its tier, so the trace
//! doubles as the schema for any future networked port.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::broker::ResourceDescription;
use crate::model::{GridTopology, NodeId, QueryConstraint, RegionId, SubgridId};
use crate::simkernel::{EventTrace, Tier, TraceKind};

/// One sub-grid's registry, owned by its super-peer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub subgrid_id: SubgridId,
    pub owner: NodeId,
    pub version: u64,
    pub entries: BTreeMap<NodeId, ResourceDescription>,
}

impl Registry {
    pub fn new(subgrid_id: SubgridId, owner: NodeId) -> Self {
        Self {
            subgrid_id,
            owner,
            version: 0,
            entries: BTreeMap::new(),
        }
    }

    /// Idempotent upsert; every mutation bumps the version.
    pub fn upsert(&mut self, desc: ResourceDescription) {
        self.entries.insert(desc.node_id, desc);
        self.version += 1;
    }

    pub fn remove(&mut self, node: NodeId) {
        if self.entries.remove(&node).is_some() {
            self.version += 1;
        }
    }

    /// All registered nodes satisfying the constraint thresholds, ascending
    /// node id. Both thresholds are tested independently.
    pub fn matching(&self, c: &QueryConstraint) -> Vec<NodeId> {
        self.entries
            .values()
            .filter(|d| d.capability >= c.min_capability && d.free_storage >= c.min_storage)
            .map(|d| d.node_id)
            .collect()
    }

    /// Canonical byte serialization; the payload erasure coding protects.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("registry serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> crate::error::Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

/// Theoretical peak of one sub-grid, cached at the region peer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativePower {
    pub subgrid_id: SubgridId,
    pub peak_flops: f64,
    pub peak_storage: u64,
    pub member_count: u32,
}

/// Field-by-field sums over the registry.
pub fn aggregate_power(registry: &Registry) -> CumulativePower {
    CumulativePower {
        subgrid_id: registry.subgrid_id,
        peak_flops: registry
            .entries
            .values()
            .map(|d| d.capability * d.owner_share)
            .sum(),
        peak_storage: registry.entries.values().map(|d| d.free_storage).sum(),
        member_count: registry.entries.len() as u32,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMessage {
    pub query_id: u64,
    pub constraint: QueryConstraint,
    pub origin_node: NodeId,
    pub hop_record: Vec<(Tier, NodeId)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryOutcome {
    Matches(Vec<NodeId>),
    NotFound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResolution {
    pub query_id: u64,
    pub outcome: QueryOutcome,
    pub hop_record: Vec<(Tier, NodeId)>,
    pub messages_intra: u64,
    pub messages_region: u64,
    pub messages_inter_region: u64,
    /// Distinct regions (other than the origin's) contacted inter-region.
    pub regions_contacted: Vec<RegionId>,
}

/// Current coordinator assignments; starts from the topology's designations
/// and is updated by elections.
#[derive(Debug, Clone, PartialEq)]
pub struct Roles {
    pub super_peer: BTreeMap<SubgridId, NodeId>,
    pub region_peer: BTreeMap<RegionId, NodeId>,
}

impl Roles {
    pub fn from_topology(topo: &GridTopology) -> Self {
        Self {
            super_peer: topo
                .subgrids
                .iter()
                .map(|sg| (sg.subgrid_id, sg.super_peer))
                .collect(),
            region_peer: topo
                .regions
                .iter()
                .map(|r| (r.region_id, r.region_peer))
                .collect(),
        }
    }
}

/// Pick the target sub-grid for a request at the region tier: among
/// qualifying sub-grids (theoretical peaks satisfy the constraint and the
/// member count covers it), the one with maximal peak_flops headroom, ties
/// toward the lower sub-grid id. `None` means escalate.
pub fn region_dispatch(
    powers: &BTreeMap<SubgridId, CumulativePower>,
    constraint: &QueryConstraint,
    exclude: &BTreeSet<SubgridId>,
) -> Option<SubgridId> {
    powers
        .values()
        .filter(|p| !exclude.contains(&p.subgrid_id))
        .filter(|p| {
            p.peak_flops >= constraint.min_capability
                && p.peak_storage >= constraint.min_storage
                && p.member_count >= constraint.count
        })
        .max_by(|a, b| {
            a.peak_flops
                .total_cmp(&b.peak_flops)
                .then(b.subgrid_id.cmp(&a.subgrid_id))
        })
        .map(|p| p.subgrid_id)
}

/// All overlay protocol state: per-sub-grid registries plus the cumulative
/// powers cached at each region peer and the per-region query dedup set.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub registries: BTreeMap<SubgridId, Registry>,
    pub region_powers: BTreeMap<RegionId, BTreeMap<SubgridId, CumulativePower>>,
    seen_queries: BTreeMap<RegionId, BTreeSet<u64>>,
    next_query_id: u64,
}

impl Overlay {
    pub fn new(topo: &GridTopology) -> Self {
        let registries = topo
            .subgrids
            .iter()
            .map(|sg| (sg.subgrid_id, Registry::new(sg.subgrid_id, sg.super_peer)))
            .collect();
        let region_powers = topo
            .regions
            .iter()
            .map(|r| (r.region_id, BTreeMap::new()))
            .collect();
        Self {
            registries,
            region_powers,
            seen_queries: BTreeMap::new(),
            next_query_id: 0,
        }
    }

    pub fn fresh_query_id(&mut self) -> u64 {
        let id = self.next_query_id;
        self.next_query_id += 1;
        id
    }

    pub fn registry(&self, sg: SubgridId) -> &Registry {
        &self.registries[&sg]
    }

    pub fn registry_mut(&mut self, sg: SubgridId) -> &mut Registry {
        self.registries.get_mut(&sg).expect("registry exists")
    }

    /// Register (or refresh) a member with its super-peer, then push the
    /// updated cumulative power to the region peer.
    pub fn register_node(
        &mut self,
        topo: &GridTopology,
        roles: &Roles,
        desc: ResourceDescription,
        trace: &mut EventTrace,
        time: f64,
    ) {
        let sg = topo.subgrid_of(desc.node_id).subgrid_id;
        let sp = roles.super_peer[&sg];
        let node = desc.node_id;
        if node != sp {
            trace.record(
                time,
                TraceKind::Message {
                    from: node,
                    to: sp,
                    tier: Tier::Intra,
                    label: "register".to_string(),
                    bytes: 0,
                    query_id: None,
                },
            );
            trace.record(
                time,
                TraceKind::Message {
                    from: sp,
                    to: node,
                    tier: Tier::Intra,
                    label: "register_ack".to_string(),
                    bytes: 0,
                    query_id: None,
                },
            );
        }
        let reg = self.registry_mut(sg);
        reg.upsert(desc);
        let version = reg.version;
        trace.record(time, TraceKind::NodeRegistered { subgrid: sg, node, version });
        self.push_power(topo, roles, sg, trace, time);
    }

    /// Eager cumulative-power refresh from super-peer to region peer.
    pub fn push_power(
        &mut self,
        topo: &GridTopology,
        roles: &Roles,
        sg: SubgridId,
        trace: &mut EventTrace,
        time: f64,
    ) {
        let power = aggregate_power(&self.registries[&sg]);
        let region = topo.region_of_subgrid(sg).region_id;
        let sp = roles.super_peer[&sg];
        let rp = roles.region_peer[&region];
        if sp != rp {
            trace.record(
                time,
                TraceKind::Message {
                    from: sp,
                    to: rp,
                    tier: Tier::Region,
                    label: "power_push".to_string(),
                    bytes: 0,
                    query_id: None,
                },
            );
        }
        self.region_powers
            .get_mut(&region)
            .expect("region exists")
            .insert(sg, power);
    }

    /// Full query path: local match at the origin's super-peer, forward to
    /// the region peer when the sub-grid cannot satisfy it, then P2P across
    /// the remaining region peers in ascending region id.
    pub fn resolve_query(
        &mut self,
        topo: &GridTopology,
        roles: &Roles,
        origin: NodeId,
        constraint: &QueryConstraint,
        trace: &mut EventTrace,
        time: f64,
    ) -> QueryResolution {
        let query_id = self.fresh_query_id();
        let mut res = QueryResolution {
            query_id,
            outcome: QueryOutcome::NotFound,
            hop_record: Vec::new(),
            messages_intra: 0,
            messages_region: 0,
            messages_inter_region: 0,
            regions_contacted: Vec::new(),
        };
        trace.record(time, TraceKind::QueryIssued { query_id, origin });

        let origin_sg = topo.subgrid_of(origin).subgrid_id;
        let origin_region = topo.region_of_subgrid(origin_sg).region_id;
        let sp = roles.super_peer[&origin_sg];
        let msg = |trace: &mut EventTrace,
                       from: NodeId,
                       to: NodeId,
                       tier: Tier,
                       label: &str,
                       counter: &mut u64| {
            trace.record(
                time,
                TraceKind::Message {
                    from,
                    to,
                    tier,
                    label: label.to_string(),
                    bytes: 0,
                    query_id: Some(query_id),
                },
            );
            *counter += 1;
        };

        if origin != sp {
            msg(trace, origin, sp, Tier::Intra, "query", &mut res.messages_intra);
        }
        res.hop_record.push((Tier::Intra, sp));

        // Tier 1: origin sub-grid.
        let matches = self.registries[&origin_sg].matching(constraint);
        if matches.len() as u32 >= constraint.count {
            if origin != sp {
                msg(trace, sp, origin, Tier::Intra, "query_result", &mut res.messages_intra);
            }
            res.outcome = QueryOutcome::Matches(matches);
            trace.record(
                time,
                TraceKind::QueryResolved {
                    query_id,
                    outcome: "local".to_string(),
                    matches: match &res.outcome {
                        QueryOutcome::Matches(m) => m.len() as u64,
                        QueryOutcome::NotFound => 0,
                    },
                },
            );
            return res;
        }

        // Tier 2: forward to the region peer.
        let rp = roles.region_peer[&origin_region];
        msg(trace, sp, rp, Tier::Region, "forward", &mut res.messages_region);
        res.hop_record.push((Tier::Region, rp));
        self.seen_queries
            .entry(origin_region)
            .or_default()
            .insert(query_id);

        let mut exclude = BTreeSet::from([origin_sg]);
        if let Some(found) = self.dispatch_within_region(
            topo, roles, origin_region, rp, constraint, query_id, &mut exclude, trace, time,
            &mut res,
        ) {
            res.outcome = QueryOutcome::Matches(found);
            trace.record(
                time,
                TraceKind::QueryResolved {
                    query_id,
                    outcome: "region".to_string(),
                    matches: match &res.outcome {
                        QueryOutcome::Matches(m) => m.len() as u64,
                        QueryOutcome::NotFound => 0,
                    },
                },
            );
            return res;
        }

        // Tier 3: other regions, one at a time, ascending region id, each at
        // most once per query id.
        let peer_regions: Vec<RegionId> = topo
            .regions
            .iter()
            .map(|r| r.region_id)
            .filter(|&r| r != origin_region)
            .collect();
        for region in peer_regions {
            let seen = self.seen_queries.entry(region).or_default();
            if !seen.insert(query_id) {
                continue; // at-most-once processing per region
            }
            let remote_rp = roles.region_peer[&region];
            msg(
                trace,
                rp,
                remote_rp,
                Tier::InterRegion,
                "forward",
                &mut res.messages_inter_region,
            );
            res.hop_record.push((Tier::InterRegion, remote_rp));
            res.regions_contacted.push(region);
            let mut remote_exclude = BTreeSet::new();
            if let Some(found) = self.dispatch_within_region(
                topo,
                roles,
                region,
                remote_rp,
                constraint,
                query_id,
                &mut remote_exclude,
                trace,
                time,
                &mut res,
            ) {
                msg(
                    trace,
                    remote_rp,
                    rp,
                    Tier::InterRegion,
                    "query_result",
                    &mut res.messages_inter_region,
                );
                res.outcome = QueryOutcome::Matches(found);
                trace.record(
                    time,
                    TraceKind::QueryResolved {
                        query_id,
                        outcome: "inter_region".to_string(),
                        matches: match &res.outcome {
                            QueryOutcome::Matches(m) => m.len() as u64,
                            QueryOutcome::NotFound => 0,
                        },
                    },
                );
                return res;
            }
            msg(
                trace,
                remote_rp,
                rp,
                Tier::InterRegion,
                "decline",
                &mut res.messages_inter_region,
            );
        }

        trace.record(
            time,
            TraceKind::QueryResolved {
                query_id,
                outcome: "not_found".to_string(),
                matches: 0,
            },
        );
        res
    }

    /// Region-tier dispatch with retry over next-best sub-grids: peaks can
    /// qualify a sub-grid whose registered nodes do not actually satisfy the
    /// constraint, in which case the sub-grid declines and the region peer
    /// tries the next candidate.
    #[allow(clippy::too_many_arguments)]
    fn dispatch_within_region(
        &mut self,
        _topo: &GridTopology,
        roles: &Roles,
        region: RegionId,
        rp: NodeId,
        constraint: &QueryConstraint,
        query_id: u64,
        exclude: &mut BTreeSet<SubgridId>,
        trace: &mut EventTrace,
        time: f64,
        res: &mut QueryResolution,
    ) -> Option<Vec<NodeId>> {
        loop {
            let target = region_dispatch(&self.region_powers[&region], constraint, exclude)?;
            exclude.insert(target);
            let target_sp = roles.super_peer[&target];
            if target_sp != rp {
                trace.record(
                    time,
                    TraceKind::Message {
                        from: rp,
                        to: target_sp,
                        tier: Tier::Region,
                        label: "dispatch".to_string(),
                        bytes: 0,
                        query_id: Some(query_id),
                    },
                );
                res.messages_region += 1;
            }
            res.hop_record.push((Tier::Region, target_sp));
            let matches = self.registries[&target].matching(constraint);
            let (label, hit) = if matches.len() as u32 >= constraint.count {
                ("query_result", true)
            } else {
                ("decline", false)
            };
            if target_sp != rp {
                trace.record(
                    time,
                    TraceKind::Message {
                        from: target_sp,
                        to: rp,
                        tier: Tier::Region,
                        label: label.to_string(),
                        bytes: 0,
                        query_id: Some(query_id),
                    },
                );
                res.messages_region += 1;
            }
            if hit {
                return Some(matches);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        form_regions, form_subgrids, GridTopology, LinkSpec, NodeSpec, QueryConstraint,
    };

    fn desc(node_id: NodeId, capability: f64, free_storage: u64) -> ResourceDescription {
        ResourceDescription {
            node_id,
            capability,
            owner_share: 1.0,
            running_jobs: 0,
            free_storage,
            timestamp: 0.0,
        }
    }

    /// Two regions; region 0 holds sub-grids {0, 1}, region 1 holds {2}.
    /// Sub-grid membership: {0,1}, {2,3}, {4,5}.
    fn two_region_topo() -> GridTopology {
        let mut topo = GridTopology {
            nodes: (0..6)
                .map(|i| NodeSpec {
                    node_id: i,
                    capability: 1e6 * (i + 1) as f64,
                    storage: 1000,
                    availability: 0.5 + 0.05 * i as f64,
                    owner_share: 1.0,
                })
                .collect(),
            links: vec![
                LinkSpec { endpoints: (0, 1), bandwidth: 1e6, latency: 0.001 },
                LinkSpec { endpoints: (2, 3), bandwidth: 1e6, latency: 0.001 },
                LinkSpec { endpoints: (4, 5), bandwidth: 1e6, latency: 0.001 },
                // Bridges: close between sg0/sg1 super-peers, far to sg2.
                LinkSpec { endpoints: (1, 3), bandwidth: 1e6, latency: 0.004 },
                LinkSpec { endpoints: (3, 5), bandwidth: 1e6, latency: 0.5 },
            ],
            subgrids: Vec::new(),
            regions: Vec::new(),
        };
        topo.subgrids = form_subgrids(&topo, 0.003);
        topo.regions = form_regions(&topo, 0.05);
        assert_eq!(topo.subgrids.len(), 3);
        assert_eq!(topo.regions.len(), 2);
        topo
    }

    fn bootstrap(topo: &GridTopology) -> (Overlay, Roles, EventTrace) {
        let roles = Roles::from_topology(topo);
        let mut overlay = Overlay::new(topo);
        let mut trace = EventTrace::default();
        for n in &topo.nodes {
            overlay.register_node(
                topo,
                &roles,
                desc(n.node_id, n.capability, n.storage),
                &mut trace,
                0.0,
            );
        }
        (overlay, roles, trace)
    }

    #[test]
    fn registration_counts_and_idempotence() {
        let topo = two_region_topo();
        let (mut overlay, roles, mut trace) = bootstrap(&topo);
        let sg = topo.subgrid_of(0).subgrid_id;
        let size = overlay.registry(sg).entries.len();
        let version = overlay.registry(sg).version;
        // Re-registration replaces, size unchanged, version bumped.
        overlay.register_node(&topo, &roles, desc(0, 5e6, 42), &mut trace, 1.0);
        assert_eq!(overlay.registry(sg).entries.len(), size);
        assert_eq!(overlay.registry(sg).version, version + 1);
        assert_eq!(overlay.registry(sg).entries[&0].free_storage, 42);
    }

    #[test]
    fn aggregate_power_sums() {
        let mut reg = Registry::new(0, 0);
        reg.upsert(desc(0, 1e7, 10));
        reg.upsert(desc(1, 2e7, 20));
        let p = aggregate_power(&reg);
        assert_eq!(p.peak_flops, 3e7);
        assert_eq!(p.peak_storage, 30);
        assert_eq!(p.member_count, 2);
    }

    #[test]
    fn aggregate_power_empty_and_single() {
        let mut reg = Registry::new(0, 0);
        let p = aggregate_power(&reg);
        assert_eq!(p.peak_flops, 0.0);
        assert_eq!(p.member_count, 0);
        reg.upsert(desc(3, 7e6, 9));
        let p = aggregate_power(&reg);
        assert_eq!(p.peak_flops, 7e6);
        assert_eq!(p.peak_storage, 9);
    }

    #[test]
    fn locally_satisfiable_query_stays_local() {
        let topo = two_region_topo();
        let (mut overlay, roles, _) = bootstrap(&topo);
        let mut trace = EventTrace::default();
        let c = QueryConstraint { min_capability: 1e4, min_storage: 0, count: 1 };
        let res = overlay.resolve_query(&topo, &roles, 0, &c, &mut trace, 0.0);
        assert!(matches!(res.outcome, QueryOutcome::Matches(_)));
        assert_eq!(res.messages_region, 0);
        assert_eq!(res.messages_inter_region, 0);
    }

    #[test]
    fn sibling_subgrid_reached_through_region_peer() {
        let topo = two_region_topo();
        let (mut overlay, roles, _) = bootstrap(&topo);
        let mut trace = EventTrace::default();
        // Node 3 (capability 4e6) only exists in sub-grid 1.
        let c = QueryConstraint { min_capability: 3.5e6, min_storage: 0, count: 1 };
        let res = overlay.resolve_query(&topo, &roles, 0, &c, &mut trace, 0.0);
        assert_eq!(res.outcome, QueryOutcome::Matches(vec![3]));
        assert!(res.messages_region >= 1);
        assert_eq!(res.messages_inter_region, 0);
        // Escalation never skips a tier.
        let tiers: Vec<Tier> = res.hop_record.iter().map(|&(t, _)| t).collect();
        assert_eq!(tiers[0], Tier::Intra);
        assert!(tiers[1..].iter().all(|&t| t != Tier::Intra));
    }

    #[test]
    fn unsatisfiable_query_contacts_each_region_once() {
        let topo = two_region_topo();
        let (mut overlay, roles, _) = bootstrap(&topo);
        let mut trace = EventTrace::default();
        let c = QueryConstraint { min_capability: 1e9, min_storage: 0, count: 1 };
        let res = overlay.resolve_query(&topo, &roles, 0, &c, &mut trace, 0.0);
        assert_eq!(res.outcome, QueryOutcome::NotFound);
        assert_eq!(res.regions_contacted, vec![1]);
    }

    #[test]
    fn inter_region_query_finds_remote_match() {
        let topo = two_region_topo();
        let (mut overlay, roles, _) = bootstrap(&topo);
        let mut trace = EventTrace::default();
        // Only node 5 (capability 6e6) satisfies; it lives in region 1.
        let c = QueryConstraint { min_capability: 5.5e6, min_storage: 0, count: 1 };
        let res = overlay.resolve_query(&topo, &roles, 0, &c, &mut trace, 0.0);
        assert_eq!(res.outcome, QueryOutcome::Matches(vec![5]));
        assert_eq!(res.regions_contacted, vec![1]);
        assert!(res.messages_inter_region >= 2);
    }

    #[test]
    fn region_dispatch_prefers_highest_peak() {
        let powers: BTreeMap<SubgridId, CumulativePower> = [
            (0, CumulativePower { subgrid_id: 0, peak_flops: 5e7, peak_storage: 100, member_count: 3 }),
            (1, CumulativePower { subgrid_id: 1, peak_flops: 9e7, peak_storage: 100, member_count: 3 }),
        ]
        .into_iter()
        .collect();
        let c = QueryConstraint { min_capability: 1e7, min_storage: 0, count: 1 };
        assert_eq!(region_dispatch(&powers, &c, &BTreeSet::new()), Some(1));
        assert_eq!(region_dispatch(&powers, &c, &BTreeSet::from([1])), Some(0));
        let hard = QueryConstraint { min_capability: 1e9, min_storage: 0, count: 1 };
        assert_eq!(region_dispatch(&powers, &hard, &BTreeSet::new()), None);
    }

    #[test]
    fn subgrid_matching_is_sound_and_complete() {
        let topo = two_region_topo();
        let (overlay, _, _) = bootstrap(&topo);
        let c = QueryConstraint { min_capability: 1.5e6, min_storage: 500, count: 1 };
        let reg = overlay.registry(0);
        let got = reg.matching(&c);
        let want: Vec<NodeId> = reg
            .entries
            .values()
            .filter(|d| d.capability >= c.min_capability && d.free_storage >= c.min_storage)
            .map(|d| d.node_id)
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn query_ids_never_reused() {
        let topo = two_region_topo();
        let (mut overlay, roles, _) = bootstrap(&topo);
        let mut trace = EventTrace::default();
        let c = QueryConstraint { min_capability: 1e4, min_storage: 0, count: 1 };
        let a = overlay.resolve_query(&topo, &roles, 0, &c, &mut trace, 0.0);
        let b = overlay.resolve_query(&topo, &roles, 0, &c, &mut trace, 0.0);
        assert_ne!(a.query_id, b.query_id);
    }
}
