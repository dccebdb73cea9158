//! Domain types and seeded random generation of platforms, workloads,
//! sub-grid partitions and region groupings.
//!
//! Sub-grids are connected components of the link graph restricted to links
//! whose RTT is at or below a threshold; regions are connected components
//! over super-peer pairwise RTT. Both partitions designate a coordinator by
//! lexicographic (availability, node_id) maximum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{GridError, Result};

pub type NodeId = u32;
pub type SubgridId = u32;
pub type RegionId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: NodeId,
    /// Compute rate in FLOP/s.
    pub capability: f64,
    /// Free storage in bytes.
    pub storage: u64,
    /// Predicted up-fraction over the simulation horizon, in [0, 1].
    pub availability: f64,
    /// Fraction in (0, 1] of `capability` offered to the grid.
    pub owner_share: f64,
}

impl NodeSpec {
    /// Load-adjusted rate the grid actually gets from this node.
    pub fn effective_rate(&self, concurrent_jobs: u32) -> f64 {
        self.capability * self.owner_share / (1.0 + concurrent_jobs as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    /// Unordered endpoint pair; stored with the smaller id first.
    pub endpoints: (NodeId, NodeId),
    /// bit/s.
    pub bandwidth: f64,
    /// One-way latency in seconds.
    pub latency: f64,
}

impl LinkSpec {
    pub fn rtt(&self) -> f64 {
        2.0 * self.latency
    }
}

fn default_availability_range() -> [f64; 2] {
    [0.5, 1.0]
}
fn default_owner_share_range() -> [f64; 2] {
    [1.0, 1.0]
}
fn default_avg_degree() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformSpec {
    pub node_count: u32,
    /// FLOP/s, [lo, hi].
    pub capability_range: [f64; 2],
    /// bit/s, [lo, hi].
    pub bandwidth_range: [f64; 2],
    /// One-way seconds, [lo, hi].
    pub latency_range: [f64; 2],
    /// Bytes, [lo, hi].
    pub storage_range: [u64; 2],
    #[serde(default = "default_availability_range")]
    pub availability_range: [f64; 2],
    #[serde(default = "default_owner_share_range")]
    pub owner_share_range: [f64; 2],
    /// Average node degree of the random connected link graph.
    #[serde(default = "default_avg_degree")]
    pub avg_degree: f64,
    /// Links with rtt above this never join two nodes into one sub-grid.
    pub rtt_threshold: f64,
    /// Super-peers within this pairwise rtt share a region.
    pub region_proximity_threshold: f64,
    pub rng_seed: u64,
}

impl PlatformSpec {
    pub fn validate(&self) -> Result<()> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(GridError::InvalidSpec(violations.join("; ")))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.node_count == 0 {
            v.push("node_count must be >= 1".to_string());
        }
        let pos_ranges = [
            ("capability_range", self.capability_range),
            ("bandwidth_range", self.bandwidth_range),
            ("latency_range", self.latency_range),
            ("availability_range", self.availability_range),
            ("owner_share_range", self.owner_share_range),
        ];
        for (name, [lo, hi]) in pos_ranges {
            if lo > hi {
                v.push(format!("{name}: lo {lo} > hi {hi}"));
            }
        }
        if self.capability_range[0] <= 0.0 {
            v.push("capability_range lo must be > 0".to_string());
        }
        if self.bandwidth_range[0] <= 0.0 {
            v.push("bandwidth_range lo must be > 0".to_string());
        }
        if self.latency_range[0] < 0.0 {
            v.push("latency_range lo must be >= 0".to_string());
        }
        if self.storage_range[0] > self.storage_range[1] {
            v.push("storage_range: lo > hi".to_string());
        }
        if self.availability_range[0] < 0.0 || self.availability_range[1] > 1.0 {
            v.push("availability_range must lie in [0, 1]".to_string());
        }
        if self.owner_share_range[0] <= 0.0 || self.owner_share_range[1] > 1.0 {
            v.push("owner_share_range must lie in (0, 1]".to_string());
        }
        if self.rtt_threshold < 0.0 {
            v.push("rtt_threshold must be >= 0".to_string());
        }
        if self.region_proximity_threshold < 0.0 {
            v.push("region_proximity_threshold must be >= 0".to_string());
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobClass {
    Compute,
    Network,
    Hybrid,
}

impl JobClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            JobClass::Compute => "compute",
            JobClass::Network => "network",
            JobClass::Hybrid => "hybrid",
        }
    }
}

pub const GIGA_FLOP: f64 = 1e9;
pub const GIGA_BYTE: u64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: u32,
    pub class: JobClass,
    pub flop_demand: f64,
    pub byte_demand: u64,
    pub submit_time: f64,
    pub origin_node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGrid {
    pub subgrid_id: SubgridId,
    pub members: Vec<NodeId>,
    pub super_peer: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub region_id: RegionId,
    pub subgrids: Vec<SubgridId>,
    /// Node id of the super-peer acting as region peer.
    pub region_peer: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTopology {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub subgrids: Vec<SubGrid>,
    pub regions: Vec<Region>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryConstraint {
    /// FLOP/s.
    pub min_capability: f64,
    /// Bytes.
    pub min_storage: u64,
    /// Required number of matching nodes.
    pub count: u32,
}

impl GridTopology {
    pub fn node(&self, id: NodeId) -> &NodeSpec {
        &self.nodes[id as usize]
    }

    pub fn subgrid_of(&self, node: NodeId) -> &SubGrid {
        self.subgrids
            .iter()
            .find(|sg| sg.members.contains(&node))
            .expect("node belongs to a sub-grid")
    }

    pub fn region_of_subgrid(&self, sg: SubgridId) -> &Region {
        self.regions
            .iter()
            .find(|r| r.subgrids.contains(&sg))
            .expect("sub-grid belongs to a region")
    }

    /// Partition laws plus coordinator membership; used by tests and by
    /// config validation on externally supplied topologies.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for sg in &self.subgrids {
            for &m in &sg.members {
                if seen.insert(m, sg.subgrid_id).is_some() {
                    return Err(GridError::InvalidSpec(format!(
                        "node {m} appears in more than one sub-grid"
                    )));
                }
            }
            if !sg.members.contains(&sg.super_peer) {
                return Err(GridError::InvalidSpec(format!(
                    "super-peer {} not a member of sub-grid {}",
                    sg.super_peer, sg.subgrid_id
                )));
            }
        }
        if seen.len() != self.nodes.len() {
            return Err(GridError::InvalidSpec(
                "sub-grids do not cover the node set".to_string(),
            ));
        }
        let mut seen_sg = BTreeMap::new();
        for r in &self.regions {
            for &sg in &r.subgrids {
                if seen_sg.insert(sg, r.region_id).is_some() {
                    return Err(GridError::InvalidSpec(format!(
                        "sub-grid {sg} appears in more than one region"
                    )));
                }
            }
            let peer_sg = self.subgrid_of(r.region_peer);
            if !r.subgrids.contains(&peer_sg.subgrid_id) || peer_sg.super_peer != r.region_peer {
                return Err(GridError::InvalidSpec(format!(
                    "region peer {} is not a super-peer of region {}",
                    r.region_peer, r.region_id
                )));
            }
        }
        if seen_sg.len() != self.subgrids.len() {
            return Err(GridError::InvalidSpec(
                "regions do not cover the sub-grid set".to_string(),
            ));
        }
        Ok(())
    }
}

fn sample_f64(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..=range[1])
    }
}

fn sample_u64(rng: &mut impl Rng, range: [u64; 2]) -> u64 {
    rng.gen_range(range[0]..=range[1])
}

/// Generate a random connected platform. Pure in `spec` (seed included):
/// identical specs produce structurally identical topologies.
pub fn generate_platform(spec: &PlatformSpec) -> Result<GridTopology> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let n = spec.node_count as usize;

    let nodes: Vec<NodeSpec> = (0..n)
        .map(|i| NodeSpec {
            node_id: i as NodeId,
            capability: sample_f64(&mut rng, spec.capability_range),
            storage: sample_u64(&mut rng, spec.storage_range),
            availability: sample_f64(&mut rng, spec.availability_range),
            owner_share: sample_f64(&mut rng, spec.owner_share_range),
        })
        .collect();

    // Spanning tree first so the graph is connected, then extra edges up to
    // the target average degree.
    let mut links = Vec::new();
    let mut have = std::collections::BTreeSet::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        have.insert((j as NodeId, i as NodeId));
        links.push(LinkSpec {
            endpoints: (j as NodeId, i as NodeId),
            bandwidth: sample_f64(&mut rng, spec.bandwidth_range),
            latency: sample_f64(&mut rng, spec.latency_range),
        });
    }
    let max_edges = n * (n - 1) / 2;
    let target_edges = ((n as f64 * spec.avg_degree / 2.0).round() as usize).min(max_edges);
    let mut attempts = 0usize;
    while links.len() < target_edges && attempts < target_edges * 20 {
        attempts += 1;
        let a = rng.gen_range(0..n) as NodeId;
        let b = rng.gen_range(0..n) as NodeId;
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if !have.insert(key) {
            continue;
        }
        links.push(LinkSpec {
            endpoints: key,
            bandwidth: sample_f64(&mut rng, spec.bandwidth_range),
            latency: sample_f64(&mut rng, spec.latency_range),
        });
    }

    let mut topo = GridTopology {
        nodes,
        links,
        subgrids: Vec::new(),
        regions: Vec::new(),
    };
    topo.subgrids = form_subgrids(&topo, spec.rtt_threshold);
    topo.regions = form_regions(&topo, spec.region_proximity_threshold);
    Ok(topo)
}

/// Arrival rule for generated workloads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubmitPolicy {
    /// All jobs submitted at t = 0 (batch).
    #[default]
    AllAtZero,
    /// Poisson arrivals with the given mean inter-arrival time in seconds.
    Poisson { mean_interarrival: f64 },
}

pub fn generate_workload(
    class: JobClass,
    count: u32,
    submit_policy: SubmitPolicy,
    node_count: u32,
    rng_seed: u64,
) -> Result<Vec<Job>> {
    if count == 0 {
        return Err(GridError::InvalidSpec("job count must be >= 1".to_string()));
    }
    if node_count == 0 {
        return Err(GridError::InvalidSpec(
            "workload needs at least one origin node".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (flop, bytes) = match class {
        JobClass::Compute => (GIGA_FLOP, 0),
        JobClass::Network => (0.0, GIGA_BYTE),
        JobClass::Hybrid => (GIGA_FLOP, GIGA_BYTE),
    };
    let mut t = 0.0;
    let jobs = (0..count)
        .map(|i| {
            let submit_time = match submit_policy {
                SubmitPolicy::AllAtZero => 0.0,
                SubmitPolicy::Poisson { mean_interarrival } => {
                    // Inverse-CDF exponential draw.
                    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                    t += -mean_interarrival * u.ln();
                    t
                }
            };
            Job {
                job_id: i,
                class,
                flop_demand: flop,
                byte_demand: bytes,
                submit_time,
                origin_node: rng.gen_range(0..node_count),
            }
        })
        .collect();
    Ok(jobs)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Lexicographic (availability, node_id) maximum over a member set.
pub fn most_available(nodes: &[&NodeSpec]) -> NodeId {
    nodes
        .iter()
        .max_by(|a, b| {
            a.availability
                .total_cmp(&b.availability)
                .then(a.node_id.cmp(&b.node_id))
        })
        .expect("non-empty member set")
        .node_id
}

/// Connected components of the link graph keeping only links with
/// rtt <= threshold. Each component elects its most available member as
/// super-peer.
pub fn form_subgrids(topo: &GridTopology, rtt_threshold: f64) -> Vec<SubGrid> {
    let n = topo.nodes.len();
    let mut uf = UnionFind::new(n);
    for link in &topo.links {
        if link.rtt() <= rtt_threshold {
            uf.union(link.endpoints.0 as usize, link.endpoints.1 as usize);
        }
    }
    let mut components: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for id in 0..n {
        components.entry(uf.find(id)).or_default().push(id as NodeId);
    }
    components
        .into_values()
        .enumerate()
        .map(|(idx, members)| {
            let refs: Vec<&NodeSpec> = members.iter().map(|&m| topo.node(m)).collect();
            SubGrid {
                subgrid_id: idx as SubgridId,
                super_peer: most_available(&refs),
                members,
            }
        })
        .collect()
}

/// Group sub-grids whose super-peers sit within `proximity_threshold` rtt of
/// each other (transitively). RTT between super-peers is 2x the
/// shortest-latency path distance through the full link graph.
pub fn form_regions(topo: &GridTopology, proximity_threshold: f64) -> Vec<Region> {
    let m = topo.subgrids.len();
    let router = crate::simkernel::Router::new(topo);
    let mut uf = UnionFind::new(m);
    for i in 0..m {
        for j in (i + 1)..m {
            let a = topo.subgrids[i].super_peer;
            let b = topo.subgrids[j].super_peer;
            if let Some(route) = router.route(a, b) {
                if 2.0 * route.latency <= proximity_threshold {
                    uf.union(i, j);
                }
            }
        }
    }
    let mut components: BTreeMap<usize, Vec<SubgridId>> = BTreeMap::new();
    for i in 0..m {
        components
            .entry(uf.find(i))
            .or_default()
            .push(topo.subgrids[i].subgrid_id);
    }
    components
        .into_values()
        .enumerate()
        .map(|(idx, subgrids)| {
            let peers: Vec<&NodeSpec> = subgrids
                .iter()
                .map(|&sg| topo.node(topo.subgrids[sg as usize].super_peer))
                .collect();
            Region {
                region_id: idx as RegionId,
                region_peer: most_available(&peers),
                subgrids,
            }
        })
        .collect()
}
