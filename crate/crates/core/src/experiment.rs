//! Experiment driver: config schema, per-(policy, seed) simulation runs,
//! canonical CSV/JSON output, and policy comparison. Output row order is
//! (policy, seed, job_id) exactly as configured, so repeated runs are
//! byte-identical.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::broker::PolicyKind;
use crate::error::{GridError, Result};
use crate::model::{
    generate_platform, generate_workload, GridTopology, JobClass, NodeId, PlatformSpec,
    SubmitPolicy,
};
use crate::resilience::{CheckpointPolicy, ErasureParams};
use crate::sim::{self, DetectorConfig, Regeneration, SimConfig, SimOutput};
use crate::simkernel::{FailureEntry, FailureSchedule, JobRecord};

/// Distinct sub-streams derived from one experiment seed; keeps platform,
/// workload and failure randomness independent.
fn substream(seed: u64, tag: u64) -> u64 {
    // splitmix64 over seed + tag
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_PLATFORM: u64 = 1;
const TAG_WORKLOAD: u64 = 2;
const TAG_FAILURES: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub class: JobClass,
    pub count: u32,
    #[serde(default)]
    pub submit: SubmitPolicy,
}

/// Random fail/recover injection: `count` distinct nodes fail at uniform
/// times inside `window`; each comes back after a uniform draw from
/// `downtime`, or never if `downtime` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureInjection {
    pub count: u32,
    pub window: [f64; 2],
    #[serde(default)]
    pub downtime: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureModel {
    #[default]
    None,
    Random(FailureInjection),
    Explicit(Vec<FailureEntry>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub platform: PlatformSpec,
    pub workload: WorkloadSpec,
    pub policies: Vec<PolicyKind>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub failures: FailureModel,
    #[serde(default)]
    pub checkpoint: Option<CheckpointPolicy>,
    #[serde(default)]
    pub erasure: ErasureParams,
    #[serde(default)]
    pub detector: DetectorConfig,
}

/// Every violation in one pass, not just the first.
pub fn validate_config(cfg: &ExperimentConfig) -> Result<()> {
    let mut v = cfg.platform.violations();
    if cfg.policies.is_empty() {
        v.push("at least one policy required".to_string());
    }
    if cfg.seeds.is_empty() {
        v.push("at least one seed required".to_string());
    }
    if cfg.workload.count == 0 {
        v.push("workload count must be >= 1".to_string());
    }
    if let SubmitPolicy::Poisson { mean_interarrival } = cfg.workload.submit {
        if mean_interarrival <= 0.0 {
            v.push("poisson mean_interarrival must be > 0".to_string());
        }
    }
    if let Some(ck) = &cfg.checkpoint {
        v.extend(ck.violations());
    }
    if let Err(GridError::Validation(ev)) = cfg.erasure.validate() {
        v.extend(ev);
    } else if let Err(e) = cfg.erasure.validate() {
        v.push(e.to_string());
    }
    if let FailureModel::Random(inj) = &cfg.failures {
        if inj.window[0] > inj.window[1] || inj.window[0] < 0.0 {
            v.push("failure window must be ordered and non-negative".to_string());
        }
        if let Some(d) = inj.downtime {
            if d[0] > d[1] || d[0] <= 0.0 {
                v.push("failure downtime must be ordered and positive".to_string());
            }
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(GridError::Validation(v))
    }
}

fn generate_failures(
    model: &FailureModel,
    topo: &GridTopology,
    seed: u64,
) -> FailureSchedule {
    match model {
        FailureModel::None => FailureSchedule::default(),
        FailureModel::Explicit(entries) => FailureSchedule {
            entries: entries.clone(),
        },
        FailureModel::Random(inj) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = topo.nodes.len() as u32;
            let count = inj.count.min(n.saturating_sub(1));
            let mut pool: Vec<NodeId> = (0..n).collect();
            let mut entries = Vec::new();
            for _ in 0..count {
                let idx = rng.gen_range(0..pool.len());
                let node_id = pool.swap_remove(idx);
                let fail_time = rng.gen_range(inj.window[0]..=inj.window[1]);
                let recover_time = inj
                    .downtime
                    .map(|d| fail_time + rng.gen_range(d[0]..=d[1]));
                entries.push(FailureEntry {
                    node_id,
                    fail_time,
                    recover_time,
                });
            }
            entries.sort_by(|a, b| a.fail_time.total_cmp(&b.fail_time));
            FailureSchedule { entries }
        }
    }
}

/// One simulation run for a (policy, seed) cell.
pub fn run_single(
    cfg: &ExperimentConfig,
    policy: PolicyKind,
    seed: u64,
) -> Result<SimOutput> {
    let mut platform = cfg.platform.clone();
    platform.rng_seed = substream(seed, TAG_PLATFORM);
    let topo = generate_platform(&platform)?;
    let jobs = generate_workload(
        cfg.workload.class,
        cfg.workload.count,
        cfg.workload.submit,
        topo.nodes.len() as u32,
        substream(seed, TAG_WORKLOAD),
    )?;
    let failures = generate_failures(&cfg.failures, &topo, substream(seed, TAG_FAILURES));
    sim::run(SimConfig {
        topology: &topo,
        jobs: &jobs,
        policy,
        failures,
        checkpoint: cfg.checkpoint.clone(),
        erasure: cfg.erasure,
        detector: cfg.detector,
        seed,
        late_joins: Vec::new(),
    })
}

pub struct ExperimentOutput {
    pub records: Vec<JobRecord>,
    pub summaries: Vec<SummaryRow>,
}

/// All (policy, seed) cells in configured order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    validate_config(cfg)?;
    let mut records = Vec::new();
    for &policy in &cfg.policies {
        for &seed in &cfg.seeds {
            let out = run_single(cfg, policy, seed)?;
            records.extend(out.records);
        }
    }
    let summaries = summarize(&records);
    Ok(ExperimentOutput { records, summaries })
}

// ── Output ──────────────────────────────────────────────────────────────────

pub const CSV_HEADER: [&str; 16] = [
    "job_id",
    "policy",
    "class",
    "seed",
    "submit_t",
    "start_t",
    "end_t",
    "node_id",
    "origin_subgrid",
    "exec_subgrid",
    "checkpoints",
    "exports",
    "redone_flop",
    "msgs_intra",
    "msgs_region",
    "msgs_inter",
];

pub fn write_csv<W: Write>(records: &[JobRecord], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(CSV_HEADER)?;
    for r in records {
        wtr.write_record([
            r.job_id.to_string(),
            r.policy.clone(),
            r.class.as_str().to_string(),
            r.seed.to_string(),
            format_f64(r.submit_time),
            format_f64(r.start_time),
            format_f64(r.end_time),
            r.node_id.to_string(),
            r.origin_subgrid.to_string(),
            r.exec_subgrid.to_string(),
            r.checkpoints_taken.to_string(),
            r.exports_taken.to_string(),
            format_f64(r.redone_flop),
            r.messages_intra.to_string(),
            r.messages_region.to_string(),
            r.messages_inter_region.to_string(),
        ])?;
    }
    wtr.flush().map_err(GridError::from)?;
    Ok(())
}

/// Shortest round-trippable decimal form; stable across runs by construction.
fn format_f64(x: f64) -> String {
    x.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub jobs: u64,
    pub completed: u64,
    pub failed: u64,
    pub mean_makespan: f64,
    pub median_makespan: f64,
    pub p95_makespan: f64,
    pub messages_intra: u64,
    pub messages_region: u64,
    pub messages_inter_region: u64,
    pub total_redone_flop: f64,
}

/// Per-policy aggregate over every seed. Makespan = end - submit over
/// completed jobs only.
pub fn summarize(records: &[JobRecord]) -> Vec<SummaryRow> {
    let mut by_policy: BTreeMap<&str, Vec<&JobRecord>> = BTreeMap::new();
    for r in records {
        by_policy.entry(&r.policy).or_default().push(r);
    }
    // Preserve first-appearance order of policies.
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.policy.as_str()) {
            order.push(&r.policy);
        }
    }
    order
        .into_iter()
        .map(|policy| {
            let rows = &by_policy[policy];
            let mut makespans: Vec<f64> = rows
                .iter()
                .filter(|r| r.completed)
                .map(|r| r.end_time - r.submit_time)
                .collect();
            makespans.sort_by(f64::total_cmp);
            let completed = makespans.len() as u64;
            SummaryRow {
                policy: policy.to_string(),
                jobs: rows.len() as u64,
                completed,
                failed: rows.len() as u64 - completed,
                mean_makespan: mean(&makespans),
                median_makespan: percentile(&makespans, 0.5),
                p95_makespan: percentile(&makespans, 0.95),
                messages_intra: rows.iter().map(|r| r.messages_intra).sum(),
                messages_region: rows.iter().map(|r| r.messages_region).sum(),
                messages_inter_region: rows.iter().map(|r| r.messages_inter_region).sum(),
                total_redone_flop: rows.iter().map(|r| r.redone_flop).sum(),
            }
        })
        .collect()
}

fn mean(sorted: &[f64]) -> f64 {
    if sorted.is_empty() {
        f64::NAN
    } else {
        sorted.iter().sum::<f64>() / sorted.len() as f64
    }
}

/// Nearest-rank percentile over a sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Mean makespan per (policy, seed) cell; the unit of pairwise policy
/// comparison.
pub fn policy_seed_means(records: &[JobRecord]) -> BTreeMap<(String, u64), f64> {
    let mut acc: BTreeMap<(String, u64), (f64, u64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.completed) {
        let e = acc.entry((r.policy.clone(), r.seed)).or_insert((0.0, 0));
        e.0 += r.end_time - r.submit_time;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (sum, n))| (k, sum / n as f64))
        .collect()
}

/// For each seed, which policy had the lowest mean makespan; ties go to the
/// earlier policy in `policies`.
pub fn winners_by_seed(
    records: &[JobRecord],
    policies: &[PolicyKind],
    seeds: &[u64],
) -> BTreeMap<u64, String> {
    let means = policy_seed_means(records);
    let mut out = BTreeMap::new();
    for &seed in seeds {
        let mut best: Option<(&str, f64)> = None;
        for p in policies {
            let name = p.as_str();
            if let Some(&m) = means.get(&(name.to_string(), seed)) {
                match best {
                    Some((_, bm)) if bm <= m => {}
                    _ => best = Some((name, m)),
                }
            }
        }
        if let Some((name, _)) = best {
            out.insert(seed, name.to_string());
        }
    }
    out
}

// ── Self-heal scenario ──────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfHealConfig {
    pub name: String,
    pub node_count: u32,
    pub seed: u64,
    pub fail_time: f64,
    pub join_time: f64,
}

impl Default for SelfHealConfig {
    fn default() -> Self {
        Self {
            name: "selfheal".to_string(),
            node_count: 20,
            seed: 0,
            fail_time: 50.0,
            join_time: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfHealReport {
    pub old_super_peer: NodeId,
    pub new_super_peer: NodeId,
    /// Independent argmax over (availability, node_id) of the survivors
    /// present at failure time.
    pub expected_super_peer: NodeId,
    pub regeneration: Option<Regeneration>,
    pub late_node: NodeId,
    pub join_registered: bool,
}

/// One sub-grid of `node_count` nodes; the super-peer is killed at
/// `fail_time` and a held-back node joins at `join_time` via multicast
/// rediscovery.
pub fn run_selfheal(cfg: &SelfHealConfig) -> Result<(SelfHealReport, SimOutput)> {
    let platform = PlatformSpec {
        node_count: cfg.node_count,
        capability_range: [1e4, 1e8],
        bandwidth_range: [5.6e4, 8e7],
        latency_range: [0.001, 0.05],
        storage_range: [1_000_000, 1_000_000_000],
        availability_range: [0.5, 1.0],
        owner_share_range: [1.0, 1.0],
        avg_degree: 4.0,
        // One sub-grid, one region.
        rtt_threshold: 10.0,
        region_proximity_threshold: 10.0,
        rng_seed: substream(cfg.seed, TAG_PLATFORM),
    };
    let topo = generate_platform(&platform)?;
    if topo.subgrids.len() != 1 {
        return Err(GridError::InvalidSpec(format!(
            "selfheal scenario expects one sub-grid, got {}",
            topo.subgrids.len()
        )));
    }
    let old_sp = topo.subgrids[0].super_peer;
    let late_node = (0..cfg.node_count)
        .rev()
        .find(|&n| n != old_sp)
        .expect("at least two nodes");
    let failures = FailureSchedule {
        entries: vec![FailureEntry {
            node_id: old_sp,
            fail_time: cfg.fail_time,
            recover_time: None,
        }],
    };
    let output = sim::run(SimConfig {
        topology: &topo,
        jobs: &[],
        policy: PolicyKind::Ncda,
        failures,
        checkpoint: None,
        erasure: ErasureParams::default(),
        detector: DetectorConfig::default(),
        seed: cfg.seed,
        late_joins: vec![(late_node, cfg.join_time)],
    })?;
    // Survivors at detection time: everyone but the dead super-peer and the
    // not-yet-joined late node (join_time > detection when configured so).
    let detection = cfg.fail_time + DetectorConfig::default().detection_timeout();
    let expected_super_peer = topo
        .nodes
        .iter()
        .filter(|n| n.node_id != old_sp)
        .filter(|n| n.node_id != late_node || cfg.join_time <= detection)
        .map(|n| (n.availability, n.node_id))
        .max_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
        .expect("survivors exist");
    let new_super_peer = output.final_roles.super_peer[&0];
    let join_registered = output.final_registries[&0].entries.contains_key(&late_node);
    let regeneration = output.regenerations.first().cloned();
    let report = SelfHealReport {
        old_super_peer: old_sp,
        new_super_peer,
        expected_super_peer,
        regeneration,
        late_node,
        join_registered,
    };
    Ok((report, output))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            name: "unit".to_string(),
            platform: PlatformSpec {
                node_count: 12,
                capability_range: [1e4, 1e8],
                bandwidth_range: [5.6e4, 8e7],
                latency_range: [0.001, 0.05],
                storage_range: [1_000_000, 1_000_000_000],
                availability_range: [0.5, 1.0],
                owner_share_range: [1.0, 1.0],
                avg_degree: 4.0,
                rtt_threshold: 10.0,
                region_proximity_threshold: 10.0,
                rng_seed: 0,
            },
            workload: WorkloadSpec {
                class: JobClass::Hybrid,
                count: 6,
                submit: SubmitPolicy::AllAtZero,
            },
            policies: vec![PolicyKind::Ncda, PolicyKind::Flops, PolicyKind::RoundRobin],
            seeds: vec![1, 2],
            failures: FailureModel::None,
            checkpoint: None,
            erasure: ErasureParams::default(),
            detector: DetectorConfig::default(),
        }
    }

    #[test]
    fn experiment_produces_every_cell() {
        let cfg = small_config();
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.records.len(), 3 * 2 * 6);
        assert!(out.records.iter().all(|r| r.completed));
        assert_eq!(out.summaries.len(), 3);
        for s in &out.summaries {
            assert_eq!(s.jobs, 12);
            assert_eq!(s.failed, 0);
            assert!(s.mean_makespan.is_finite() && s.mean_makespan > 0.0);
        }
    }

    #[test]
    fn records_are_in_canonical_order() {
        let cfg = small_config();
        let out = run_experiment(&cfg).unwrap();
        let mut expect = Vec::new();
        for p in &cfg.policies {
            for &s in &cfg.seeds {
                for j in 0..cfg.workload.count {
                    expect.push((p.as_str().to_string(), s, j));
                }
            }
        }
        let got: Vec<(String, u64, u32)> = out
            .records
            .iter()
            .map(|r| (r.policy.clone(), r.seed, r.job_id))
            .collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn csv_is_deterministic_and_has_fixed_header() {
        let cfg = small_config();
        let a = {
            let out = run_experiment(&cfg).unwrap();
            let mut buf = Vec::new();
            write_csv(&out.records, &mut buf).unwrap();
            buf
        };
        let b = {
            let out = run_experiment(&cfg).unwrap();
            let mut buf = Vec::new();
            write_csv(&out.records, &mut buf).unwrap();
            buf
        };
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("job_id,policy,class,seed,submit_t,start_t,end_t,node_id,origin_subgrid,exec_subgrid,checkpoints,exports,redone_flop,msgs_intra,msgs_region,msgs_inter\n"));
    }

    #[test]
    fn validation_collects_all_violations() {
        let mut cfg = small_config();
        cfg.policies.clear();
        cfg.seeds.clear();
        cfg.workload.count = 0;
        match validate_config(&cfg) {
            Err(GridError::Validation(v)) => assert!(v.len() >= 3, "{v:?}"),
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn random_failures_are_deterministic_per_seed() {
        let cfg = ExperimentConfig {
            failures: FailureModel::Random(FailureInjection {
                count: 3,
                window: [10.0, 100.0],
                downtime: Some([50.0, 100.0]),
            }),
            ..small_config()
        };
        let topo = generate_platform(&cfg.platform).unwrap();
        let a = generate_failures(&cfg.failures, &topo, 42);
        let b = generate_failures(&cfg.failures, &topo, 42);
        assert_eq!(a, b);
        let c = generate_failures(&cfg.failures, &topo, 43);
        assert_ne!(a, c);
        assert_eq!(a.entries.len(), 3);
        a.validate().unwrap();
        // Distinct nodes.
        let mut ids: Vec<_> = a.entries.iter().map(|e| e.node_id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        assert_eq!(percentile(&v, 0.5), 5.0);
        assert_eq!(percentile(&v, 0.95), 10.0);
        assert_eq!(percentile(&v[..1], 0.95), 1.0);
    }

    #[test]
    fn selfheal_round_trip() {
        let (report, out) = run_selfheal(&SelfHealConfig::default()).unwrap();
        assert_eq!(report.new_super_peer, report.expected_super_peer);
        assert!(report.join_registered);
        let regen = report.regeneration.expect("registry regenerated");
        assert!(regen.matches_pre_failure);
        assert!(regen.shares_used >= 1);
        assert!(out
            .final_registries[&0]
            .entries
            .contains_key(&report.late_node));
        assert!(!out
            .final_registries[&0]
            .entries
            .contains_key(&report.old_super_peer));
    }
}
