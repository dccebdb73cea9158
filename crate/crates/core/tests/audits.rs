//! Cross-cutting trace audits over a failure-heavy run: nothing executes on
//! a dead node, and job records keep their time ordering.

use gridsim_core::broker::PolicyKind;
use gridsim_core::experiment::{
    run_single, ExperimentConfig, FailureInjection, FailureModel, WorkloadSpec,
};
use gridsim_core::model::{JobClass, PlatformSpec, SubmitPolicy};
use gridsim_core::resilience::{CheckpointPolicy, ErasureParams};
use gridsim_core::sim::DetectorConfig;
use gridsim_core::simkernel::TraceKind;

fn failure_heavy_config() -> ExperimentConfig {
    ExperimentConfig {
        name: "audit".to_string(),
        platform: PlatformSpec {
            node_count: 30,
            capability_range: [1e7, 1e8],
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
            class: JobClass::Compute,
            count: 60,
            submit: SubmitPolicy::Poisson { mean_interarrival: 0.5 },
        },
        policies: vec![PolicyKind::Ncda],
        seeds: vec![0, 1, 2],
        failures: FailureModel::Random(FailureInjection {
            count: 8,
            window: [5.0, 90.0],
            downtime: Some([20.0, 50.0]),
        }),
        checkpoint: Some(CheckpointPolicy {
            w: 0.5,
            i0: 3.0,
            i1: 3.0,
            export_every: 3,
            checkpoint_cost: 0.05,
            min_interval: 1.0,
            max_interval: 1e6,
            export_bytes: 1_000_000,
            young_seed: false,
        }),
        erasure: ErasureParams::default(),
        detector: DetectorConfig::default(),
    }
}

#[test]
fn no_execution_on_dead_nodes() {
    let cfg = failure_heavy_config();
    for &seed in &cfg.seeds {
        let out = run_single(&cfg, PolicyKind::Ncda, seed).unwrap();
        // Reconstruct each node's down intervals from the trace itself.
        let down_at = |node: u32, t: f64| -> bool {
            let mut down = false;
            for ev in &out.trace.events {
                if ev.time > t {
                    break;
                }
                match ev.kind {
                    TraceKind::NodeFailed { node: n } if n == node => down = true,
                    TraceKind::NodeRecovered { node: n } if n == node => down = false,
                    _ => {}
                }
            }
            down
        };
        for ev in &out.trace.events {
            match &ev.kind {
                TraceKind::ComputeStarted { node, .. }
                | TraceKind::CheckpointTaken { node, .. }
                | TraceKind::ComputeComplete { node, .. } => {
                    assert!(
                        !down_at(*node, ev.time),
                        "seed {seed}: activity on dead node {node} at t={}",
                        ev.time
                    );
                }
                _ => {}
            }
        }
    }
}

#[test]
fn job_record_time_ordering_holds() {
    let cfg = failure_heavy_config();
    for &seed in &cfg.seeds {
        let out = run_single(&cfg, PolicyKind::Ncda, seed).unwrap();
        for r in &out.records {
            assert!(r.start_time >= r.submit_time, "{r:?}");
            if r.completed {
                assert!(r.end_time >= r.start_time, "{r:?}");
            }
            assert_eq!(r.seed, seed);
        }
        // Failures with recovery mean every job eventually finishes here.
        assert!(out.records.iter().all(|r| r.completed));
    }
}
