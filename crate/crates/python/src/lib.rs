//! Python bindings: experiment configs go in as JSON strings, results come
//! back as JSON strings; the scalar helpers (policy selection, checkpoint
//! intervals, erasure shares) are exposed directly.

// #[pyfunction] expansion triggers this on every wrapped signature.
#![allow(clippy::useless_conversion)]

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use gridsim_core::broker::{self, Bid, PolicyKind, ResourceDescription};
use gridsim_core::experiment::{
    self, validate_config, write_csv, ExperimentConfig, SelfHealConfig,
};
use gridsim_core::model::{generate_platform, Job, JobClass, PlatformSpec};
use gridsim_core::resilience::{self, ErasureParams, Share};
use gridsim_core::GridError;

fn err(e: GridError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Generate a platform from a PlatformSpec JSON string; returns the full
/// topology (nodes, links, sub-grids, regions) as JSON.
#[pyfunction]
fn generate_platform_json(spec_json: &str) -> PyResult<String> {
    let spec: PlatformSpec = serde_json::from_str(spec_json).map_err(json_err)?;
    let topo = generate_platform(&spec).map_err(err)?;
    serde_json::to_string(&topo).map_err(json_err)
}

/// Validate an experiment config; returns the list of violations (empty
/// means the config is runnable).
#[pyfunction]
fn validate_experiment(config_json: &str) -> PyResult<Vec<String>> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(json_err)?;
    match validate_config(&cfg) {
        Ok(()) => Ok(vec![]),
        Err(GridError::Validation(v)) => Ok(v),
        Err(e) => Err(err(e)),
    }
}

/// Run a full experiment; returns `{"records": [...], "summaries": [...]}`
/// as JSON.
#[pyfunction]
fn run_experiment_json(config_json: &str) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(json_err)?;
    let out = experiment::run_experiment(&cfg).map_err(err)?;
    let value = serde_json::json!({
        "records": out.records,
        "summaries": out.summaries,
    });
    serde_json::to_string(&value).map_err(json_err)
}

/// Run an experiment and return the canonical results CSV text.
#[pyfunction]
fn run_experiment_csv(config_json: &str) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(json_err)?;
    let out = experiment::run_experiment(&cfg).map_err(err)?;
    let mut buf = Vec::new();
    write_csv(&out.records, &mut buf).map_err(err)?;
    String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Run the self-heal scenario; returns the report as JSON.
#[pyfunction]
fn run_selfheal_json(config_json: &str) -> PyResult<String> {
    let cfg: SelfHealConfig = serde_json::from_str(config_json).map_err(json_err)?;
    let (report, _out) = experiment::run_selfheal(&cfg).map_err(err)?;
    let value = serde_json::json!({
        "old_super_peer": report.old_super_peer,
        "new_super_peer": report.new_super_peer,
        "expected_super_peer": report.expected_super_peer,
        "late_node": report.late_node,
        "join_registered": report.join_registered,
        "registry_regenerated": report.regeneration.as_ref().map(|r| serde_json::json!({
            "subgrid": r.subgrid,
            "version": r.version,
            "new_owner": r.new_owner,
            "shares_used": r.shares_used,
            "matches_pre_failure": r.matches_pre_failure,
        })),
    });
    serde_json::to_string(&value).map_err(json_err)
}

/// One brokering decision. `bids` are tuples of
/// (node_id, capability, owner_share, running_jobs, bandwidth, rtt).
/// Round-robin is stateless here and picks the first bid.
#[pyfunction]
fn select_node(
    policy: &str,
    flop_demand: f64,
    byte_demand: u64,
    bids: Vec<(u32, f64, f64, u32, f64, f64)>,
) -> PyResult<u32> {
    let kind = PolicyKind::parse(policy).map_err(err)?;
    let job = Job {
        job_id: 0,
        class: JobClass::Hybrid,
        flop_demand,
        byte_demand,
        submit_time: 0.0,
        origin_node: 0,
    };
    let bids: Vec<Bid> = bids
        .into_iter()
        .map(|(node_id, capability, owner_share, running_jobs, bw, rtt)| Bid {
            description: ResourceDescription {
                node_id,
                capability,
                owner_share,
                running_jobs,
                free_storage: 0,
                timestamp: 0.0,
            },
            measured_bandwidth: bw,
            measured_rtt: rtt,
        })
        .collect();
    let mut state = broker::PolicyState::new(kind);
    state.select(&job, &bids).map_err(err)
}

/// Predicted completion time for one bid tuple.
#[pyfunction]
fn estimate_completion(
    flop_demand: f64,
    byte_demand: u64,
    capability: f64,
    owner_share: f64,
    running_jobs: u32,
    bandwidth: f64,
    rtt: f64,
) -> f64 {
    let job = Job {
        job_id: 0,
        class: JobClass::Hybrid,
        flop_demand,
        byte_demand,
        submit_time: 0.0,
        origin_node: 0,
    };
    let bid = Bid {
        description: ResourceDescription {
            node_id: 0,
            capability,
            owner_share,
            running_jobs,
            free_storage: 0,
            timestamp: 0.0,
        },
        measured_bandwidth: bandwidth,
        measured_rtt: rtt,
    };
    broker::estimate_completion(&job, &bid)
}

/// One step of the checkpoint-interval recurrence.
#[pyfunction]
fn next_interval(w: f64, i_prev: f64, i_prev2: f64) -> f64 {
    resilience::next_interval(w, i_prev, i_prev2)
}

/// Fixed point of the recurrence for 0 < w < 2.
#[pyfunction]
fn interval_limit(w: f64, i0: f64, i1: f64) -> PyResult<f64> {
    if w <= 0.0 || w >= 2.0 {
        return Err(PyValueError::new_err("w must lie in (0, 2)"));
    }
    Ok(((1.0 - w) * i0 + i1) / (2.0 - w))
}

/// Split `data` into n erasure shares, any k of which reconstruct it.
/// Returns the framed share bytes.
#[pyfunction]
fn encode_shares(py: Python<'_>, data: &[u8], k: u8, n: u8) -> PyResult<Vec<Py<PyBytes>>> {
    let params = ErasureParams { k, n };
    params.validate().map_err(err)?;
    let shares = resilience::encode_registry(data, 0, &params).map_err(err)?;
    Ok(shares
        .iter()
        .map(|s| PyBytes::new_bound(py, &s.to_bytes()).unbind())
        .collect())
}

/// Reconstruct the original bytes from any k framed shares.
#[pyfunction]
fn decode_shares(py: Python<'_>, shares: Vec<Vec<u8>>, k: u8, n: u8) -> PyResult<Py<PyBytes>> {
    let params = ErasureParams { k, n };
    params.validate().map_err(err)?;
    let parsed: Vec<Share> = shares
        .iter()
        .map(|b| Share::from_bytes(b))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let data = resilience::decode_registry(&parsed, &params).map_err(err)?;
    Ok(PyBytes::new_bound(py, &data).unbind())
}

#[pymodule]
fn gridsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_platform_json, m)?)?;
    m.add_function(wrap_pyfunction!(validate_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment_json, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment_csv, m)?)?;
    m.add_function(wrap_pyfunction!(run_selfheal_json, m)?)?;
    m.add_function(wrap_pyfunction!(select_node, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_completion, m)?)?;
    m.add_function(wrap_pyfunction!(next_interval, m)?)?;
    m.add_function(wrap_pyfunction!(interval_limit, m)?)?;
    m.add_function(wrap_pyfunction!(encode_shares, m)?)?;
    m.add_function(wrap_pyfunction!(decode_shares, m)?)?;
    Ok(())
}
