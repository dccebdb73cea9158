//! The full grid simulation: job brokering through the overlay, transfer
//! and compute timing, failure injection with detection, elections,
//! registry regeneration from erasure shares, checkpoint/export cadence and
//! job recovery. One run is single-threaded and a pure function of its
//! configuration.
//!
//! Compute progress is tracked in integer FLOP units so that the
//! conservation identity executed = demand + redone holds exactly.

use std::collections::BTreeMap;

use crate::broker::{Bid, PolicyKind, PolicyState, ResourceDescription};
use crate::discovery::{region_dispatch, Overlay, Registry, Roles};
use crate::error::{GridError, Result};
use crate::model::{GridTopology, NodeId, SubgridId};
use crate::resilience::{
    bully_message_count, elect, CheckpointPolicy, ErasureParams, FailureHistory, Share,
};
use crate::resilience::erasure::{decode_registry, encode_registry};
use crate::simkernel::{
    EventKind, EventQueue, EventTrace, FailureSchedule, JobRecord, Router, Tier, TraceKind,
};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DetectorConfig {
    pub heartbeat_period: f64,
    pub missed_heartbeats: u32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            heartbeat_period: 1.0,
            missed_heartbeats: 3,
        }
    }
}

impl DetectorConfig {
    pub fn detection_timeout(&self) -> f64 {
        self.heartbeat_period * self.missed_heartbeats as f64
    }
}

pub struct SimConfig<'a> {
    pub topology: &'a GridTopology,
    pub jobs: &'a [crate::model::Job],
    pub policy: PolicyKind,
    pub failures: FailureSchedule,
    pub checkpoint: Option<CheckpointPolicy>,
    pub erasure: ErasureParams,
    pub detector: DetectorConfig,
    /// Recorded in job records; generation happened upstream.
    pub seed: u64,
    /// Nodes that skip the initial bootstrap and instead register at the
    /// given time via multicast rediscovery.
    pub late_joins: Vec<(NodeId, f64)>,
}

/// Outcome of one registry regeneration after a super-peer failure.
#[derive(Debug, Clone, PartialEq)]
pub struct Regeneration {
    pub subgrid: SubgridId,
    pub version: u64,
    pub new_owner: NodeId,
    pub shares_used: u32,
    /// Decoded bytes equal the registry as it stood when last encoded.
    pub matches_pre_failure: bool,
}

pub struct SimOutput {
    pub records: Vec<JobRecord>,
    pub trace: EventTrace,
    pub final_roles: Roles,
    pub final_registries: BTreeMap<SubgridId, Registry>,
    pub regenerations: Vec<Regeneration>,
}

const JOIN_MAX_RETRIES: u32 = 5;

/// Poll outcome: bids, decision time, message count, polled sub-grid.
type PollResult = (Vec<Bid>, f64, u64, SubgridId);

#[derive(Debug, Clone, PartialEq)]
enum Phase {
    Pending,
    Transferring { node: NodeId },
    Computing(Active),
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
struct Active {
    node: NodeId,
    /// FLOP/s granted to this job, fixed at compute start.
    rate: f64,
    /// Absolute progress in FLOP units at `active_since`.
    progress_banked: u64,
    active_since: f64,
    attempt_base: u64,
    completion_time: f64,
    ck_prev: f64,
    ck_prev2: f64,
}

struct JobState {
    job: crate::model::Job,
    flop_units: u64,
    epoch: u32,
    phase: Phase,
    start_time: Option<f64>,
    end_time: f64,
    exec_node: NodeId,
    exec_subgrid: SubgridId,
    checkpoints: u32,
    exports: u32,
    redone_units: u64,
    executed_units: u64,
    exported_progress: u64,
    export_valid: bool,
    /// Absolute progress at the most recent abort; consumed by the retry.
    fail_progress: u64,
    msgs_intra: u64,
    msgs_region: u64,
    msgs_inter: u64,
}

struct NodeState {
    alive: bool,
    registered: bool,
    running: u32,
    history: FailureHistory,
    join_attempts: u32,
}

struct Sim<'a> {
    cfg: SimConfig<'a>,
    router: Router,
    queue: EventQueue,
    trace: EventTrace,
    overlay: Overlay,
    roles: Roles,
    nodes: Vec<NodeState>,
    jobs: Vec<JobState>,
    policy: PolicyState,
    /// Encoded registry shares per sub-grid: the parameters used and which
    /// member holds which share.
    shares: BTreeMap<SubgridId, (ErasureParams, Vec<(NodeId, Share)>)>,
    regenerations: Vec<Regeneration>,
}

/// Run one complete simulation to quiescence.
pub fn run(cfg: SimConfig<'_>) -> Result<SimOutput> {
    cfg.failures.validate()?;
    cfg.erasure.validate()?;
    if let Some(ck) = &cfg.checkpoint {
        let v = ck.violations();
        if !v.is_empty() {
            return Err(GridError::Validation(v));
        }
    }
    let topo = cfg.topology;
    let router = Router::new(topo);
    let overlay = Overlay::new(topo);
    let roles = Roles::from_topology(topo);
    let nodes = topo
        .nodes
        .iter()
        .map(|_| NodeState {
            alive: true,
            registered: false,
            running: 0,
            history: FailureHistory::default(),
            join_attempts: 0,
        })
        .collect();
    let jobs = cfg
        .jobs
        .iter()
        .map(|j| JobState {
            job: j.clone(),
            flop_units: j.flop_demand.round() as u64,
            epoch: 0,
            phase: Phase::Pending,
            start_time: None,
            end_time: 0.0,
            exec_node: 0,
            exec_subgrid: 0,
            checkpoints: 0,
            exports: 0,
            redone_units: 0,
            executed_units: 0,
            exported_progress: 0,
            export_valid: false,
            fail_progress: 0,
            msgs_intra: 0,
            msgs_region: 0,
            msgs_inter: 0,
        })
        .collect();
    let policy = PolicyState::new(cfg.policy);
    let mut sim = Sim {
        router,
        queue: EventQueue::new(),
        trace: EventTrace::default(),
        overlay,
        roles,
        nodes,
        jobs,
        policy,
        shares: BTreeMap::new(),
        regenerations: Vec::new(),
        cfg,
    };
    sim.bootstrap()?;
    sim.run_loop()?;
    Ok(sim.finish())
}

impl<'a> Sim<'a> {
    fn topo(&self) -> &'a GridTopology {
        self.cfg.topology
    }

    fn alive(&self, n: NodeId) -> bool {
        self.nodes[n as usize].alive
    }

    fn bootstrap(&mut self) -> Result<()> {
        let topo = self.topo();
        let late: BTreeMap<NodeId, f64> = self.cfg.late_joins.iter().copied().collect();
        for node in &topo.nodes {
            if late.contains_key(&node.node_id) {
                continue;
            }
            let desc = ResourceDescription {
                node_id: node.node_id,
                capability: node.capability,
                owner_share: node.owner_share,
                running_jobs: 0,
                free_storage: node.storage,
                timestamp: 0.0,
            };
            self.overlay
                .register_node(topo, &self.roles, desc, &mut self.trace, 0.0);
            self.nodes[node.node_id as usize].registered = true;
        }
        for sg in &topo.subgrids {
            self.reencode_registry(sg.subgrid_id, 0.0);
        }
        for (node, time) in self.cfg.late_joins.clone() {
            self.queue.schedule(time, EventKind::NodeJoin { node_id: node })?;
        }
        for entry in self.cfg.failures.entries.clone() {
            self.queue
                .schedule(entry.fail_time, EventKind::NodeFail { node_id: entry.node_id })?;
            if let Some(rt) = entry.recover_time {
                self.queue
                    .schedule(rt, EventKind::NodeRecover { node_id: entry.node_id })?;
            }
        }
        for job in self.cfg.jobs {
            self.queue
                .schedule(job.submit_time, EventKind::JobSubmit { job_id: job.job_id })?;
        }
        Ok(())
    }

    fn run_loop(&mut self) -> Result<()> {
        let mut last_time = 0.0f64;
        while let Some(ev) = self.queue.pop_until(f64::INFINITY) {
            debug_assert!(ev.time >= last_time, "clock moved backward");
            last_time = ev.time;
            match ev.kind {
                EventKind::JobSubmit { job_id } => self.handle_submit(job_id, ev.time)?,
                EventKind::JobRetry { job_id } => self.handle_retry(job_id, ev.time)?,
                EventKind::TransferComplete { job_id, epoch } => {
                    self.handle_transfer_complete(job_id, epoch, ev.time)?
                }
                EventKind::ComputeComplete { job_id, epoch } => {
                    self.handle_compute_complete(job_id, epoch, ev.time)
                }
                EventKind::CheckpointDue { job_id, epoch } => {
                    self.handle_checkpoint(job_id, epoch, ev.time)?
                }
                EventKind::NodeFail { node_id } => self.handle_fail(node_id, ev.time)?,
                EventKind::NodeRecover { node_id } => self.handle_recover(node_id, ev.time)?,
                EventKind::DetectorFired { subgrid, suspect } => {
                    self.handle_detector(subgrid, suspect, ev.time)
                }
                EventKind::NodeJoin { node_id } => self.handle_join(node_id, ev.time)?,
                EventKind::Timer { .. } => {}
            }
        }
        Ok(())
    }

    fn finish(self) -> SimOutput {
        let records = self
            .jobs
            .iter()
            .map(|js| JobRecord {
                job_id: js.job.job_id,
                policy: self.cfg.policy.as_str().to_string(),
                class: js.job.class,
                seed: self.cfg.seed,
                submit_time: js.job.submit_time,
                start_time: js.start_time.unwrap_or(js.job.submit_time),
                end_time: js.end_time,
                node_id: js.exec_node,
                origin_subgrid: self.cfg.topology.subgrid_of(js.job.origin_node).subgrid_id,
                exec_subgrid: js.exec_subgrid,
                checkpoints_taken: js.checkpoints,
                exports_taken: js.exports,
                redone_flop: js.redone_units as f64,
                messages_intra: js.msgs_intra,
                messages_region: js.msgs_region,
                messages_inter_region: js.msgs_inter,
                completed: js.phase == Phase::Done,
            })
            .collect();
        SimOutput {
            records,
            trace: self.trace,
            final_roles: self.roles,
            final_registries: self.overlay.registries.clone(),
            regenerations: self.regenerations,
        }
    }

    // ── Share mirroring ────────────────────────────────────────────────────

    /// Re-encode a sub-grid's registry and hand one share to each of the
    /// first n live members. Called after every registry mutation.
    fn reencode_registry(&mut self, sg: SubgridId, _time: f64) {
        let registry = &self.overlay.registries[&sg];
        if registry.entries.is_empty() {
            self.shares.remove(&sg);
            return;
        }
        let live: Vec<NodeId> = self.topo().subgrids[sg as usize]
            .members
            .iter()
            .copied()
            .filter(|&m| self.alive(m) && self.nodes[m as usize].registered)
            .collect();
        if live.is_empty() {
            self.shares.remove(&sg);
            return;
        }
        let params = self.cfg.erasure.fit_to(live.len());
        let bytes = registry.to_bytes();
        let shares = encode_registry(&bytes, registry.version, &params)
            .expect("non-empty registry encodes");
        let holders: Vec<(NodeId, Share)> = live.into_iter().zip(shares).collect();
        self.shares.insert(sg, (params, holders));
    }

    // ── Brokering ──────────────────────────────────────────────────────────

    fn handle_submit(&mut self, job_id: u32, t: f64) -> Result<()> {
        let origin = self.jobs[job_id as usize].job.origin_node;
        self.trace
            .record(t, TraceKind::JobSubmitted { job_id, origin });
        if !self.alive(origin) {
            return self.defer_or_fail(job_id, origin, t);
        }
        self.broker_place(job_id, t, 0)
    }

    fn handle_retry(&mut self, job_id: u32, t: f64) -> Result<()> {
        if self.jobs[job_id as usize].phase != Phase::Pending {
            return Ok(());
        }
        let origin = self.jobs[job_id as usize].job.origin_node;
        if !self.alive(origin) {
            return self.defer_or_fail(job_id, origin, t);
        }
        let (resume_base, delta) = {
            let js = &mut self.jobs[job_id as usize];
            let resume_base = if js.export_valid { js.exported_progress } else { 0 };
            let delta = js.fail_progress.saturating_sub(resume_base);
            js.redone_units += delta;
            (resume_base, delta)
        };
        self.trace.record(
            t,
            TraceKind::JobRecovered {
                job_id,
                redone_flop: delta as f64,
                resumed_from_flop: resume_base as f64,
            },
        );
        self.broker_place(job_id, t, resume_base)
    }

    fn defer_or_fail(&mut self, job_id: u32, origin: NodeId, t: f64) -> Result<()> {
        let recover = self
            .cfg
            .failures
            .entries
            .iter()
            .filter(|e| e.node_id == origin)
            .filter_map(|e| e.recover_time)
            .find(|&rt| rt > t);
        match recover {
            Some(rt) => {
                // Parent is down: any exported checkpoint is gone with it.
                self.jobs[job_id as usize].export_valid = false;
                self.queue.schedule(rt, EventKind::JobRetry { job_id })?;
            }
            None => {
                let js = &mut self.jobs[job_id as usize];
                js.phase = Phase::Failed;
                js.end_time = t;
                self.trace.record(t, TraceKind::JobFailedPermanently { job_id });
            }
        }
        Ok(())
    }

    /// Poll one sub-grid's registered members on behalf of `requester`.
    /// Exactly one request and one response per live member; failed members
    /// leave an unanswered request and push the decision to the timeout.
    fn poll_subgrid(
        &mut self,
        requester: NodeId,
        sg: SubgridId,
        t: f64,
    ) -> (Vec<Bid>, f64, u64) {
        let member_list: Vec<NodeId> = self.overlay.registries[&sg].entries.keys().copied().collect();
        let mut bids = Vec::new();
        let mut messages = 0u64;
        let mut max_rtt = 0.0f64;
        let mut any_dead = false;
        for m in member_list {
            self.trace.record(
                t,
                TraceKind::Message {
                    from: requester,
                    to: m,
                    tier: Tier::Intra,
                    label: "poll_request".to_string(),
                    bytes: 0,
                    query_id: None,
                },
            );
            messages += 1;
            if !self.alive(m) {
                any_dead = true;
                continue;
            }
            let route = match self.router.route(requester, m) {
                Some(r) => r,
                None => continue,
            };
            let node = self.topo().node(m);
            let st = &self.nodes[m as usize];
            bids.push(Bid {
                description: ResourceDescription {
                    node_id: m,
                    capability: node.capability,
                    owner_share: node.owner_share,
                    running_jobs: st.running,
                    free_storage: node.storage,
                    timestamp: t,
                },
                measured_bandwidth: route.bottleneck,
                measured_rtt: route.rtt(),
            });
            self.trace.record(
                t + route.rtt(),
                TraceKind::Message {
                    from: m,
                    to: requester,
                    tier: Tier::Intra,
                    label: "poll_response".to_string(),
                    bytes: 0,
                    query_id: None,
                },
            );
            messages += 1;
            max_rtt = max_rtt.max(route.rtt());
        }
        let decision_time = if any_dead {
            t + self.cfg.detector.detection_timeout()
        } else {
            t + max_rtt
        };
        bids.sort_by_key(|b| b.description.node_id);
        (bids, decision_time, messages)
    }

    fn broker_place(&mut self, job_id: u32, t: f64, resume_base: u64) -> Result<()> {
        let origin = self.jobs[job_id as usize].job.origin_node;
        let origin_sg = self.topo().subgrid_of(origin).subgrid_id;

        let (bids, decision_time, messages, exec_sg) = {
            let (bids, dt, msgs) = self.poll_subgrid(origin, origin_sg, t);
            if !bids.is_empty() {
                (bids, dt, msgs, origin_sg)
            } else {
                match self.escalate_poll(job_id, origin, origin_sg, t)? {
                    Some(r) => r,
                    None => {
                        let js = &mut self.jobs[job_id as usize];
                        js.phase = Phase::Failed;
                        js.end_time = t;
                        self.trace.record(t, TraceKind::JobFailedPermanently { job_id });
                        return Ok(());
                    }
                }
            }
        };
        self.jobs[job_id as usize].msgs_intra += messages;

        let job = self.jobs[job_id as usize].job.clone();
        let chosen = self.policy.select(&job, &bids)?;
        self.nodes[chosen as usize].running += 1;
        {
            let js = &mut self.jobs[job_id as usize];
            js.exec_node = chosen;
            js.exec_subgrid = exec_sg;
            if js.start_time.is_none() {
                js.start_time = Some(decision_time);
            }
            js.epoch += 1;
        }
        self.trace.record(
            decision_time,
            TraceKind::JobPlaced {
                job_id,
                node: chosen,
                policy: self.cfg.policy.as_str().to_string(),
            },
        );
        self.jobs[job_id as usize].fail_progress = resume_base;

        // Input moves from the origin unless the job runs there.
        if job.byte_demand > 0 && chosen != origin {
            let dur = self.router.transfer_time(origin, chosen, job.byte_demand)?;
            self.trace.record(
                decision_time,
                TraceKind::TransferStarted {
                    job_id,
                    from: origin,
                    to: chosen,
                    bytes: job.byte_demand,
                },
            );
            let epoch = self.jobs[job_id as usize].epoch;
            self.jobs[job_id as usize].phase = Phase::Transferring { node: chosen };
            self.queue
                .schedule(decision_time + dur, EventKind::TransferComplete { job_id, epoch })?;
        } else {
            self.start_compute(job_id, chosen, decision_time, resume_base)?;
        }
        Ok(())
    }

    /// Origin sub-grid had no live registered member: region-tier dispatch
    /// to the best sibling sub-grid, then other regions in ascending id.
    fn escalate_poll(
        &mut self,
        job_id: u32,
        origin: NodeId,
        origin_sg: SubgridId,
        t: f64,
    ) -> Result<Option<PollResult>> {
        let job = self.jobs[job_id as usize].job.clone();
        let constraint = crate::model::QueryConstraint {
            min_capability: 0.0,
            min_storage: job.byte_demand,
            count: 1,
        };
        let topo = self.topo();
        let origin_region = topo.region_of_subgrid(origin_sg).region_id;
        let mut region_order: Vec<u32> = vec![origin_region];
        region_order.extend(
            topo.regions
                .iter()
                .map(|r| r.region_id)
                .filter(|&r| r != origin_region),
        );
        for (i, region) in region_order.into_iter().enumerate() {
            let powers = match self.overlay.region_powers.get(&region) {
                Some(p) => p.clone(),
                None => continue,
            };
            let mut exclude = std::collections::BTreeSet::from([origin_sg]);
            while let Some(target) = region_dispatch(&powers, &constraint, &exclude) {
                exclude.insert(target);
                let js = &mut self.jobs[job_id as usize];
                js.msgs_region += 2;
                if i > 0 {
                    js.msgs_inter += 2;
                }
                let (bids, dt, msgs) = self.poll_subgrid(origin, target, t);
                if !bids.is_empty() {
                    return Ok(Some((bids, dt, msgs, target)));
                }
                self.jobs[job_id as usize].msgs_intra += msgs;
            }
        }
        Ok(None)
    }

    // ── Compute, checkpoints, completion ───────────────────────────────────

    fn start_compute(
        &mut self,
        job_id: u32,
        node: NodeId,
        t: f64,
        attempt_base: u64,
    ) -> Result<()> {
        let spec = self.topo().node(node).clone();
        let concurrent = self.nodes[node as usize].running.saturating_sub(1);
        let rate = spec.effective_rate(concurrent);
        let (flop_units, job_flop) = {
            let js = &self.jobs[job_id as usize];
            (js.flop_units, js.job.flop_demand)
        };
        let remaining = flop_units - attempt_base;
        let completion_time = if remaining == 0 {
            t
        } else {
            t + remaining as f64 / rate
        };
        self.trace.record(
            t,
            TraceKind::ComputeStarted {
                job_id,
                node,
                rate,
                remaining_flop: remaining as f64,
            },
        );
        let _ = job_flop;
        let (ck_prev2, ck_prev) = match &self.cfg.checkpoint {
            Some(p) if remaining > 0 => p.seed_intervals(&self.nodes[node as usize].history),
            _ => (0.0, 0.0),
        };
        let epoch = {
            let js = &mut self.jobs[job_id as usize];
            js.epoch += 1;
            js.phase = Phase::Computing(Active {
                node,
                rate,
                progress_banked: attempt_base,
                active_since: t,
                attempt_base,
                completion_time,
                ck_prev,
                ck_prev2,
            });
            js.epoch
        };
        self.queue
            .schedule(completion_time, EventKind::ComputeComplete { job_id, epoch })?;
        if remaining > 0 {
            if let Some(policy) = self.cfg.checkpoint.clone() {
                let interval = policy.next_interval(ck_prev, ck_prev2);
                if let Phase::Computing(a) = &mut self.jobs[job_id as usize].phase {
                    a.ck_prev2 = a.ck_prev;
                    a.ck_prev = interval;
                }
                let due = t + interval;
                if due < completion_time {
                    self.queue
                        .schedule(due, EventKind::CheckpointDue { job_id, epoch })?;
                }
            }
        }
        Ok(())
    }

    fn handle_transfer_complete(&mut self, job_id: u32, epoch: u32, t: f64) -> Result<()> {
        if self.jobs[job_id as usize].epoch != epoch {
            return Ok(());
        }
        let node = match self.jobs[job_id as usize].phase {
            Phase::Transferring { node } => node,
            _ => return Ok(()),
        };
        self.trace.record(t, TraceKind::TransferComplete { job_id });
        let base = self.jobs[job_id as usize].fail_progress;
        self.start_compute(job_id, node, t, base)
    }

    fn handle_checkpoint(&mut self, job_id: u32, epoch: u32, t: f64) -> Result<()> {
        if self.jobs[job_id as usize].epoch != epoch {
            return Ok(());
        }
        let policy = match self.cfg.checkpoint.clone() {
            Some(p) => p,
            None => return Ok(()),
        };
        let (node, progress, number) = {
            let js = &mut self.jobs[job_id as usize];
            let active = match &mut js.phase {
                Phase::Computing(a) => a,
                _ => return Ok(()),
            };
            let earned = ((t - active.active_since) * active.rate) as u64;
            active.progress_banked = (active.progress_banked + earned).min(js.flop_units);
            active.completion_time += policy.checkpoint_cost;
            active.active_since = t + policy.checkpoint_cost;
            js.checkpoints += 1;
            js.epoch += 1;
            (active.node, active.progress_banked, js.checkpoints)
        };
        self.trace.record(
            t,
            TraceKind::CheckpointTaken {
                job_id,
                node,
                number,
                progress_flop: progress as f64,
            },
        );
        // Export to the parent on every E-th checkpoint; export traffic is
        // background (accounted, not blocking the job).
        if number % policy.export_every == 0 {
            let origin = self.jobs[job_id as usize].job.origin_node;
            if self.alive(origin) {
                let js = &mut self.jobs[job_id as usize];
                js.exports += 1;
                js.exported_progress = progress;
                js.export_valid = true;
                self.trace.record(
                    t,
                    TraceKind::CheckpointExported {
                        job_id,
                        node,
                        parent: origin,
                        number,
                        progress_flop: progress as f64,
                        bytes: policy.export_bytes,
                    },
                );
                self.trace.record(
                    t,
                    TraceKind::Message {
                        from: node,
                        to: origin,
                        tier: Tier::Intra,
                        label: "checkpoint_export".to_string(),
                        bytes: policy.export_bytes,
                        query_id: None,
                    },
                );
            }
        }
        let (epoch, completion_time, next_due) = {
            let js = &mut self.jobs[job_id as usize];
            let active = match &mut js.phase {
                Phase::Computing(a) => a,
                _ => unreachable!(),
            };
            let interval = policy.next_interval(active.ck_prev, active.ck_prev2);
            active.ck_prev2 = active.ck_prev;
            active.ck_prev = interval;
            (js.epoch, active.completion_time, t + policy.checkpoint_cost + interval)
        };
        self.queue
            .schedule(completion_time, EventKind::ComputeComplete { job_id, epoch })?;
        if next_due < completion_time {
            self.queue
                .schedule(next_due, EventKind::CheckpointDue { job_id, epoch })?;
        }
        Ok(())
    }

    fn handle_compute_complete(&mut self, job_id: u32, epoch: u32, t: f64) {
        if self.jobs[job_id as usize].epoch != epoch {
            return;
        }
        let js = &mut self.jobs[job_id as usize];
        let active = match &js.phase {
            Phase::Computing(a) => a.clone(),
            _ => return,
        };
        js.executed_units += js.flop_units - active.attempt_base;
        js.phase = Phase::Done;
        js.end_time = t;
        js.epoch += 1;
        let executed_total = js.executed_units;
        self.nodes[active.node as usize].running =
            self.nodes[active.node as usize].running.saturating_sub(1);
        self.trace.record(
            t,
            TraceKind::ComputeComplete {
                job_id,
                node: active.node,
                executed_flop: executed_total as f64,
            },
        );
    }

    // ── Failures, detection, elections ─────────────────────────────────────

    fn handle_fail(&mut self, node_id: NodeId, t: f64) -> Result<()> {
        if !self.alive(node_id) {
            return Ok(());
        }
        // Snapshot the registry before a super-peer goes down so that the
        // later regeneration can be checked against it.
        self.nodes[node_id as usize].alive = false;
        self.nodes[node_id as usize].registered = false;
        self.nodes[node_id as usize].history.record_failure(t);
        self.nodes[node_id as usize].running = 0;
        self.trace.record(t, TraceKind::NodeFailed { node: node_id });

        let timeout = self.cfg.detector.detection_timeout();
        // Abort everything touching the failed node.
        for job_id in 0..self.jobs.len() as u32 {
            let js = &mut self.jobs[job_id as usize];
            match &js.phase {
                Phase::Computing(a) if a.node == node_id => {
                    let active = a.clone();
                    let bound = if t >= active.active_since {
                        ((t - active.active_since) * active.rate) as u64
                    } else {
                        0
                    };
                    let progress = (active.progress_banked + bound).min(js.flop_units);
                    js.executed_units += progress - active.attempt_base;
                    js.fail_progress = progress;
                    js.phase = Phase::Pending;
                    js.epoch += 1;
                    self.queue.schedule(t + timeout, EventKind::JobRetry { job_id })?;
                }
                Phase::Transferring { node } if *node == node_id => {
                    js.phase = Phase::Pending;
                    js.epoch += 1;
                    self.queue.schedule(t + timeout, EventKind::JobRetry { job_id })?;
                }
                Phase::Transferring { node } if js.job.origin_node == node_id => {
                    // Transfer source died: the executor's slot is released
                    // and the job waits for the parent to come back.
                    let exec = *node;
                    js.phase = Phase::Pending;
                    js.epoch += 1;
                    self.nodes[exec as usize].running =
                        self.nodes[exec as usize].running.saturating_sub(1);
                    self.queue.schedule(t + timeout, EventKind::JobRetry { job_id })?;
                }
                _ => {}
            }
            // Exports stored on this node are lost with it.
            let js = &mut self.jobs[job_id as usize];
            if js.job.origin_node == node_id {
                js.export_valid = false;
            }
        }

        let sg = self.topo().subgrid_of(node_id).subgrid_id;
        self.queue
            .schedule(t + timeout, EventKind::DetectorFired { subgrid: sg, suspect: node_id })?;
        Ok(())
    }

    fn handle_recover(&mut self, node_id: NodeId, t: f64) -> Result<()> {
        self.nodes[node_id as usize].alive = true;
        self.nodes[node_id as usize].join_attempts = 0;
        self.trace.record(t, TraceKind::NodeRecovered { node: node_id });
        // Fresh member: must rediscover the super-peer and re-register.
        self.queue.schedule(t, EventKind::NodeJoin { node_id })?;
        Ok(())
    }

    fn handle_detector(&mut self, sg: SubgridId, suspect: NodeId, t: f64) {
        if self.alive(suspect) {
            return; // recovered before suspicion hardened
        }
        self.trace.record(t, TraceKind::FailureDetected { subgrid: sg, suspect });
        let was_sp = self.roles.super_peer[&sg] == suspect;
        if !was_sp {
            // A plain member: the super-peer prunes it.
            let sp = self.roles.super_peer[&sg];
            if self.alive(sp) && self.overlay.registries[&sg].entries.contains_key(&suspect) {
                self.overlay.registry_mut(sg).remove(suspect);
                self.reencode_registry(sg, t);
                self.overlay
                    .push_power(self.topo(), &self.roles, sg, &mut self.trace, t);
            }
            return;
        }

        // Super-peer down: elect, regenerate the registry from shares.
        let members = &self.topo().subgrids[sg as usize].members;
        // Only overlay members vote; a node that has not (re)registered is
        // invisible to its peers.
        let live: Vec<NodeId> = members
            .iter()
            .copied()
            .filter(|&m| m != suspect && self.alive(m) && self.nodes[m as usize].registered)
            .collect();
        self.trace.record(
            t,
            TraceKind::ElectionStarted { subgrid: sg, candidates: live.len() as u32 },
        );
        if live.is_empty() {
            // Sub-grid dissolved; the region peer drops it.
            let region = self.topo().region_of_subgrid(sg).region_id;
            if let Some(p) = self.overlay.region_powers.get_mut(&region) {
                p.remove(&sg);
            }
            return;
        }
        let candidates: Vec<(f64, NodeId)> = live
            .iter()
            .map(|&m| (self.topo().node(m).availability, m))
            .collect();
        let winner = elect(&candidates).expect("non-empty live set");
        let messages = bully_message_count(live.len());
        let round_delay = live
            .iter()
            .filter_map(|&m| self.router.route(winner, m))
            .map(|r| r.rtt())
            .fold(0.0f64, f64::max);
        self.roles.super_peer.insert(sg, winner);
        self.trace.record(
            t + 2.0 * round_delay,
            TraceKind::SuperPeerElected { subgrid: sg, leader: winner, messages },
        );

        // Regenerate from the erasure shares held by live members.
        let pre_failure = self.overlay.registries[&sg].clone();
        if let Some((params, holders)) = self.shares.get(&sg).cloned() {
            let available: Vec<Share> = holders
                .iter()
                .filter(|(holder, _)| self.alive(*holder))
                .map(|(_, s)| s.clone())
                .collect();
            match decode_registry(&available, &params) {
                Ok(bytes) => {
                    let mut regenerated =
                        Registry::from_bytes(&bytes).expect("decoded registry parses");
                    let matches = bytes == pre_failure.to_bytes();
                    regenerated.owner = winner;
                    self.trace.record(
                        t,
                        TraceKind::RegistryRegenerated {
                            subgrid: sg,
                            version: regenerated.version,
                            entries: regenerated.entries.len() as u64,
                            shares_used: params.k as u32,
                        },
                    );
                    self.regenerations.push(Regeneration {
                        subgrid: sg,
                        version: regenerated.version,
                        new_owner: winner,
                        shares_used: params.k as u32,
                        matches_pre_failure: matches,
                    });
                    self.overlay.registries.insert(sg, regenerated);
                }
                Err(_) => {
                    // Too few shares survived: degraded restart with an
                    // empty registry; members repopulate on rediscovery.
                    let mut fresh = Registry::new(sg, winner);
                    fresh.version = pre_failure.version;
                    self.overlay.registries.insert(sg, fresh);
                    self.regenerations.push(Regeneration {
                        subgrid: sg,
                        version: pre_failure.version,
                        new_owner: winner,
                        shares_used: 0,
                        matches_pre_failure: false,
                    });
                }
            }
        }
        // Drop the dead super-peer's own entry, then re-mirror.
        self.overlay.registry_mut(sg).remove(suspect);
        self.reencode_registry(sg, t);

        // Region peer role, if the suspect held it.
        let region = self.topo().region_of_subgrid(sg).region_id;
        if self.roles.region_peer[&region] == suspect {
            let sps: Vec<(f64, NodeId)> = self.topo().regions[region as usize]
                .subgrids
                .iter()
                .map(|&s| self.roles.super_peer[&s])
                .filter(|&sp| self.alive(sp))
                .map(|sp| (self.topo().node(sp).availability, sp))
                .collect();
            if let Some(rp) = elect(&sps) {
                self.roles.region_peer.insert(region, rp);
                self.trace
                    .record(t, TraceKind::RegionPeerElected { region, leader: rp });
                // Rebuild the cumulative-power cache at the new region peer.
                let subgrids = self.topo().regions[region as usize].subgrids.clone();
                for s in subgrids {
                    if self.alive(self.roles.super_peer[&s]) {
                        self.overlay
                            .push_power(self.topo(), &self.roles, s, &mut self.trace, t);
                    }
                }
            }
        } else {
            self.overlay
                .push_power(self.topo(), &self.roles, sg, &mut self.trace, t);
        }
    }

    fn handle_join(&mut self, node_id: NodeId, t: f64) -> Result<()> {
        if !self.alive(node_id) || self.nodes[node_id as usize].registered {
            return Ok(());
        }
        let sg = self.topo().subgrid_of(node_id).subgrid_id;
        self.trace.record(
            t,
            TraceKind::Message {
                from: node_id,
                to: node_id,
                tier: Tier::Intra,
                label: "multicast_discover".to_string(),
                bytes: 0,
                query_id: None,
            },
        );
        let sp = self.roles.super_peer[&sg];
        if self.alive(sp) {
            self.trace.record(
                t,
                TraceKind::Message {
                    from: sp,
                    to: node_id,
                    tier: Tier::Intra,
                    label: "discover_reply".to_string(),
                    bytes: 0,
                    query_id: None,
                },
            );
            let spec = self.topo().node(node_id);
            let desc = ResourceDescription {
                node_id,
                capability: spec.capability,
                owner_share: spec.owner_share,
                running_jobs: self.nodes[node_id as usize].running,
                free_storage: spec.storage,
                timestamp: t,
            };
            self.overlay
                .register_node(self.topo(), &self.roles, desc, &mut self.trace, t);
            self.nodes[node_id as usize].registered = true;
            self.nodes[node_id as usize].join_attempts = 0;
            self.reencode_registry(sg, t);
        } else {
            let attempts = {
                let st = &mut self.nodes[node_id as usize];
                st.join_attempts += 1;
                st.join_attempts
            };
            if attempts < JOIN_MAX_RETRIES {
                // Exponential backoff before the next broadcast.
                let backoff = f64::from(1u32 << attempts.min(6));
                self.queue.schedule(t + backoff, EventKind::NodeJoin { node_id })?;
            } else {
                // Everyone else is gone: become the sub-grid's super-peer.
                self.roles.super_peer.insert(sg, node_id);
                self.trace.record(
                    t,
                    TraceKind::SuperPeerElected { subgrid: sg, leader: node_id, messages: 0 },
                );
                let spec = self.topo().node(node_id);
                let desc = ResourceDescription {
                    node_id,
                    capability: spec.capability,
                    owner_share: spec.owner_share,
                    running_jobs: 0,
                    free_storage: spec.storage,
                    timestamp: t,
                };
                self.overlay
                    .register_node(self.topo(), &self.roles, desc, &mut self.trace, t);
                self.nodes[node_id as usize].registered = true;
                self.reencode_registry(sg, t);
            }
        }
        Ok(())
    }
}
