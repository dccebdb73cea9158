#!/usr/bin/env python3
"""Smoke test for the gridsim_py extension module.

Build the module first, then run this script from the repository root:

    cargo build -p gridsim-py
    python3 python/smoke_test.py
"""

import json
import os
import shutil
import sys
import tempfile

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def import_gridsim_py():
    for profile in ("debug", "release"):
        built = os.path.join(REPO_ROOT, "target", profile, "libgridsim_py.so")
        if os.path.exists(built):
            stage = tempfile.mkdtemp(prefix="gridsim_py_")
            shutil.copy(built, os.path.join(stage, "gridsim_py.so"))
            sys.path.insert(0, stage)
            import gridsim_py

            return gridsim_py
    sys.exit("libgridsim_py.so not found; run `cargo build -p gridsim-py` first")


def main():
    g = import_gridsim_py()

    # Platform generation round-trips through JSON.
    platform = {
        "node_count": 25,
        "capability_range": [1e4, 1e8],
        "bandwidth_range": [5.6e4, 8e7],
        "latency_range": [0.001, 0.05],
        "storage_range": [1_000_000, 1_000_000_000],
        "rtt_threshold": 10.0,
        "region_proximity_threshold": 10.0,
        "rng_seed": 1,
    }
    topo = json.loads(g.generate_platform_json(json.dumps(platform)))
    assert len(topo["nodes"]) == 25
    assert len(topo["subgrids"]) >= 1
    assert topo == json.loads(g.generate_platform_json(json.dumps(platform)))

    # Brokering: a close slow node beats a fast node behind a thin pipe
    # when the job is data-heavy.
    bids = [
        (0, 1e8, 1.0, 0, 5.6e4, 0.001),   # fast, dial-up link
        (1, 1e7, 1.0, 0, 8e7, 0.001),     # slower, fat link
    ]
    assert g.select_node("ncda", 1e9, 1_000_000_000, bids) == 1
    assert g.select_node("flops", 1e9, 1_000_000_000, bids) == 0
    est = g.estimate_completion(1e9, 0, 1e8, 1.0, 0, 8e7, 0.0)
    assert abs(est - 10.0) < 1e-12

    # Checkpoint interval recurrence and its fixed point.
    assert g.next_interval(0.5, 20.0, 10.0) == 15.0
    limit = g.interval_limit(0.5, 10.0, 20.0)
    prev2, prev = 10.0, 20.0
    for _ in range(200):
        prev2, prev = prev, g.next_interval(0.5, prev, prev2)
    assert abs(prev - limit) <= 1e-9 * limit

    # Erasure shares: any 2 of 4 reconstruct, 1 does not.
    data = bytes(range(251)) * 3
    shares = g.encode_shares(data, 2, 4)
    assert len(shares) == 4
    assert g.decode_shares([shares[1], shares[3]], 2, 4) == data
    try:
        g.decode_shares([shares[2]], 2, 4)
    except ValueError:
        pass
    else:
        raise AssertionError("decoding below threshold must fail")

    # A small end-to-end experiment.
    config = {
        "name": "smoke",
        "platform": platform,
        "workload": {"class": "hybrid", "count": 5, "submit": {"kind": "all_at_zero"}},
        "policies": ["ncda", "rr"],
        "seeds": [0, 1],
    }
    assert g.validate_experiment(json.dumps(config)) == []
    result = json.loads(g.run_experiment_json(json.dumps(config)))
    assert len(result["records"]) == 2 * 2 * 5
    assert all(r["completed"] for r in result["records"])
    assert {s["policy"] for s in result["summaries"]} == {"ncda", "rr"}
    csv_text = g.run_experiment_csv(json.dumps(config))
    assert csv_text.splitlines()[0].startswith("job_id,policy,class,seed,")
    assert len(csv_text.splitlines()) == 21

    bad = dict(config, policies=[], seeds=[])
    problems = g.validate_experiment(json.dumps(bad))
    assert len(problems) >= 2

    # Self-healing scenario.
    heal = json.loads(
        g.run_selfheal_json(
            json.dumps(
                {
                    "name": "smoke-heal",
                    "node_count": 20,
                    "seed": 3,
                    "fail_time": 50.0,
                    "join_time": 60.0,
                }
            )
        )
    )
    assert heal["new_super_peer"] == heal["expected_super_peer"]
    assert heal["join_registered"] is True
    assert heal["registry_regenerated"]["matches_pre_failure"] is True

    print("smoke test passed")


if __name__ == "__main__":
    main()
