import json
import subprocess
import sys

import numpy as np
import pytest

from droopkit import fixtures
from droopkit.cli import (
    grid_from_json,
    grid_to_json,
    hours_from_csv,
    hours_to_csv,
    load_droops,
    main,
)


@pytest.fixture
def grid_file(tmp_path, island):
    path = tmp_path / "grid.json"
    path.write_text(json.dumps(grid_to_json(island), indent=2) + "\n")
    return path


@pytest.fixture
def hours_file(tmp_path):
    hours = fixtures.year_hours(n_hours=6, seed=2)
    path = tmp_path / "hours.csv"
    path.write_text(hours_to_csv(hours))
    return path


def test_grid_json_round_trip(island):
    doc = grid_to_json(island)
    back = grid_from_json(doc)
    assert back.ids == island.ids
    assert np.allclose(back.p_ref, island.p_ref, atol=1e-12)
    assert back.network.edges == island.network.edges
    assert grid_to_json(back) == doc


def test_hours_csv_rejects_wrong_header():
    from droopkit.core import ScenarioError

    with pytest.raises(ScenarioError):
        hours_from_csv("hour,wind\n1,2\n", fixtures.COUNTRIES)
    with pytest.raises(ScenarioError):
        hours_from_csv("", fixtures.COUNTRIES)


def test_hours_csv_round_trip():
    hours = fixtures.year_hours(n_hours=4, seed=1)
    text = hours_to_csv(hours)
    back = hours_from_csv(text, fixtures.COUNTRIES)
    assert len(back) == 4
    assert back[2].wind_mw == pytest.approx(hours[2].wind_mw, rel=1e-12)
    assert np.allclose(back[0].offered_mw, hours[0].offered_mw)
    assert back[0].bids == hours[0].bids


def test_solve_droops_writes_solution_and_exit_zero(grid_file, tmp_path, island):
    out = tmp_path / "droops.json"
    rc = main(["solve-droops", "--grid", str(grid_file), "--alpha", "600",
               "--backend", "oracle", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["status"] == "optimal"
    assert doc["alpha"] == 600.0
    assert len(doc["x"]) == 6
    assert doc["residual"] <= 1e-9
    asn = load_droops(out, island)
    assert asn.alpha == pytest.approx(600.0, abs=1e-6)


def test_solve_droops_infeasible_exit_two(tmp_path, island):
    # everyone pinned at the limit: no post-fault headroom anywhere
    doc = grid_to_json(island)
    for conv in doc["converters"]:
        conv["p_ref_mw"] = 1757.5
    doc["wind"] = [{"node": "WF1", "p_mw": 6 * 1757.5}]
    grid = tmp_path / "loaded.json"
    grid.write_text(json.dumps(doc))
    out = tmp_path / "droops.json"
    rc = main(["solve-droops", "--grid", str(grid), "--out", str(out)])
    assert rc == 2
    assert json.loads(out.read_text())["status"] == "infeasible"


def test_solve_droops_unreachable_alpha_exit_two(grid_file, tmp_path):
    out = tmp_path / "droops.json"
    rc = main(["solve-droops", "--grid", str(grid_file), "--alpha", "50", "--out", str(out)])
    assert rc == 2
    assert json.loads(out.read_text())["status"] == "infeasible"


def test_check_n1_exit_codes(grid_file, tmp_path):
    droops = tmp_path / "droops.json"
    assert main(["solve-droops", "--grid", str(grid_file), "--out", str(droops)]) == 0
    out = tmp_path / "n1.csv"
    assert main(["check-n1", "--grid", str(grid_file), "--droops", str(droops),
                 "--out", str(out)]) == 0
    text = out.read_text()
    assert text.startswith("outage_id,converter_id,p_pre_mw,p_post_mw,limit_mw,violation_mw,ssfd_hz")
    assert ",0," in text or ",0\n" in text  # no violations anywhere
    # equal gains on the loaded island are insecure
    out2 = tmp_path / "n1eq.csv"
    assert main(["check-n1", "--grid", str(grid_file), "--alpha", "600",
                 "--out", str(out2)]) == 3


def test_check_n1_accepts_droops_with_permuted_ids(grid_file, tmp_path, island):
    droops = tmp_path / "droops.json"
    main(["solve-droops", "--grid", str(grid_file), "--out", str(droops)])
    doc = json.loads(droops.read_text())
    order = [5, 3, 0, 1, 2, 4]
    doc["ids"] = [doc["ids"][i] for i in order]
    doc["x"] = [doc["x"][i] for i in order]
    shuffled = tmp_path / "shuffled.json"
    shuffled.write_text(json.dumps(doc))
    asn = load_droops(shuffled, island)
    ref = load_droops(droops, island)
    assert np.allclose(asn.x, ref.x)


def test_h2_output_matches_closed_form_for_equal_gains(grid_file, tmp_path):
    out = tmp_path / "h2.json"
    rc = main(["h2", "--grid", str(grid_file), "--alpha", "600", "--tau", "0.02",
               "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["equal_gain_closed_form"] == pytest.approx(5 * 0.01**2 / 0.04, rel=1e-9)
    assert doc["h2_squared"] == pytest.approx(doc["equal_gain_closed_form"], rel=1e-8)


def test_simulate_outage_csv_tail_matches_algebra(grid_file, tmp_path, island, equal600):
    from droopkit.security import post_fault_flows

    out = tmp_path / "traj.csv"
    rc = main(["simulate", "--grid", str(grid_file), "--alpha", "600",
               "--dt", "1e-3", "--t-end", "150", "--event", "outage:UK@0.5",
               "--out", str(out)])
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    header = lines[1].split(",")
    tail = dict(zip(header, lines[-1].split(",")))
    expect = post_fault_flows(equal600, island, "UK")
    survivors = [cid for cid in island.ids if cid != "UK"]
    for cid, val in zip(survivors, expect):
        assert float(tail[f"p_pu_{cid}"]) == pytest.approx(val, abs=1e-6)
    assert tail["p_pu_UK"] == "0"
    assert tail["freq_pu_UK"] == "nan"


def test_market_loop_outputs(grid_file, hours_file, tmp_path):
    out = tmp_path / "mkt"
    rc = main(["market-loop", "--grid", str(grid_file), "--hours", str(hours_file),
               "--policy", "adaptive", "--out", str(out)])
    assert rc == 0
    caps = (out / "capacities.csv").read_text().strip().splitlines()
    assert caps[0] == "hour,link,capacity_mw,flow_mw,reduced_mw,secure"
    assert len(caps) == 1 + 6 * 6
    summary = json.loads((out / "summary.json").read_text())
    assert summary["policy"] == "adaptive"
    assert set(summary["hours_at_full_capacity"]) == set(fixtures.COUNTRIES)
    assert summary["hours"] == 6


def test_precision_limited_exit_four(grid_file, tmp_path, monkeypatch):
    import droopkit.cli as cli_mod
    from droopkit.droop_opt import DroopSolution

    def fake_solve_problem(problem, backend="oracle", **kw):
        return DroopSolution("precision-limited", None, None, 0.5)

    monkeypatch.setattr(cli_mod, "solve_problem", fake_solve_problem)
    out = tmp_path / "droops.json"
    rc = main(["solve-droops", "--grid", str(grid_file), "--out", str(out)])
    assert rc == 4
    assert json.loads(out.read_text())["status"] == "precision-limited"


def test_usage_errors_exit_one(tmp_path):
    assert main(["solve-droops", "--grid", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "x.json")]) == 1


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "droopkit.cli", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "solve-droops" in proc.stdout
