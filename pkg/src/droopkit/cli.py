"""Command-line front end and file formats.

Subcommands::

    solve-droops   grid JSON -> droops JSON (exit 0 optimal, 2 infeasible,
                   4 precision-limited)
    check-n1       grid + droops -> contingency CSV (exit 0 secure, 3 not)
    h2             grid + droops -> norms JSON
    simulate       grid + droops + events -> trajectory CSV
    market-loop    grid + hours CSV -> capacities CSV + summary JSON

Grid files are JSON with powers in megawatts::

    {"base": {"s_base_mva": 1850.0, "f_nom_hz": 50.0, "omega_ref": 1.0},
     "converters": [{"id": "UK", "rating_mva": 1850.0, "p_ref_mw": 1740.0,
                     "p_max_pu": 0.95, "x_min": 10.0}, ...],
     "wind": [{"node": "WF1", "p_mw": 2376.0}, ...],
     "network": {"nodes": [...], "edges": [["UK", "island", 10.0], ...],
                 "grounded_node": "island"}}

``network`` may be omitted: the default is the star collection grid.  Hours
files are CSV with columns ``hour,wind_mw,cap_<LINK>...,bid_fixture``.  All
numbers are serialized with 12 significant digits and outputs are
byte-stable for identical inputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fixtures
from .core import (
    Converter,
    DroopAssignment,
    GridScenario,
    NetworkGraph,
    ScenarioError,
    SystemBase,
    validate_scenario,
)
from .droop_opt import DroopProblem, DroopSolution, StiffnessError, solve_problem
from .dynamics import (
    ConverterOutage,
    UnstableModelError,
    WindStep,
    assemble_model,
    equal_gain_h2,
    h2_norm,
    reduce_grounded,
    simulate,
    trajectory_to_csv,
)
from .market import HourScenario, duration_curves, plan
from .security import reports_to_csv, screen_all_contingencies

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_INSECURE = 3
EXIT_PRECISION = 4


def _round12(value: float) -> float:
    return float(f"{value:.12g}")


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def grid_from_json(data: dict) -> GridScenario:
    base = SystemBase(
        s_base_mva=float(data["base"]["s_base_mva"]),
        f_nom_hz=float(data["base"].get("f_nom_hz", 50.0)),
        omega_ref=float(data["base"].get("omega_ref", 1.0)),
    )
    converters = tuple(
        Converter(
            id=str(c["id"]),
            rating_mva=float(c["rating_mva"]),
            p_ref=float(c["p_ref_mw"]) / base.s_base_mva,
            p_max=float(c.get("p_max_pu", 0.95)),
            x_min=float(c.get("x_min", 10.0)),
        )
        for c in data["converters"]
    )
    wind = tuple(
        (str(w["node"]), float(w["p_mw"]) / base.s_base_mva) for w in data.get("wind", [])
    )
    net = data.get("network")
    if net is None:
        return GridScenario.with_star_network(base, converters, wind)
    graph = NetworkGraph(
        nodes=tuple(str(n) for n in net["nodes"]),
        edges=tuple((str(u), str(v), float(b)) for u, v, b in net["edges"]),
        grounded_node=net.get("grounded_node"),
    )
    return GridScenario(base=base, converters=converters, wind_injections=wind, network=graph)


def load_grid(path: str | Path) -> GridScenario:
    scenario = grid_from_json(json.loads(Path(path).read_text()))
    report = validate_scenario(scenario)
    report.raise_if_invalid()
    return scenario


def grid_to_json(scenario: GridScenario) -> dict:
    s = scenario.base.s_base_mva
    return {
        "base": {
            "s_base_mva": _round12(s),
            "f_nom_hz": _round12(scenario.base.f_nom_hz),
            "omega_ref": _round12(scenario.base.omega_ref),
        },
        "converters": [
            {
                "id": c.id,
                "rating_mva": _round12(c.rating_mva),
                "p_ref_mw": _round12(c.p_ref * s),
                "p_max_pu": _round12(c.p_max),
                "x_min": _round12(c.x_min),
            }
            for c in scenario.converters
        ],
        "wind": [
            {"node": node, "p_mw": _round12(p * s)} for node, p in scenario.wind_injections
        ],
        "network": {
            "nodes": list(scenario.network.nodes),
            "edges": [[u, v, _round12(b)] for u, v, b in scenario.network.edges],
            "grounded_node": scenario.network.grounded_node,
        },
    }


def droops_to_json(solution: DroopSolution, ids: tuple[str, ...]) -> dict:
    doc = {
        "status": solution.status,
        "alpha": None,
        "x": None,
        "k_f": None,
        "objective": None if solution.objective is None else _round12(solution.objective),
        "residual": _round12(solution.residual),
        "ids": list(ids),
    }
    if solution.assignment is not None:
        doc["alpha"] = _round12(solution.assignment.alpha)
        doc["x"] = [_round12(v) for v in solution.assignment.x]
        doc["k_f"] = [_round12(v) for v in solution.assignment.k_f]
    return doc


def load_droops(path: str | Path, scenario: GridScenario) -> DroopAssignment:
    data = json.loads(Path(path).read_text())
    if data.get("x") is None:
        raise ScenarioError(f"droops file {path} holds no solution (status {data.get('status')})")
    x = [float(v) for v in data["x"]]
    ids = data.get("ids")
    if ids:
        if sorted(ids) != sorted(scenario.ids):
            raise ScenarioError("droops file ids do not match the grid")
        by_id = dict(zip(ids, x))
        x = [by_id[cid] for cid in scenario.ids]
    elif len(x) != scenario.n:
        raise ScenarioError("droops file length does not match the grid")
    return DroopAssignment(np.array(x))


def hours_from_csv(text: str, link_ids: tuple[str, ...]) -> list[HourScenario]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ScenarioError("hours CSV is empty")
    header = lines[0].split(",")
    expected = ["hour", "wind_mw"] + [f"cap_{cid}" for cid in link_ids] + ["bid_fixture"]
    if header != expected:
        raise ScenarioError(f"hours CSV header must be {','.join(expected)}")
    hours = []
    for ln in lines[1:]:
        cells = ln.split(",")
        hour = int(cells[0])
        wind = float(cells[1])
        caps = np.array([float(v) for v in cells[2 : 2 + len(link_ids)]])
        fixture = cells[2 + len(link_ids)]
        hours.append(
            HourScenario(
                hour=hour,
                wind_mw=wind,
                link_ids=link_ids,
                offered_mw=caps,
                bids=fixtures.bid_curves(fixture, hour, link_ids, caps),
                bid_fixture=fixture,
            )
        )
    return hours


def hours_to_csv(hours: list[HourScenario]) -> str:
    link_ids = hours[0].link_ids
    lines = [",".join(["hour", "wind_mw"] + [f"cap_{cid}" for cid in link_ids] + ["bid_fixture"])]
    for h in hours:
        cells = [str(h.hour), f"{h.wind_mw:.12g}"]
        cells += [f"{v:.12g}" for v in h.offered_mw]
        cells.append(h.bid_fixture)
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _assignment_from_args(args, scenario: GridScenario) -> DroopAssignment:
    if args.droops:
        return load_droops(args.droops, scenario)
    return DroopAssignment.equal(args.alpha, scenario.n)


def cmd_solve_droops(args) -> int:
    scenario = load_grid(args.grid)
    try:
        problem = DroopProblem(
            alpha=args.alpha,
            x_min=scenario.x_min,
            p_ref=scenario.p_ref,
            p_max=scenario.p_max,
            psi=args.precision,
        )
    except StiffnessError as exc:
        solution = DroopSolution("infeasible", None, None, 0.0, note=str(exc))
        _dump_json(droops_to_json(solution, scenario.ids), Path(args.out))
        print(f"droopkit: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    solution = solve_problem(problem, backend=args.backend)
    _dump_json(droops_to_json(solution, scenario.ids), Path(args.out))
    if solution.status == "infeasible":
        return EXIT_INFEASIBLE
    if solution.status == "precision-limited":
        return EXIT_PRECISION
    return EXIT_OK


def cmd_check_n1(args) -> int:
    scenario = load_grid(args.grid)
    assignment = _assignment_from_args(args, scenario)
    reports = screen_all_contingencies(assignment, scenario)
    Path(args.out).write_text(reports_to_csv(reports, scenario))
    return EXIT_OK if all(r.secure for r in reports) else EXIT_INSECURE


def cmd_h2(args) -> int:
    scenario = load_grid(args.grid)
    assignment = _assignment_from_args(args, scenario)
    model = assemble_model(scenario, assignment, tau=args.tau)
    reduced = reduce_grounded(model)
    norm_sq = h2_norm(reduced)
    gains = assignment.k_f
    equal = float(np.ptp(gains)) <= 1e-12 * float(gains[0])
    doc = {
        "h2_squared": _round12(norm_sq),
        "h2": _round12(float(np.sqrt(norm_sq))),
        "n": scenario.n,
        "tau": _round12(args.tau),
        "equal_gain_closed_form": (
            _round12(equal_gain_h2(scenario.n, float(gains[0]), args.tau)) if equal else None
        ),
    }
    _dump_json(doc, Path(args.out))
    return EXIT_OK


def _parse_event(spec: str, base_mva: float):
    body, _, at = spec.partition("@")
    if not at:
        raise ScenarioError(f"event {spec!r} needs '@<time_s>'")
    time = float(at)
    parts = body.split(":")
    if parts[0] == "outage" and len(parts) == 2:
        return ConverterOutage(time=time, converter_id=parts[1])
    if parts[0] == "wind" and len(parts) == 3:
        return WindStep(time=time, node=parts[1], delta_pu=float(parts[2]) / base_mva)
    raise ScenarioError(
        f"cannot parse event {spec!r}; use outage:<id>@<t> or wind:<node>:<mw>@<t>"
    )


def cmd_simulate(args) -> int:
    scenario = load_grid(args.grid)
    assignment = _assignment_from_args(args, scenario)
    model = assemble_model(scenario, assignment, tau=args.tau)
    events = [_parse_event(s, scenario.base.s_base_mva) for s in args.event or []]
    traj = simulate(model, events, dt=args.dt, t_end=args.t_end)
    Path(args.out).write_text(trajectory_to_csv(traj))
    return EXIT_OK


def cmd_market_loop(args) -> int:
    scenario = load_grid(args.grid)
    hours = hours_from_csv(Path(args.hours).read_text(), scenario.ids)
    run = plan(
        scenario,
        hours,
        policy=args.policy,
        step_mw=args.step_mw,
        alpha=args.alpha,
        backend=args.backend,
        psi=args.precision,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    lines = ["hour,link,capacity_mw,flow_mw,reduced_mw,secure"]
    for rec in run.records:
        for j, cid in enumerate(run.link_ids):
            lines.append(
                f"{rec.hour},{cid},{rec.capacity_mw[j]:.12g},{rec.flow_mw[j]:.12g},"
                f"{rec.reduced_mw[j]:.12g},{str(rec.secure).lower()}"
            )
    (out_dir / "capacities.csv").write_text("\n".join(lines) + "\n")

    curves = duration_curves(run)
    summary = {
        "policy": run.policy,
        "alpha": _round12(run.alpha),
        "step_mw": _round12(run.step_mw),
        "hours": len(run.records),
        "curtailed_mwh": _round12(curves.total_curtailed_mwh),
        "hours_at_full_capacity": {
            cid: curves.hours_at_full[cid] for cid in run.link_ids
        },
    }
    _dump_json(summary, out_dir / "summary.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="droopkit",
        description="N-1-secure droop planning for zero-inertia offshore islands",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, droops=True):
        p.add_argument("--grid", required=True, help="grid scenario JSON")
        if droops:
            p.add_argument("--droops", help="droops JSON from solve-droops")
            p.add_argument("--alpha", type=float, default=600.0,
                           help="stiffness for the equal fallback when --droops is absent")

    p = sub.add_parser("solve-droops", help="optimize the inverse droop gains")
    p.add_argument("--grid", required=True)
    p.add_argument("--alpha", type=float, default=600.0)
    p.add_argument("--precision", type=int, default=-3, help="digit grid exponent psi")
    p.add_argument("--backend", default="oracle", choices=["oracle", "bnb", "highs"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve_droops)

    p = sub.add_parser("check-n1", help="screen all converter outages")
    add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_check_n1)

    p = sub.add_parser("h2", help="H2 performance of the reduced model")
    add_common(p)
    p.add_argument("--tau", type=float, default=0.02)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_h2)

    p = sub.add_parser("simulate", help="time-domain simulation of events")
    add_common(p)
    p.add_argument("--tau", type=float, default=0.02)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--t-end", type=float, default=2.0)
    p.add_argument("--event", action="append",
                   help="outage:<id>@<t_s> or wind:<node>:<mw>@<t_s>; repeatable")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("market-loop", help="capacity-reduction planning over an hours file")
    p.add_argument("--grid", required=True)
    p.add_argument("--hours", required=True, help="hours CSV")
    p.add_argument("--policy", default="adaptive", choices=["equal", "adaptive"])
    p.add_argument("--step-mw", type=float, default=50.0)
    p.add_argument("--alpha", type=float, default=600.0)
    p.add_argument("--precision", type=int, default=-3)
    p.add_argument("--backend", default="oracle", choices=["oracle", "bnb", "highs"])
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_market_loop)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, UnstableModelError) as exc:
        print(f"droopkit: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"droopkit: bad input: {exc!r}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
