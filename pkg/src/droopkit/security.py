"""Steady-state frequency and power sharing after a converter outage.

The closed forms here are the workhorse of every security check: the loss of
converter k leaves a surplus p_ref_k in the island, the common frequency
deviation settles at p_ref_k over the surviving stiffness, and each survivor
picks up a share proportional to its inverse gain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DroopAssignment, GridScenario, ScenarioError, deviation_hz, from_per_unit

#: Post-fault exceedances below this (pu) are treated as numerical noise.
VIOLATION_TOL = 1e-9


@dataclass(frozen=True)
class ContingencyReport:
    """Steady-state outcome of a single converter outage."""

    outage_id: str
    ssfd_pu: float
    ssfd_hz: float
    survivor_ids: tuple[str, ...]
    p_pre: np.ndarray
    p_post: np.ndarray
    p_limit: np.ndarray
    violations: tuple[tuple[str, float], ...]

    @property
    def secure(self) -> bool:
        return not self.violations


def droop_response(p_ref: float, x: float, delta_omega: float) -> float:
    """Steady-state power of one converter under a frequency deviation."""
    if x <= 0:
        raise ScenarioError("inverse droop gain must be positive")
    return p_ref + x * delta_omega


def _outage_index(assignment: DroopAssignment, scenario: GridScenario, outage_id: str) -> int:
    if assignment.n != scenario.n:
        raise ScenarioError(
            f"assignment has {assignment.n} gains but scenario has {scenario.n} converters"
        )
    if scenario.n < 2:
        raise ScenarioError("outage analysis needs at least 2 converters")
    return scenario.converter_index(outage_id)


def ssfd(assignment: DroopAssignment, scenario: GridScenario, outage_id: str) -> float:
    """Steady-state frequency deviation (pu) after losing one converter."""
    k = _outage_index(assignment, scenario, outage_id)
    surviving = assignment.alpha - float(assignment.x[k])
    return float(scenario.p_ref[k]) / surviving


def post_fault_flows(
    assignment: DroopAssignment, scenario: GridScenario, outage_id: str
) -> np.ndarray:
    """Post-outage converter powers (pu), over survivors in scenario order."""
    k = _outage_index(assignment, scenario, outage_id)
    delta = ssfd(assignment, scenario, outage_id)
    mask = np.arange(scenario.n) != k
    return scenario.p_ref[mask] + assignment.x[mask] * delta


def screen_all_contingencies(
    assignment: DroopAssignment,
    scenario: GridScenario,
    ssfd_limit_pu: float | None = None,
) -> list[ContingencyReport]:
    """One report per converter outage.

    A scenario is N-1 secure for the assignment iff every report is secure.
    Security is decided on the active-power limits; an SSFD bound is only
    applied when explicitly requested.
    """
    reports = []
    for k, conv in enumerate(scenario.converters):
        delta = ssfd(assignment, scenario, conv.id)
        mask = np.arange(scenario.n) != k
        flows = scenario.p_ref[mask] + assignment.x[mask] * delta
        limits = scenario.p_max[mask]
        ids = tuple(c.id for i, c in enumerate(scenario.converters) if i != k)
        violations = [
            (cid, float(excess))
            for cid, excess in zip(ids, np.abs(flows) - limits)
            if excess > VIOLATION_TOL
        ]
        if ssfd_limit_pu is not None and abs(delta) > ssfd_limit_pu:
            violations.append((conv.id, abs(delta) - ssfd_limit_pu))
        reports.append(
            ContingencyReport(
                outage_id=conv.id,
                ssfd_pu=float(delta),
                ssfd_hz=deviation_hz(delta, scenario.base),
                survivor_ids=ids,
                p_pre=scenario.p_ref[mask],
                p_post=flows,
                p_limit=limits,
                violations=tuple(violations),
            )
        )
    return reports


def is_secure(
    assignment: DroopAssignment,
    scenario: GridScenario,
    ssfd_limit_pu: float | None = None,
) -> bool:
    return all(r.secure for r in screen_all_contingencies(assignment, scenario, ssfd_limit_pu))


def reports_to_csv(reports: list[ContingencyReport], scenario: GridScenario) -> str:
    """Render screening reports as CSV, powers in MW."""
    lines = ["outage_id,converter_id,p_pre_mw,p_post_mw,limit_mw,violation_mw,ssfd_hz"]
    for rep in reports:
        violated = dict(rep.violations)
        for cid, pre, post, lim in zip(rep.survivor_ids, rep.p_pre, rep.p_post, rep.p_limit):
            excess = violated.get(cid, 0.0)
            lines.append(
                f"{rep.outage_id},{cid},"
                f"{from_per_unit(pre, scenario.base):.12g},"
                f"{from_per_unit(post, scenario.base):.12g},"
                f"{from_per_unit(lim, scenario.base):.12g},"
                f"{from_per_unit(excess, scenario.base):.12g},"
                f"{rep.ssfd_hz:.12g}"
            )
    return "\n".join(lines) + "\n"
