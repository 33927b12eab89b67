"""Capacity planning loop coupling market clearing to droop feasibility.

A transparent transport-model clearing stands in for a full market: wind is
offered at zero marginal cost against per-link bid curves, so welfare is
maximized by filling the highest-priced segments first subject to link
capacity and the wind budget.  Each hour is then screened for N-1 security;
when the configured droop policy cannot secure the cleared flows, capacity
is withdrawn in fixed steps on the violated links and the hour is cleared
again until the screen passes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .core import DroopAssignment, GridScenario, ScenarioError, _readonly
from .droop_opt import DroopProblem, solve_problem
from .security import screen_all_contingencies

DEFAULT_STEP_MW = 50.0


@dataclass(frozen=True)
class BidSegment:
    """One step of a marginal bid curve: quantity at a willingness to pay."""

    quantity_mw: float
    price_eur_mwh: float


@dataclass(frozen=True)
class HourScenario:
    """Market inputs of one hour: wind, offered link capacities, bids."""

    hour: int
    wind_mw: float
    link_ids: tuple[str, ...]
    offered_mw: np.ndarray
    bids: tuple[tuple[BidSegment, ...], ...]
    bid_fixture: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "link_ids", tuple(self.link_ids))
        object.__setattr__(self, "offered_mw", _readonly(self.offered_mw))
        object.__setattr__(
            self, "bids", tuple(tuple(curve) for curve in self.bids)
        )
        if len(self.link_ids) != self.offered_mw.size or len(self.bids) != self.offered_mw.size:
            raise ScenarioError("link ids, capacities and bid curves must align")
        if self.wind_mw < 0 or np.any(self.offered_mw < 0):
            raise ScenarioError("wind and offered capacities must be non-negative")


def clear_market(hour: HourScenario, capacities_mw: np.ndarray | None = None) -> np.ndarray:
    """Welfare-maximizing flows (MW per link) under capacity and wind limits.

    Deterministic: segments are filled in order of descending price, ties
    broken by lower link index then segment position; only positive prices
    buy energy, the rest of the wind is curtailed.
    """
    caps = np.array(hour.offered_mw if capacities_mw is None else capacities_mw, dtype=float)
    if caps.size != len(hour.link_ids):
        raise ScenarioError("capacity vector does not match links")
    order = []
    for li, curve in enumerate(hour.bids):
        for si, seg in enumerate(curve):
            if seg.price_eur_mwh > 0 and seg.quantity_mw > 0:
                order.append((-seg.price_eur_mwh, li, si, seg.quantity_mw))
    order.sort()
    flows = np.zeros(caps.size)
    wind_left = hour.wind_mw
    for _, li, _, qty in order:
        if wind_left <= 0:
            break
        take = min(qty, caps[li] - flows[li], wind_left)
        if take > 0:
            flows[li] += take
            wind_left -= take
    return flows


@dataclass
class HourRecord:
    """Final, N-1-secure state of one planned hour."""

    hour: int
    link_ids: tuple[str, ...]
    offered_mw: np.ndarray
    capacity_mw: np.ndarray
    flow_mw: np.ndarray
    reduced_mw: np.ndarray
    iterations: int
    curtailed_mwh: float
    droop_status: str
    x: np.ndarray
    secure: bool = True


@dataclass
class PlanningRun:
    """Per-hour planning records for one policy."""

    policy: str
    alpha: float
    step_mw: float
    link_ids: tuple[str, ...]
    records: list[HourRecord] = field(default_factory=list)

    @property
    def total_curtailed_mwh(self) -> float:
        return float(sum(r.curtailed_mwh for r in self.records))


def _scenario_with_flows(template: GridScenario, p_ref_pu: np.ndarray) -> GridScenario:
    converters = tuple(
        dataclasses.replace(conv, p_ref=float(p))
        for conv, p in zip(template.converters, p_ref_pu)
    )
    return dataclasses.replace(template, converters=converters)


def plan_hour(
    template: GridScenario,
    hour: HourScenario,
    policy: str = "adaptive",
    step_mw: float = DEFAULT_STEP_MW,
    alpha: float = 600.0,
    backend: str = "oracle",
    psi: int = -3,
) -> HourRecord:
    """Clear, check and reduce one hour until it is N-1 secure.

    Policy "equal" keeps the gains fixed at alpha/n and only screens; policy
    "adaptive" re-optimizes the gains for the cleared flows.  Capacity is
    withdrawn in ``step_mw`` blocks on the converters whose limits would be
    violated; zero capacity clears to zero flows, so termination is certain.
    """
    if step_mw <= 0:
        raise ScenarioError("step_mw must be positive")
    if tuple(hour.link_ids) != template.ids:
        raise ScenarioError("hour links do not match scenario converters")
    if policy not in ("equal", "adaptive"):
        raise ScenarioError(f"unknown policy {policy!r}")
    n = template.n
    cap_limit = template.ratings_mva * template.p_max
    if np.any(hour.offered_mw > cap_limit + 1e-9):
        raise ScenarioError(
            f"hour {hour.hour}: offered capacity exceeds a converter's usable rating"
        )
    equal = DroopAssignment.equal(alpha, n)
    if np.any(equal.x < template.x_min - 1e-12):
        raise ScenarioError("equal policy violates the gain lower bounds")

    caps = np.array(hour.offered_mw, dtype=float)
    s_base = template.base.s_base_mva
    iterations = 0
    while True:
        flows = clear_market(hour, caps)
        scen = _scenario_with_flows(template, flows / s_base)
        status = "equal"
        assignment: DroopAssignment | None = equal
        if policy == "adaptive":
            problem = DroopProblem(
                alpha=alpha, x_min=scen.x_min, p_ref=scen.p_ref, p_max=scen.p_max, psi=psi
            )
            sol = solve_problem(problem, backend=backend)
            status = sol.status
            assignment = sol.assignment if sol.status == "optimal" else None

        if assignment is not None:
            reports = screen_all_contingencies(assignment, scen)
            violated = sorted({cid for rep in reports for cid, _ in rep.violations})
        else:
            # infeasible optimization: fall back to the equal screen to find
            # the converters that force the capacity reduction
            reports = screen_all_contingencies(equal, scen)
            violated = sorted({cid for rep in reports for cid, _ in rep.violations})
            if not violated:
                loaded = int(np.argmax(np.abs(flows)))
                violated = [template.ids[loaded]]

        if not violated:
            return HourRecord(
                hour=hour.hour,
                link_ids=template.ids,
                offered_mw=np.array(hour.offered_mw),
                capacity_mw=caps,
                flow_mw=flows,
                reduced_mw=np.array(hour.offered_mw) - caps,
                iterations=iterations,
                curtailed_mwh=float(hour.wind_mw - flows.sum()),
                droop_status=status,
                x=np.asarray(assignment.x).copy(),
            )

        iterations += 1
        reduced_any = False
        for cid in violated:
            j = template.converter_index(cid)
            if caps[j] > 0:
                caps[j] = max(0.0, caps[j] - step_mw)
                reduced_any = True
        if not reduced_any:
            # violated links already at zero: shrink every loaded link
            for j in range(n):
                if caps[j] > 0:
                    caps[j] = max(0.0, caps[j] - step_mw)


def plan(
    template: GridScenario,
    hours: list[HourScenario],
    policy: str = "adaptive",
    step_mw: float = DEFAULT_STEP_MW,
    alpha: float = 600.0,
    backend: str = "oracle",
    psi: int = -3,
) -> PlanningRun:
    """Plan every hour independently; records are ordered by hour index."""
    run = PlanningRun(policy=policy, alpha=alpha, step_mw=step_mw, link_ids=template.ids)
    for hour in sorted(hours, key=lambda h: h.hour):
        run.records.append(
            plan_hour(template, hour, policy=policy, step_mw=step_mw, alpha=alpha,
                      backend=backend, psi=psi)
        )
    return run


@dataclass
class DurationCurves:
    """Descending-sorted capacities and flows per link, with totals."""

    link_ids: tuple[str, ...]
    capacity_sorted: dict[str, np.ndarray]
    flow_sorted: dict[str, np.ndarray]
    hours_at_full: dict[str, int]
    total_curtailed_mwh: float


def duration_curves(run: PlanningRun) -> DurationCurves:
    """Rearrange the per-hour outcomes in descending order per link."""
    caps = {cid: [] for cid in run.link_ids}
    flows = {cid: [] for cid in run.link_ids}
    full = {cid: 0 for cid in run.link_ids}
    for rec in run.records:
        for j, cid in enumerate(run.link_ids):
            caps[cid].append(rec.capacity_mw[j])
            flows[cid].append(rec.flow_mw[j])
            if rec.capacity_mw[j] >= rec.offered_mw[j] - 1e-9:
                full[cid] += 1
    return DurationCurves(
        link_ids=run.link_ids,
        capacity_sorted={cid: np.sort(np.array(v))[::-1] for cid, v in caps.items()},
        flow_sorted={cid: np.sort(np.array(v))[::-1] for cid, v in flows.items()},
        hours_at_full=full,
        total_curtailed_mwh=run.total_curtailed_mwh,
    )
