"""State-space dynamics of the droop-controlled island and its H2 metrics.

The model is the standard second-order one per converter: the angle
integrates the frequency state, and the frequency state is a first-order
power-measurement filter with time constant tau closing the droop loop over
the linearized network flows.  Wind farms carry no dynamic state; their
nodes are eliminated from the network Laplacian and their injections mapped
to equivalent injections at the converter nodes.

Sign convention: the frequency state of converter i is the deviation that
enters its droop law, i.e. at steady state p_i = p_ref_i + x_i * freq_dev,
so an island power surplus settles at a positive common deviation equal to
surplus / stiffness.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .core import DroopAssignment, GridScenario, ScenarioError, kron_reduction

DEFAULT_TAU = 0.02
DEFAULT_DT = 1e-3

_STABILITY_MARGIN = 1e-10
_DIVERGENCE_LIMIT = 1e6


class UnstableModelError(RuntimeError):
    """The model has an eigenvalue with non-negative real part."""


class SimulationDiverged(RuntimeError):
    """State norm blew past the divergence guard during integration."""


@dataclass(frozen=True)
class DynamicModel:
    """State-space matrices of the droop-controlled network.

    States are stacked (angles, frequency deviations); disturbances enter as
    power offsets at the converter terminals; outputs are the frequency
    deviations.  Full models keep enough context (scenario, assignment, wind
    map) to be simulated and rebuilt after an outage; reduced models are for
    norm computations only.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    tau: float
    k_f: np.ndarray
    L_B: np.ndarray
    converter_ids: tuple[str, ...]
    reduced: bool = False
    wind_map: np.ndarray | None = None
    wind_nodes: tuple[str, ...] = ()
    p_ref: np.ndarray | None = None
    scenario: GridScenario | None = None
    assignment: DroopAssignment | None = None

    @property
    def n_states(self) -> int:
        return self.A.shape[0]


def assemble_model(
    scenario: GridScenario, assignment: DroopAssignment, tau: float = DEFAULT_TAU
) -> DynamicModel:
    """Build the full model of a scenario under a gain assignment."""
    if tau <= 0:
        raise ScenarioError("measurement time constant tau must be positive")
    if assignment.n != scenario.n:
        raise ScenarioError("assignment does not match scenario converter count")

    net = scenario.network
    conv_idx = [net.index(c.id) for c in scenario.converters]
    lap_full = net.laplacian()
    lap, inj_map = kron_reduction(lap_full, conv_idx)

    drop_nodes = [node for i, node in enumerate(net.nodes) if i not in set(conv_idx)]
    drop_pos = {node: j for j, node in enumerate(drop_nodes)}
    conv_pos = {c.id: i for i, c in enumerate(scenario.converters)}
    n = scenario.n
    wind_nodes = tuple(node for node, _ in scenario.wind_injections)
    wind_map = np.zeros((n, len(wind_nodes)))
    for col, node in enumerate(wind_nodes):
        if node in conv_pos:
            wind_map[conv_pos[node], col] = 1.0
        elif node in drop_pos:
            wind_map[:, col] = inj_map[:, drop_pos[node]]
        else:
            raise ScenarioError(f"wind node {node} not present in network")

    k = np.asarray(assignment.k_f)
    a = np.zeros((2 * n, 2 * n))
    a[:n, n:] = np.eye(n)
    a[n:, :n] = -(k[:, None] * lap) / tau
    a[n:, n:] = -np.eye(n) / tau
    b = np.zeros((2 * n, n))
    b[n:, :] = -np.diag(k) / tau
    c = np.zeros((n, 2 * n))
    c[:, n:] = np.eye(n)
    return DynamicModel(
        A=a,
        B=b,
        C=c,
        tau=tau,
        k_f=k,
        L_B=lap,
        converter_ids=scenario.ids,
        wind_map=wind_map,
        wind_nodes=wind_nodes,
        p_ref=scenario.p_ref,
        scenario=scenario,
        assignment=assignment,
    )


def reduce_grounded(model: DynamicModel) -> DynamicModel:
    """Drop the rigid-rotation coordinate of a full model.

    The network Laplacian is diagonalized by an orthogonal change of angle
    and frequency variables; the coordinate carried by the zero eigenvalue
    is removed, which is the grounded-node picture of the same network.  The
    result has 2(n-1) states and is Hurwitz for any connected network.
    """
    if model.reduced:
        return model
    evals, u = np.linalg.eigh(model.L_B)
    if evals.size < 2 or evals[1] <= 1e-9:
        raise ScenarioError("network has a repeated zero eigenvalue (disconnected)")
    n = model.L_B.shape[0]
    coupling = u.T @ (model.k_f[:, None] * model.L_B) @ u
    core = coupling[1:, 1:]
    gains_t = (u.T * model.k_f[None, :])[1:, :]  # rows of U^T K_f past the zero mode
    m = n - 1
    a = np.zeros((2 * m, 2 * m))
    a[:m, m:] = np.eye(m)
    a[m:, :m] = -core / model.tau
    a[m:, m:] = -np.eye(m) / model.tau
    b = np.zeros((2 * m, n))
    b[m:, :] = -gains_t / model.tau
    c = np.zeros((m, 2 * m))
    c[:, m:] = np.eye(m)
    return DynamicModel(
        A=a,
        B=b,
        C=c,
        tau=model.tau,
        k_f=model.k_f,
        L_B=np.diag(evals[1:]),
        converter_ids=model.converter_ids,
        reduced=True,
    )


def h2_norm(model: DynamicModel) -> float:
    """Squared H2 norm via the observability Gramian.

    Raises UnstableModelError unless every eigenvalue has a strictly
    negative real part; reduce the model first.
    """
    if not np.any(model.B):
        return 0.0
    eigs = np.linalg.eigvals(model.A)
    if np.max(eigs.real) >= -_STABILITY_MARGIN:
        raise UnstableModelError(
            f"unstable model: eigenvalue with real part {np.max(eigs.real):.3e}"
        )
    gram = solve_continuous_lyapunov(model.A.T, -model.C.T @ model.C)
    return float(np.trace(model.B.T @ gram @ model.B))


def equal_gain_h2(n: int, k: float, tau: float) -> float:
    """Closed-form squared norm of the reduced equal-gain network."""
    return (n - 1) * k**2 / (2.0 * tau)


def attached_node_h2(k_m: float, tau: float) -> float:
    """Closed-form squared norm of one converter tied to the grounded node."""
    return k_m**2 / (2.0 * tau)


def _grounded_system(lap_grounded: np.ndarray, gains: np.ndarray, tau: float) -> DynamicModel:
    """Model of a network whose reference node has been removed."""
    m = lap_grounded.shape[0]
    a = np.zeros((2 * m, 2 * m))
    a[:m, m:] = np.eye(m)
    a[m:, :m] = -(gains[:, None] * lap_grounded) / tau
    a[m:, m:] = -np.eye(m) / tau
    b = np.zeros((2 * m, m))
    b[m:, :] = -np.diag(gains) / tau
    c = np.zeros((m, 2 * m))
    c[:, m:] = np.eye(m)
    return DynamicModel(
        A=a,
        B=b,
        C=c,
        tau=tau,
        k_f=gains,
        L_B=lap_grounded,
        converter_ids=tuple(f"g{i}" for i in range(m)),
        reduced=True,
    )


@dataclass(frozen=True)
class H2Decomposition:
    """Both sides of the attached-pair decoupling check."""

    full: float
    parts: float
    base: float
    m1: float
    m2: float
    pair_sum: float
    eps: float
    m1_gain: float
    m2_gain: float

    @property
    def identity_residual(self) -> float:
        """eps should equal pair_sum**2 - 2*k1*k2 exactly."""
        return abs(self.eps - (self.pair_sum**2 - 2.0 * self.m1_gain * self.m2_gain))


def h2_decomposition_check(
    model: DynamicModel,
    k_m1: float,
    k_m2: float,
    b_m1: float = 1.0,
    b_m2: float = 1.0,
    ground_id: str | None = None,
) -> H2Decomposition:
    """Attach two extra converters to the grounded node and compare norms.

    Grounding severs the coupling, so the assembled system's squared norm
    must equal the sum of the base network's and the two single-node
    subsystems'; both sides are computed independently by Lyapunov solves.
    """
    if model.reduced:
        raise ScenarioError("decomposition check needs the full model")
    ids = list(model.converter_ids)
    g = ids.index(ground_id) if ground_id is not None else len(ids) - 1
    keep = [i for i in range(len(ids)) if i != g]
    lap_base = model.L_B[np.ix_(keep, keep)]
    gains_base = model.k_f[keep]

    base_sys = _grounded_system(lap_base, gains_base, model.tau)
    m1_sys = _grounded_system(np.array([[b_m1]]), np.array([k_m1]), model.tau)
    m2_sys = _grounded_system(np.array([[b_m2]]), np.array([k_m2]), model.tau)

    m = lap_base.shape[0]
    lap_ext = np.zeros((m + 2, m + 2))
    lap_ext[:m, :m] = lap_base
    lap_ext[m, m] = b_m1
    lap_ext[m + 1, m + 1] = b_m2
    gains_ext = np.concatenate([gains_base, [k_m1, k_m2]])
    full_sys = _grounded_system(lap_ext, gains_ext, model.tau)

    base = h2_norm(base_sys)
    h_m1 = h2_norm(m1_sys)
    h_m2 = h2_norm(m2_sys)
    return H2Decomposition(
        full=h2_norm(full_sys),
        parts=base + h_m1 + h_m2,
        base=base,
        m1=h_m1,
        m2=h_m2,
        pair_sum=k_m1 + k_m2,
        eps=2.0 * model.tau * (h_m1 + h_m2),
        m1_gain=k_m1,
        m2_gain=k_m2,
    )


# ---------------------------------------------------------------------------
# Time-domain simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindStep:
    """Step change of the injection at a wind node, in per-unit."""

    time: float
    node: str
    delta_pu: float


@dataclass(frozen=True)
class ConverterOutage:
    """Trip of one converter; its node stays in the network as a passive bus."""

    time: float
    converter_id: str


Event = WindStep | ConverterOutage


@dataclass
class Trajectory:
    """Sampled frequency deviations and converter powers.

    Frequency columns of an outaged converter are NaN after the trip; its
    power column is zero (breaker open).
    """

    time: np.ndarray
    converter_ids: tuple[str, ...]
    freq_pu: np.ndarray
    p_pu: np.ndarray
    events: tuple[Event, ...]
    f_nom_hz: float = 50.0

    @property
    def freq_hz(self) -> np.ndarray:
        return self.freq_pu * self.f_nom_hz

    def total_power(self) -> np.ndarray:
        return self.p_pu.sum(axis=1)


def _rk4_step_matrices(a: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact matrices of one classical 4th-order step on a linear system.

    For x' = A x + g with constant g the classical scheme reduces to
    x+ = Phi x + Gamma g with the fourth-order Taylor truncations below.
    """
    eye = np.eye(a.shape[0])
    ha = dt * a
    phi = eye + ha @ (eye + ha @ (eye / 2 + ha @ (eye / 6 + ha / 24)))
    gamma = dt * (eye + ha @ (eye / 2 + ha @ (eye / 6 + ha / 24)))
    return phi, gamma


def _equilibrium(model: DynamicModel, wind: np.ndarray) -> np.ndarray:
    """State at which every converter sits on its droop characteristic."""
    x_inv = 1.0 / model.k_f
    alpha = float(x_inv.sum())
    eff = model.wind_map @ wind
    dev = (float(eff.sum()) - float(model.p_ref.sum())) / alpha
    target = model.p_ref + x_inv * dev
    theta, *_ = np.linalg.lstsq(model.L_B, eff - target, rcond=None)
    n = model.L_B.shape[0]
    state = np.zeros(2 * n)
    state[:n] = theta
    state[n:] = dev
    return state


def simulate(
    model: DynamicModel,
    events: list[Event] | tuple[Event, ...] = (),
    dt: float = DEFAULT_DT,
    t_end: float = 2.0,
) -> Trajectory:
    """Integrate the model from equilibrium through the given events.

    A wind step changes the corresponding injection; an outage removes the
    converter's states, turns its node passive (the network is re-reduced),
    and leaves the stranded set-point as a persistent imbalance.  The final
    steady state therefore matches the closed-form post-fault sharing.
    """
    if model.scenario is None or model.assignment is None:
        raise ScenarioError("simulation needs a model built by assemble_model")
    if dt <= 0 or t_end <= 0:
        raise ScenarioError("dt and t_end must be positive")
    n_steps = int(round(t_end / dt))
    for ev in events:
        if not 0.0 <= ev.time <= t_end:
            raise ScenarioError(f"event at t={ev.time:g}s outside horizon [0, {t_end:g}]s")

    all_ids = model.converter_ids
    n_all = len(all_ids)
    times = np.arange(n_steps + 1) * dt
    freq = np.full((n_steps + 1, n_all), np.nan)
    power = np.zeros((n_steps + 1, n_all))

    scen = model.scenario
    assign = model.assignment
    cur = model
    wind = np.array([p for _, p in scen.wind_injections], dtype=float)
    state = _equilibrium(cur, wind)

    ordered = sorted(events, key=lambda e: (e.time, isinstance(e, WindStep)))
    breakpoints = [(int(round(e.time / dt)), e) for e in ordered]
    breakpoints.append((n_steps, None))

    col_of = {cid: j for j, cid in enumerate(all_ids)}
    start = 0
    for stop, event in breakpoints:
        stop = min(max(stop, start), n_steps)
        m = len(cur.converter_ids)
        lap = cur.L_B
        eff = cur.wind_map @ wind
        g = np.zeros(2 * m)
        g[m:] = cur.k_f * (eff - cur.p_ref) / cur.tau
        phi, gamma = _rk4_step_matrices(cur.A, dt)
        drive = gamma @ g

        count = stop - start + 1
        states = np.empty((count, 2 * m))
        x_cur = state
        with np.errstate(over="ignore", invalid="ignore"):
            for j in range(count):
                states[j] = x_cur
                if j % 256 == 0 and not np.all(np.abs(x_cur) < _DIVERGENCE_LIMIT):
                    raise SimulationDiverged(
                        f"state magnitude beyond {_DIVERGENCE_LIMIT:g} at "
                        f"t={(start + j) * dt:g}s; check gains and time step"
                    )
                if j < count - 1:
                    x_cur = phi @ x_cur + drive
        state = x_cur
        if not np.all(np.abs(state) < _DIVERGENCE_LIMIT):
            raise SimulationDiverged(
                f"state magnitude beyond {_DIVERGENCE_LIMIT:g} at t={stop * dt:g}s; "
                "check gains and time step"
            )

        cols = [col_of[cid] for cid in cur.converter_ids]
        freq[start : stop + 1, cols] = states[:, m:]
        power[start : stop + 1, cols] = states[:, :m] @ (-lap.T) + eff

        if event is None:
            break
        if isinstance(event, WindStep):
            hits = [j for j, node in enumerate(cur.wind_nodes) if node == event.node]
            if not hits:
                raise ScenarioError(f"wind step at unknown wind node {event.node!r}")
            wind[hits[0]] += event.delta_pu
        else:
            gone = scen.converter_index(event.converter_id)
            if scen.n - 1 < 2:
                raise ScenarioError("cannot simulate an outage below 2 converters")
            keep = [i for i in range(scen.n) if i != gone]
            pos = [j for j, cid in enumerate(cur.converter_ids) if cid != event.converter_id]
            old_m = len(cur.converter_ids)
            scen = dataclasses.replace(
                scen, converters=tuple(scen.converters[i] for i in keep)
            )
            assign = DroopAssignment(assign.x[keep])
            cur = assemble_model(scen, assign, cur.tau)
            # survivors keep their angle and frequency states across the trip;
            # the sample at the event instant reflects the post-event network
            state = np.concatenate([state[:old_m][pos], state[old_m:][pos]])
            freq[stop, col_of[event.converter_id]] = np.nan
            power[stop, col_of[event.converter_id]] = 0.0
        start = stop

    return Trajectory(
        time=times,
        converter_ids=all_ids,
        freq_pu=freq,
        p_pu=power,
        events=tuple(ordered),
        f_nom_hz=model.scenario.base.f_nom_hz,
    )


def trajectory_to_csv(traj: Trajectory) -> str:
    """Plot-ready CSV: time, per-converter frequency, per-converter power."""
    lines = []
    for ev in traj.events:
        if isinstance(ev, WindStep):
            lines.append(f"# event: wind step {ev.node} {ev.delta_pu:+.12g} pu @ {ev.time:.12g}s")
        else:
            lines.append(f"# event: outage {ev.converter_id} @ {ev.time:.12g}s")
    header = ["time_s"]
    header += [f"freq_pu_{cid}" for cid in traj.converter_ids]
    header += [f"p_pu_{cid}" for cid in traj.converter_ids]
    lines.append(",".join(header))
    for row in range(traj.time.size):
        cells = [f"{traj.time[row]:.12g}"]
        cells += [f"{v:.12g}" for v in traj.freq_pu[row]]
        cells += [f"{v:.12g}" for v in traj.p_pu[row]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
