"""Loss and rate metrics of tree-state generators, repeater optimization, protocol comparisons and trial statistics."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .mesh import HardwareModel
from .protocol import (
    Schedule,
    TreeShape,
    generate_schedule,
    photon_count,
    required_network_size,
    total_time,
)

NODE_SEPARATION_KM = 5.0
DEFAULT_DT_S = 10e-9


def _shape(b) -> TreeShape:
    return b if isinstance(b, TreeShape) else TreeShape(tuple(b))


def effective_loss(b, eps0: float) -> tuple[float, float]:
    """Probability that the encoded qubit is lost, and the indirect-measurement success probability.

    Uses ``eps_eff = 1 - (1 - eps0) P_ind`` with
    ``P_ind = [(1 - eps0 + eps0 R_1)^{b_0} - (eps0 R_1)^{b_0}] (1 - eps0 + eps0 R_2)^{b_1}`` and
    ``R_j = 1 - [1 - (1 - eps0)(1 - eps0 + eps0 R_{j+2})^{b_{j+1}}]^{b_j}`` for ``j < d``, where ``R_j = 0`` and
    ``b_j = 0`` for ``j >= d``.

    Args:
        b: branching vector
        eps0: per-photon loss probability

    Returns:
        ``(eps_eff, P_ind)``
    """
    shape = _shape(b)
    if not 0.0 <= eps0 <= 1.0:
        raise ValueError(f"eps0 must lie in [0, 1], got {eps0}")
    d = shape.depth
    branch = lambda k: shape.b[k] if k < d else 0
    R = [0.0] * (d + 3)
    for j in range(d - 1, 0, -1):
        inner = (1 - eps0) * (1 - eps0 + eps0 * R[j + 2]) ** branch(j + 1)
        R[j] = 1 - (1 - inner) ** branch(j)
    p_ind = ((1 - eps0 + eps0 * R[1]) ** branch(0) - (eps0 * R[1]) ** branch(0)) * (
        1 - eps0 + eps0 * R[2]) ** branch(1)
    return 1 - (1 - eps0) * p_ind, p_ind


@dataclass(frozen=True)
class LossBudget:
    """Itemized loss in dB met by one photon between the source and the generator output (plus optional channel)."""

    label: tuple[int, int]
    items: dict

    @property
    def total_db(self) -> float:
        return float(sum(self.items.values()))

    @property
    def survival(self) -> float:
        return 10 ** (-self.total_db / 10)


def loss_budget(schedule: Schedule, hardware: HardwareModel, net_size: Optional[tuple[int, int]] = None,
                channel_km: float = 0.0, include_hadamard: bool = True) -> dict:
    """Per-photon loss budgets read off the schedule's path records.

    Each QPNN pass costs ``m L`` mean MZI losses and one output-switch crossing. Each delay traversal adds two
    chip-fiber couplings and its fiber; every photon also pays one final output coupling, the Hadamard-preparation
    MZI and, for static delay lines, one input-switch crossing per return from a line other than the longest.

    Args:
        schedule: generation schedule
        hardware: component losses
        net_size: ``(modes, layers)`` of the QPNN; derived from the tree when omitted
        channel_km: fiber channel appended after the generator
        include_hadamard: charge the source-side Hadamard MZI

    Returns:
        ``{photon label: LossBudget}``
    """
    if net_size is None:
        size = required_network_size(schedule.b)
        net_size = (size.modes, size.layers)
    modes, layers = net_size[0], net_size[1]
    lay = schedule.layout
    out_stage_db = lay.output_switch_stages * hardware.switch_loss_db_per_stage
    in_stage_db = lay.input_switch_stages * hardware.switch_loss_db_per_stage
    budgets = {}
    for label, path in schedule.paths.items():
        if path.qpnn_passes < 1:
            raise ValueError(f"photon {label} never passes the QPNN; schedule and layout disagree")
        items = {
            "qpnn": path.qpnn_passes * modes * layers * hardware.mzi_loss_mean_db,
            "hadamard": hardware.mzi_loss_mean_db if include_hadamard else 0.0,
            "output_switch": path.output_switch_crossings * out_stage_db,
            "input_switch": path.input_switch_crossings * in_stage_db,
            "coupling": (2 * path.delay_traversals + 1) * hardware.coupling_loss_db,
            "delay_fiber": path.fiber_db,
            "channel": channel_km * hardware.fiber_loss_db_per_km,
        }
        budgets[label] = LossBudget(label, items)
    return budgets


def generation_rate(schedule: Schedule, budgets: dict) -> float:
    """Rate of trees in which every photon leaves the generator: ``prod(survival) / total time``."""
    missing = set(schedule.paths) - set(budgets)
    if missing:
        raise ValueError(f"no loss budget for photons {sorted(missing)}")
    log_survival = sum(math.log(budgets[lab].survival) for lab in schedule.paths)
    return math.exp(log_survival) / schedule.total_time


@dataclass(frozen=True)
class TreeMetrics:
    b: tuple[int, ...]
    n: int
    total_time: float
    eps0: float
    eps_eff: float
    p_ind: float
    repetition_rate: float
    generation_rate: float
    communication_rate: float = 0.0
    log10_communication_rate: float = -math.inf

    def as_row(self) -> dict:
        return {
            "b": "-".join(map(str, self.b)),
            "n": self.n,
            "total_time_s": self.total_time,
            "eps0": self.eps0,
            "eps_eff": self.eps_eff,
            "p_ind": self.p_ind,
            "repetition_rate_hz": self.repetition_rate,
            "generation_rate_hz": self.generation_rate,
            "communication_rate_hz": self.communication_rate,
            "log10_communication_rate": self.log10_communication_rate,
        }


def channel_survival(km: float, fiber_loss_db_per_km: float = 0.17) -> float:
    return 10 ** (-fiber_loss_db_per_km * km / 10)


def generator_metrics(b, hardware: HardwareModel, dt_s: float = DEFAULT_DT_S, delay_mode: str = "dynamic",
                      sources: int = 1, hop_km: float = NODE_SEPARATION_KM) -> TreeMetrics:
    """Generation rate and per-photon loss of a tree made by the QPNN generator.

    ``eps0`` combines the mean generator survival over the tree's photons with one ``hop_km`` fiber hop.
    """
    schedule = generate_schedule(b, dt_s, sources, delay_mode, hardware)
    budgets = loss_budget(schedule, hardware)
    survivals = np.array([budgets[lab].survival for lab in schedule.paths])
    eps0 = 1 - float(survivals.mean()) * channel_survival(hop_km, hardware.fiber_loss_db_per_km)
    eps_eff, p_ind = effective_loss(schedule.b, eps0)
    return TreeMetrics(
        b=schedule.b,
        n=len(schedule.paths),
        total_time=schedule.total_time,
        eps0=eps0,
        eps_eff=eps_eff,
        p_ind=p_ind,
        repetition_rate=1 / schedule.total_time,
        generation_rate=generation_rate(schedule, budgets),
    )


def log10_communication_rate(eps_eff: float, nodes: int, total_time_s: float) -> float:
    if nodes < 0:
        raise ValueError("node count must be non-negative")
    if nodes == 0:
        return -math.log10(total_time_s)
    if eps_eff >= 1:
        return -math.inf
    return nodes * math.log1p(-eps_eff) / math.log(10) - math.log10(total_time_s)


def communication_rate(eps_eff: float, nodes: int, total_time_s: float) -> float:
    """Rate ``(1 - eps_eff)^N / total_time`` of logical qubits crossing ``N`` repeater links."""
    return 10 ** log10_communication_rate(eps_eff, nodes, total_time_s)


def direct_transmission_rate(nodes: int, dt_s: float = DEFAULT_DT_S, hop_km: float = NODE_SEPARATION_KM,
                             fiber_loss_db_per_km: float = 0.17) -> float:
    """Benchmark of bare single photons sent down ``N`` hops, one per source period."""
    return channel_survival(hop_km, fiber_loss_db_per_km) ** nodes / dt_s


@dataclass(frozen=True)
class RepeaterScenario:
    total_km: float
    separation_km: float = NODE_SEPARATION_KM
    max_branch: int = 4
    max_depth: int = 6
    min_branch: int = 2

    @property
    def nodes(self) -> int:
        n = self.total_km / self.separation_km
        if abs(n - round(n)) > 1e-9 or n < 0:
            raise ValueError(f"channel length {self.total_km} km is not a whole number of {self.separation_km} km hops")
        return int(round(n))


def candidate_shapes(constraint: str, max_branch: int = 4, max_depth: int = 6, min_branch: int = 2):
    """Branching vectors searched by the repeater optimizer, in a fixed order."""
    if constraint == "b2":
        return [(2,) * d for d in range(1, max_depth + 1)]
    if constraint != "free":
        raise ValueError(f"constraint must be 'b2' or 'free', got {constraint!r}")
    branches = range(min_branch, max_branch + 1)
    return [b for d in range(1, max_depth + 1) for b in itertools.product(branches, repeat=d)]


@dataclass(frozen=True)
class RepeaterChoice:
    total_km: float
    nodes: int
    metrics: TreeMetrics
    direct_rate: float


class RepeaterOptimizer:
    """Exhaustive search for the tree maximizing the one-way repeater rate, caching per-shape generator metrics."""

    def __init__(self, hardware: HardwareModel, dt_s: float = DEFAULT_DT_S, delay_mode: str = "dynamic",
                 separation_km: float = NODE_SEPARATION_KM):
        self.hardware = hardware
        self.dt_s = dt_s
        self.delay_mode = delay_mode
        self.separation_km = separation_km
        self._cache: dict = {}

    def metrics(self, b) -> TreeMetrics:
        b = tuple(b)
        if b not in self._cache:
            self._cache[b] = generator_metrics(b, self.hardware, self.dt_s, self.delay_mode,
                                               hop_km=self.separation_km)
        return self._cache[b]

    def best(self, total_km: float, constraint: str = "free", max_branch: int = 4, max_depth: int = 6,
             min_branch: int = 2, candidates: Optional[Iterable[tuple[int, ...]]] = None) -> RepeaterChoice:
        """Highest-rate tree for a channel of ``total_km``; ties go to fewer photons, then the smaller vector."""
        nodes = RepeaterScenario(total_km, self.separation_km).nodes
        shapes = list(candidates) if candidates is not None else candidate_shapes(
            constraint, max_branch, max_depth, min_branch)
        scored = []
        for b in shapes:
            m = self.metrics(b)
            scored.append((log10_communication_rate(m.eps_eff, nodes, m.total_time), m))
        top = max(score for score, _ in scored)
        tied = [m for score, m in scored if score >= top - 1e-12 * max(1.0, abs(top))]
        choice = min(tied, key=lambda m: (m.n, m.b))
        chosen = TreeMetrics(**{**choice.__dict__, "communication_rate": 10 ** top, "log10_communication_rate": top})
        return RepeaterChoice(total_km, nodes, chosen,
                              direct_transmission_rate(nodes, self.dt_s, self.separation_km,
                                                       self.hardware.fiber_loss_db_per_km))


def optimize_repeater(hardware: HardwareModel, lengths_km: Sequence[float], constraint: str = "free",
                      max_branch: int = 4, max_depth: Optional[int] = None, dt_s: float = DEFAULT_DT_S,
                      delay_mode: str = "dynamic") -> list[RepeaterChoice]:
    """Best tree and its rates for each total channel length."""
    depth = max_depth if max_depth is not None else (8 if constraint == "b2" else 6)
    opt = RepeaterOptimizer(hardware, dt_s, delay_mode)
    return [opt.best(km, constraint, max_branch, depth) for km in lengths_km]


@dataclass(frozen=True)
class EmitterModel:
    """Quantum-emitter source: ``gamma_l = 0.001 gamma_r`` and one photon every ``6 / gamma_l`` seconds."""

    name: str
    gamma_r: float
    t_coh: float

    @property
    def gamma_l(self) -> float:
        return 0.001 * self.gamma_r

    @property
    def dt_s(self) -> float:
        return 6 / self.gamma_l


EMITTERS = {
    "qd": EmitterModel("qd", 2 * math.pi * 80e9, 0.004e-3),
    "SiV": EmitterModel("SiV", 2 * math.pi * 0.1e9, 10e-3),
    "atom": EmitterModel("atom", 2 * math.pi * 10e9, 1000e-3),
}


def emitter_total_time(b, emitter: Optional[EmitterModel] = None, dt_s: Optional[float] = None) -> float:
    """Time for an emitter-based protocol to prepare tree ``b``.

    ``(P_d + P_{d-1} - 1) dt_s + d (P_d + P_{d-1}) dt_s`` with ``P_d = prod(b)`` and ``P_{d-1} = prod(b[:-1])``.
    """
    shape = _shape(b)
    if dt_s is None:
        if emitter is None:
            raise ValueError("give an emitter model or a source period")
        dt_s = emitter.dt_s
    d = shape.depth
    last, before = shape.row_size(d), shape.row_size(d - 1)
    return ((last + before - 1) + d * (last + before)) * dt_s


COMPARISON_EPS0 = 1 - 0.9 * channel_survival(NODE_SEPARATION_KM)


def comparison_curves(protocol: str, eps0: float = COMPARISON_EPS0, max_depth: int = 8, max_branch: int = 4,
                      min_branch: int = 2, dt_s_qpnn: float = DEFAULT_DT_S) -> list[dict]:
    """Best tree per depth and whether it lowers the running minimum effective loss.

    Emitter curves use the same loss formula without any decoherence correction.
    """
    if protocol == "qpnn":
        timing = lambda b: total_time(b, dt_s_qpnn)
    elif protocol.startswith("emitter-"):
        emitter = EMITTERS[protocol.removeprefix("emitter-")]
        timing = lambda b: emitter_total_time(b, emitter)
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    rows, running = [], math.inf
    for d in range(1, max_depth + 1):
        shapes = itertools.product(range(min_branch, max_branch + 1), repeat=d)
        scored = sorted(((effective_loss(b, eps0)[0], photon_count(b), b) for b in shapes))
        eps_eff, n, b = scored[0]
        marker = eps_eff < running
        running = min(running, eps_eff)
        t = timing(b)
        rows.append({
            "protocol": protocol,
            "depth": d,
            "b": "-".join(map(str, b)),
            "n": n,
            "eps0": eps0,
            "eps_eff": eps_eff,
            "total_time_s": t,
            "repetition_rate_hz": 1 / t,
            "marker": int(marker),
            "decoherence_modelled": 0,
        })
    return rows


class InsufficientTrials(ValueError):
    def __init__(self, survivors: int, needed: int):
        super().__init__(f"only {survivors} trials passed the success threshold, need at least {needed}")
        self.survivors = survivors


@dataclass(frozen=True)
class FidelityStats:
    threshold: float
    survivors: int
    alpha: float
    beta: float
    mean: float
    ci: tuple[float, float]
    n_photons: int
    tree_mean: float
    tree_ci: tuple[float, float]

    def as_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "survivors": self.survivors,
            "alpha": self.alpha,
            "beta": self.beta,
            "mean": self.mean,
            "ci_low": self.ci[0],
            "ci_high": self.ci[1],
            "n_photons": self.n_photons,
            "tree_mean": self.tree_mean,
            "tree_ci_low": self.tree_ci[0],
            "tree_ci_high": self.tree_ci[1],
        }


def fit_beta_moments(samples: Sequence[float]) -> tuple[float, float]:
    """Beta parameters matching the sample mean and (unbiased) variance; infinite for a zero-variance sample."""
    x = np.asarray(samples, dtype=float)
    mu = float(x.mean())
    if x.size < 2 or np.ptp(x) <= 1e-14 * max(1.0, abs(mu)):
        return math.inf, math.inf
    var = float(x.var(ddof=1))
    if var <= 0:
        return math.inf, math.inf
    common = mu * (1 - mu) / var - 1
    if common <= 0:
        raise ValueError("sample variance is too large for a beta distribution")
    return mu * common, (1 - mu) * common


def fit_fidelity_stats(fidelities: Sequence[float], costs: Sequence[float], loss_limit, preset: str,
                       n_photons: int = 1, min_survivors: int = 5) -> FidelityStats:
    """Beta-distribution summary of the fidelities of converged trials.

    Trials whose cost exceeds ``1 - f (1 - loss_limit)`` are dropped, with ``f = 0.90`` for the single preset and
    ``0.98`` otherwise. The interval is the 2.5% to 97.5% beta quantile range and the tree fidelity raises mean and
    bounds to the power ``n_photons``.
    """
    fid, cost = np.asarray(fidelities, dtype=float), np.asarray(costs, dtype=float)
    limit = np.broadcast_to(np.asarray(loss_limit, dtype=float), cost.shape)
    factor = 0.90 if preset == "single" else 0.98
    threshold = 1 - factor * (1 - limit)
    keep = cost <= threshold
    survivors = int(keep.sum())
    if survivors < min_survivors:
        raise InsufficientTrials(survivors, min_survivors)
    alpha, beta = fit_beta_moments(fid[keep])
    mean = float(fid[keep].mean())
    if math.isinf(alpha):
        ci = (mean, mean)
    else:
        lo, hi = stats.beta.ppf([0.025, 0.975], alpha, beta)
        ci = (float(lo), float(hi))
    return FidelityStats(
        threshold=float(np.mean(threshold)),
        survivors=survivors,
        alpha=alpha,
        beta=beta,
        mean=mean,
        ci=ci,
        n_photons=n_photons,
        tree_mean=mean ** n_photons,
        tree_ci=(ci[0] ** n_photons, ci[1] ** n_photons),
    )
