"""Imperfect photonic components, rectangular (Clements) MZI meshes and hardware loss presets.

Each MZI is two directional couplers around an internal phase ``2 theta`` with an external phase ``phi`` on the upper
input arm. With balanced, lossless couplers its transfer matrix is

    e^{i theta} [[e^{i phi} cos(theta), -sin(theta)],
                 [e^{i phi} sin(theta),  cos(theta)]]

so ``theta = 0`` is the bar state and ``theta = pi/2`` the cross state. A mesh of ``m`` modes has ``m`` columns; column
``c`` holds MZIs on mode pairs ``(p, p + 1)`` with ``p = c mod 2``. Parameters are ordered column by column, top to
bottom, and an output phase screen follows the last column. Modes left unpaired at the edge of a column pass through
an idle section carrying its own sampled loss, so every photon crosses exactly ``m`` lossy units per mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import minimize_scalar

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class DirectionalCoupler:
    """Two-mode coupler with power transmission ``t`` and insertion loss in dB."""

    t: float = 0.5
    loss_db: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"coupler transmission must lie in [0, 1], got {self.t}")
        if self.loss_db < 0:
            raise ValueError(f"coupler loss must be non-negative, got {self.loss_db}")


@dataclass(frozen=True)
class MZIComponent:
    """A Mach-Zehnder interferometer; ``loss_db`` is the total insertion loss of the unit."""

    dc1: DirectionalCoupler = DirectionalCoupler()
    dc2: DirectionalCoupler = DirectionalCoupler()
    theta: float = 0.0
    phi: float = 0.0
    loss_db: float = 0.0


def _mzi_entries(theta, phi, t1, t2, amplitude, xp=np):
    s1, r1 = xp.sqrt(t1), xp.sqrt(1 - t1)
    s2, r2 = xp.sqrt(t2), xp.sqrt(1 - t2)
    e2 = xp.exp(2j * theta)
    ephi = xp.exp(1j * phi)
    t00 = amplitude * ephi * (s1 * s2 * e2 + r1 * r2)
    t01 = amplitude * 1j * (s2 * r1 * e2 - r2 * s1)
    t10 = amplitude * 1j * ephi * (s2 * r1 - r2 * s1 * e2)
    t11 = amplitude * (r1 * r2 * e2 + s1 * s2)
    return t00, t01, t10, t11


def db_to_amplitude(loss_db):
    return 10 ** (-np.asarray(loss_db) / 20)


def mzi_matrix(theta: float, phi: float, t1: float = 0.5, t2: float = 0.5, loss_db: float = 0.0) -> np.ndarray:
    """2x2 transfer ``dc2 . diag(e^{2i theta}, 1) . dc1 . diag(e^{i phi}, 1)`` scaled by ``10^(-loss_db/20)``.

    Couplers act as ``[[sqrt(t), i sqrt(1-t)], [i sqrt(1-t), sqrt(t)]]`` (first) and with ``-i`` cross terms
    (second), so balanced couplers at ``theta = 0`` give the identity.
    """
    t00, t01, t10, t11 = _mzi_entries(theta, phi, t1, t2, db_to_amplitude(loss_db))
    return np.array([[t00, t01], [t10, t11]], dtype=complex)


def mzi_transfer(unit: MZIComponent) -> np.ndarray:
    return mzi_matrix(unit.theta, unit.phi, unit.dc1.t, unit.dc2.t, unit.loss_db)


def extinction_ratio_db(transfer: np.ndarray, port: int = 0) -> float:
    """Ratio in dB between the brighter and dimmer output powers for light entering ``port``."""
    powers = np.abs(np.asarray(transfer)[:, port]) ** 2
    dim = powers.min()
    return float("inf") if dim == 0 else float(10 * np.log10(powers.max() / dim))


def best_switching_extinction_db(t1: float, t2: float, state: str) -> float:
    """Highest extinction reachable near the bar (``theta ~ 0``) or cross (``theta ~ pi/2``) setting.

    The internal phase is optimized within a quarter period of the nominal setting.
    """
    centre = {"bar": 0.0, "cross": np.pi / 2}[state]
    dark = (lambda th: abs(mzi_matrix(th, 0.0, t1, t2)[1, 0])) if state == "bar" else (
        lambda th: abs(mzi_matrix(th, 0.0, t1, t2)[0, 0])
    )
    res = minimize_scalar(dark, bounds=(centre - np.pi / 4, centre + np.pi / 4), method="bounded",
                          options={"xatol": 1e-12})
    return extinction_ratio_db(mzi_matrix(res.x, 0.0, t1, t2))


@dataclass(frozen=True)
class HardwareModel:
    """Loss and imbalance distributions of every photonic element, in dB unless stated otherwise."""

    name: str
    dc_loss_db: float
    ps_loss_db: float
    switch_loss_db_per_stage: float
    coupling_loss_db: float
    mzi_loss_mean_db: float
    mzi_loss_sigma_db: float
    dc_split_mean: float = 0.5
    dc_split_sigma: float = 0.005
    fiber_loss_db_per_km: float = 0.17
    group_index: float = 1.462

    def __post_init__(self) -> None:
        for key in ("dc_loss_db", "ps_loss_db", "switch_loss_db_per_stage", "coupling_loss_db", "mzi_loss_mean_db",
                    "mzi_loss_sigma_db", "dc_split_sigma", "fiber_loss_db_per_km"):
            if getattr(self, key) < 0:
                raise ValueError(f"{key} must be non-negative")
        if not 0 <= self.dc_split_mean <= 1:
            raise ValueError("dc_split_mean must lie in [0, 1]")
        if self.group_index <= 0:
            raise ValueError("group_index must be positive")

    def component_sum_db(self) -> float:
        """MZI loss implied by its parts: two couplers and two phase shifters."""
        return 2 * self.dc_loss_db + 2 * self.ps_loss_db

    def with_overrides(self, **kwargs) -> "HardwareModel":
        name = kwargs.pop("name", "custom" if kwargs else self.name)
        return replace(self, name=name, **kwargs)

    def scaled(self, factor: float) -> "HardwareModel":
        """Scale every on-chip and coupling loss by ``factor``; fiber is left untouched."""
        if factor < 0:
            raise ValueError("loss scale factor must be non-negative")
        keys = ("dc_loss_db", "ps_loss_db", "switch_loss_db_per_stage", "coupling_loss_db", "mzi_loss_mean_db",
                "mzi_loss_sigma_db")
        return replace(self, name=f"{self.name}x{factor:g}", **{k: getattr(self, k) * factor for k in keys})

    def delay_meters(self, seconds: float) -> float:
        return seconds * SPEED_OF_LIGHT / self.group_index

    def fiber_loss_db(self, meters: float) -> float:
        return meters / 1000 * self.fiber_loss_db_per_km


PRESETS = {
    "single": HardwareModel("single", 0.0005, 0.106, 0.107, 0.120, 0.2130, 0.0124),
    "multi": HardwareModel("multi", 0.0005, 0.010, 0.061, 0.120, 0.0210, 0.0016),
    "future": HardwareModel("future", 0.00005, 0.001, 0.0061, 0.0120, 0.00210, 0.00016),
    "ideal": HardwareModel("ideal", 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, dc_split_sigma=0.0, fiber_loss_db_per_km=0.0),
}


def hardware_preset(name: str) -> HardwareModel:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown hardware preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class ColumnLayout:
    tops: np.ndarray
    idle: np.ndarray
    first: int


@lru_cache(maxsize=None)
def clements_layout(m: int) -> tuple[ColumnLayout, ...]:
    """Per-column MZI top modes, idle edge modes and the index of the column's first MZI parameter."""
    if m < 1:
        raise ValueError("a mesh needs at least one mode")
    cols, first = [], 0
    for c in range(m):
        tops = np.arange(c % 2, m - 1, 2)
        covered = set(tops) | set(tops + 1)
        idle = np.array([k for k in range(m) if k not in covered], dtype=np.int64)
        cols.append(ColumnLayout(tops, idle, first))
        first += len(tops)
    return tuple(cols)


def mzi_count(m: int) -> int:
    return m * (m - 1) // 2


def idle_count(m: int) -> int:
    return sum(len(col.idle) for col in clements_layout(m))


@dataclass(frozen=True, eq=False)
class MeshComponents:
    """Sampled imperfections of one mesh: per-MZI loss and coupler splits plus idle-section losses."""

    m: int
    mzi_loss_db: np.ndarray
    t_dc: np.ndarray
    idle_loss_db: np.ndarray

    def __post_init__(self) -> None:
        if np.shape(self.mzi_loss_db) != (mzi_count(self.m),) or np.shape(self.t_dc) != (mzi_count(self.m), 2):
            raise ValueError(f"component arrays are not sized for a {self.m}-mode mesh")
        if np.shape(self.idle_loss_db) != (idle_count(self.m),):
            raise ValueError(f"idle losses are not sized for a {self.m}-mode mesh")

    @classmethod
    def ideal(cls, m: int) -> "MeshComponents":
        return cls.uniform(m, 0.0)

    @classmethod
    def uniform(cls, m: int, loss_db: float, t: float = 0.5) -> "MeshComponents":
        return cls(m, np.full(mzi_count(m), float(loss_db)), np.full((mzi_count(m), 2), float(t)),
                   np.full(idle_count(m), float(loss_db)))

    def mean_transmission(self) -> float:
        """Mean power transmission over every lossy unit a photon may cross."""
        losses = np.concatenate((self.mzi_loss_db, self.idle_loss_db))
        return float(np.mean(10 ** (-losses / 10))) if losses.size else 1.0

    def to_dict(self) -> dict:
        return {"mzi_loss_db": self.mzi_loss_db.tolist(), "t_dc": self.t_dc.tolist(),
                "idle_loss_db": self.idle_loss_db.tolist()}


def sample_mesh_components(model: HardwareModel, m: int, rng: np.random.Generator) -> MeshComponents:
    """Draw MZI losses (clamped at zero), coupler splits (clamped to [0, 1]) and idle losses for one mesh."""
    n_mzi, n_idle = mzi_count(m), idle_count(m)
    loss = np.maximum(rng.normal(model.mzi_loss_mean_db, model.mzi_loss_sigma_db, n_mzi), 0.0)
    t_dc = np.clip(rng.normal(model.dc_split_mean, model.dc_split_sigma, (n_mzi, 2)), 0.0, 1.0)
    idle = np.maximum(rng.normal(model.mzi_loss_mean_db, model.mzi_loss_sigma_db, n_idle), 0.0)
    return MeshComponents(m, loss, t_dc, idle)


def sample_hardware(
    model: HardwareModel, m: int, layers: int = 1, seed: Union[int, np.random.Generator, None] = None
) -> tuple[MeshComponents, ...]:
    """Sample the imperfections of ``layers`` independent ``m``-mode meshes, deterministically given ``seed``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return tuple(sample_mesh_components(model, m, rng) for _ in range(layers))


@dataclass(frozen=True, eq=False)
class MeshParams:
    """Programmable phases of one mesh: ``theta`` and ``phi`` per MZI and one output phase per mode."""

    theta: np.ndarray
    phi: np.ndarray
    out_phases: np.ndarray

    @property
    def m(self) -> int:
        return len(self.out_phases)

    def flat(self) -> np.ndarray:
        return np.concatenate((self.theta, self.phi, self.out_phases))

    @classmethod
    def from_flat(cls, m: int, values: Sequence[float]) -> "MeshParams":
        values = np.asarray(values, dtype=float)
        k = mzi_count(m)
        if values.shape != (2 * k + m,):
            raise ValueError(f"expected {2 * k + m} phases for a {m}-mode mesh, got {values.shape}")
        return cls(values[:k], values[k:2 * k], values[2 * k:])


def _selector(m: int, modes: np.ndarray) -> np.ndarray:
    sel = np.zeros((m, len(modes)))
    sel[modes, np.arange(len(modes))] = 1.0
    return sel


@lru_cache(maxsize=None)
def _selectors(m: int):
    out = []
    for col in clements_layout(m):
        out.append((_selector(m, col.tops), _selector(m, col.tops + 1), _selector(m, col.idle)))
    return tuple(out)


def mesh_transfer(m: int, theta, phi, out_phases, mzi_amp, t_dc, idle_amp, xp=np):
    """Transfer matrix of a rectangular mesh, written against an array namespace ``xp`` (numpy or jax.numpy).

    Args:
        m: number of modes
        theta: internal phases, one per MZI in layout order
        phi: external phases, one per MZI in layout order
        out_phases: output phase screen, one per mode
        mzi_amp: amplitude transmission of each MZI
        t_dc: coupler power transmissions, shape ``(n_mzi, 2)``
        idle_amp: amplitude transmission of each idle edge section, in column order
        xp: array namespace used for the arithmetic

    Returns:
        ``m x m`` complex matrix ``D . C_{m-1} ... C_0``
    """
    u = xp.eye(m, dtype=complex)
    idle_at = 0
    for col, (top, bot, idle) in zip(clements_layout(m), _selectors(m)):
        k = slice(col.first, col.first + len(col.tops))
        t00, t01, t10, t11 = _mzi_entries(theta[k], phi[k], t_dc[k, 0], t_dc[k, 1], mzi_amp[k], xp)
        step = (top * t00) @ top.T + (top * t01) @ bot.T + (bot * t10) @ top.T + (bot * t11) @ bot.T
        if len(col.idle):
            step = step + (idle * idle_amp[idle_at:idle_at + len(col.idle)]) @ idle.T
            idle_at += len(col.idle)
        u = step @ u
    return xp.exp(1j * out_phases)[:, None] * u


def mesh_matrix(m: int, theta, phi, out_phases, components: Optional[MeshComponents] = None) -> np.ndarray:
    """Numpy transfer matrix of a mesh with the given phases and sampled imperfections (ideal when omitted)."""
    components = components if components is not None else MeshComponents.ideal(m)
    if components.m != m:
        raise ValueError(f"components describe a {components.m}-mode mesh, not {m}")
    return mesh_transfer(m, np.asarray(theta), np.asarray(phi), np.asarray(out_phases),
                         db_to_amplitude(components.mzi_loss_db), components.t_dc,
                         db_to_amplitude(components.idle_loss_db))


def build_mesh(m: int, params: MeshParams, components: Optional[MeshComponents] = None) -> np.ndarray:
    if params.m != m or len(params.theta) != mzi_count(m) or len(params.phi) != mzi_count(m):
        raise ValueError(f"parameters are not sized for a {m}-mode mesh")
    return mesh_matrix(m, params.theta, params.phi, params.out_phases, components)


def haar_random_unitary(m: int, seed: Union[int, np.random.Generator, None] = None) -> np.ndarray:
    """Haar-distributed unitary from the QR factorization of a complex Ginibre matrix with phase correction."""
    if m < 1:
        raise ValueError("unitary dimension must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = (rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


_ZERO = 1e-14


def _null_right(u: np.ndarray, row: int, col: int) -> tuple[float, float]:
    a, b = u[row, col], u[row, col + 1]
    theta = np.arctan2(abs(a), abs(b))
    phi = np.angle(a) - np.angle(b) if abs(a) > _ZERO else 0.0
    return theta, phi


def _null_left(u: np.ndarray, row: int, col: int) -> tuple[float, float]:
    a, b = u[row, col], u[row + 1, col]
    theta = np.arctan2(abs(b), abs(a))
    phi = np.pi + np.angle(b) - np.angle(a) if abs(b) > _ZERO else 0.0
    return theta, phi


def _embed(m: int, top: int, block: np.ndarray) -> np.ndarray:
    full = np.eye(m, dtype=complex)
    full[top:top + 2, top:top + 2] = block
    return full


def _swap_through_phases(v: np.ndarray) -> tuple[float, float, complex, complex]:
    """Write a 2x2 unitary ``v`` as ``diag(g1, g2) . M(theta, phi)`` with ``M`` the ideal MZI matrix."""
    theta = np.arctan2(abs(v[1, 0]), abs(v[1, 1]))
    c, s = np.cos(theta), np.sin(theta)
    w1, w2 = -v[0, 0] * np.conj(v[0, 1]), v[1, 0] * np.conj(v[1, 1])
    w = w1 if abs(w1) >= abs(w2) else w2
    phi = float(np.angle(w)) if abs(w) > _ZERO else 0.0
    ephi = np.exp(1j * phi)
    if c >= s:
        a1, a2 = v[0, 0] / (ephi * c), v[1, 1] / c
    else:
        a1, a2 = -v[0, 1] / s, v[1, 0] / (ephi * s)
    eth = np.exp(1j * theta)
    return theta, phi, a1 / eth, a2 / eth


def clements_decompose(u: np.ndarray, atol: float = 1e-8) -> MeshParams:
    """Phases that make an ideal rectangular mesh reproduce the unitary ``u``.

    Args:
        u: ``m x m`` unitary matrix
        atol: tolerance on ``u^dagger u = I``

    Returns:
        Mesh parameters in layout order
    """
    u = np.array(u, dtype=complex)
    m = u.shape[0]
    if u.shape != (m, m) or not np.allclose(u.conj().T @ u, np.eye(m), atol=atol):
        raise ValueError("clements_decompose needs a square unitary matrix")

    right, left = [], []
    for i in range(1, m):
        if i % 2:
            for j in range(i):
                row, col = m - 1 - j, i - 1 - j
                theta, phi = _null_right(u, row, col)
                u = u @ _embed(m, col, mzi_matrix(theta, phi)).conj().T
                right.append((col, theta, phi))
        else:
            for j in range(1, i + 1):
                row, col = m + j - i - 2, j - 1
                theta, phi = _null_left(u, row, col)
                u = _embed(m, row, mzi_matrix(theta, phi)) @ u
                left.append((row, theta, phi))

    # u is now diagonal D with D = L_s ... L_1 U R_1^dag ... R_r^dag; push each L^dag through D
    diag = np.diagonal(u).copy()
    moved = []
    for top, theta, phi in reversed(left):
        block = mzi_matrix(theta, phi).conj().T @ np.diag(diag[top:top + 2])
        theta2, phi2, g1, g2 = _swap_through_phases(block)
        diag[top], diag[top + 1] = g1, g2
        moved.append((top, theta2, phi2))

    # application order: R_1 .. R_r, then M'_s .. M'_1 (the order in which they were moved)
    sequence = right + moved
    layout = clements_layout(m)
    slot = {(c, int(p)): col.first + n for c, col in enumerate(layout) for n, p in enumerate(col.tops)}
    theta_out, phi_out = np.zeros(mzi_count(m)), np.zeros(mzi_count(m))
    depth = np.zeros(m, dtype=int)
    filled = set()
    for top, theta, phi in sequence:
        c = max(depth[top], depth[top + 1])
        if c % 2 != top % 2:
            c += 1
        depth[top] = depth[top + 1] = c + 1
        k = slot[(c, top)]
        filled.add(k)
        theta_out[k], phi_out[k] = theta, phi
    assert len(filled) == mzi_count(m), "decomposition did not fill the rectangular layout"
    return MeshParams(theta_out, phi_out, np.angle(diag))
