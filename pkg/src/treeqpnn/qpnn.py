"""Recurrent QPNN system function, cost, fidelity, gradients, loss limit and training.

Two evaluation paths share one parameterization. The reference path in :func:`system_apply` and
:func:`system_matrix` works in the Fock basis with permanents. The training path stores each ``n``-photon state as a
symmetric tensor ``psi[i_1, ..., i_n]`` over mode indices, where a Fock amplitude ``c_S`` appears on each of the
``n! / prod(s!)`` orderings of its mode list with value ``c_S / sqrt(n! / prod(s!))``. A linear layer then acts as the
same ``m x m`` matrix on every tensor axis and the nonlinearity is a fixed phase tensor, which keeps the whole forward
pass differentiable by ``jax``.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence, Union

import jax
import jax.numpy as jnp
import numpy as np
import optax

from .fock import (
    QubitConfiguration,
    StateVector,
    TrainingPair,
    apply_linear,
    apply_nonlinearity,
    computational_indices,
    encode_dual_rail,
    enumerate_basis,
    multiphoton_matrix,
    nonlinear_phases,
    X_BASIS,
    Z_BASIS,
)
from .mesh import (
    HardwareModel,
    MeshComponents,
    MeshParams,
    clements_decompose,
    db_to_amplitude,
    haar_random_unitary,
    mesh_matrix,
    mesh_transfer,
    mzi_count,
    sample_hardware,
)

jax.config.update("jax_enable_x64", True)


def params_per_layer(m: int) -> int:
    return 2 * mzi_count(m) + m


@dataclass(frozen=True, eq=False)
class QPNN:
    """An ``L``-layer, ``m``-mode network with sampled component imperfections.

    Attributes:
        m: number of optical modes
        layers: number of linear meshes, with ``layers - 1`` nonlinear screens between them
        params: phases of shape ``(layers, 2 * m(m-1)/2 + m)``, each row ``theta | phi | output phases``
        components: sampled imperfections of every mesh
        varphi1: single-photon nonlinear phase
        varphi2: additional phase per extra photon in a mode
    """

    m: int
    layers: int
    params: np.ndarray
    components: tuple[MeshComponents, ...]
    varphi1: float = 0.0
    varphi2: float = np.pi

    def __post_init__(self) -> None:
        if self.layers < 1:
            raise ValueError("a QPNN needs at least one layer")
        params = np.array(self.params, dtype=float).reshape(self.layers, params_per_layer(self.m))
        params.flags.writeable = False
        object.__setattr__(self, "params", params)
        if len(self.components) != self.layers or any(c.m != self.m for c in self.components):
            raise ValueError(f"need {self.layers} sets of {self.m}-mode mesh components")

    @classmethod
    def ideal(cls, m: int, layers: int, params: Optional[np.ndarray] = None, **kwargs) -> "QPNN":
        params = np.zeros((layers, params_per_layer(m))) if params is None else params
        return cls(m, layers, params, tuple(MeshComponents.ideal(m) for _ in range(layers)), **kwargs)

    def with_params(self, params: np.ndarray) -> "QPNN":
        return replace(self, params=params)

    def with_components(self, components: Sequence[MeshComponents]) -> "QPNN":
        return replace(self, components=tuple(components))

    def layer_params(self, i: int) -> MeshParams:
        return MeshParams.from_flat(self.m, self.params[i])

    def transfer_matrices(self) -> list[np.ndarray]:
        return [
            mesh_matrix(self.m, p.theta, p.phi, p.out_phases, c)
            for p, c in ((self.layer_params(i), self.components[i]) for i in range(self.layers))
        ]


def initial_qpnn(
    m: int,
    layers: int,
    components: Sequence[MeshComponents],
    rng: np.random.Generator,
    varphi: tuple[float, float] = (0.0, np.pi),
) -> QPNN:
    """Network whose ideal meshes reproduce independent Haar-random unitaries, one per layer."""
    rows = [clements_decompose(haar_random_unitary(m, rng)).flat() for _ in range(layers)]
    return QPNN(m, layers, np.array(rows), tuple(components), *varphi)


def system_apply(net: QPNN, state: StateVector) -> StateVector:
    """Evaluate ``U_L . prod_{i<L} Sigma(varphi1, varphi2) U_i`` on a Fock-basis state."""
    if state.m != net.m:
        raise ValueError(f"state has {state.m} modes but the network has {net.m}")
    for i, u in enumerate(net.transfer_matrices()):
        state = apply_linear(u, state)
        if i < net.layers - 1:
            state = apply_nonlinearity(state, net.varphi1, net.varphi2)
    return state


def system_matrix(net: QPNN, n: int) -> np.ndarray:
    """Matrix of the system function on the ``n``-photon Fock sector."""
    basis = enumerate_basis(net.m, n)
    sigma = nonlinear_phases(basis, net.varphi1, net.varphi2)
    out = np.eye(basis.dim, dtype=complex)
    for i, u in enumerate(net.transfer_matrices()):
        out = multiphoton_matrix(u, n) @ out
        if i < net.layers - 1:
            out = sigma[:, None] * out
    return out


def _embedding(m: int, n: int) -> np.ndarray:
    """Matrix taking Fock amplitudes to the flattened symmetric tensor, shape ``(m**n, dim)``."""
    basis = enumerate_basis(m, n)
    emb = np.zeros((m**n, basis.dim))
    strides = m ** np.arange(n - 1, -1, -1)
    for col, modes in enumerate(basis.mode_lists()):
        perms = set(itertools.permutations(modes))
        for p in perms:
            emb[int(np.dot(p, strides)), col] = 1.0 / np.sqrt(len(perms))
    return emb


@dataclass(frozen=True, eq=False)
class _Sector:
    n: int
    rows: np.ndarray
    psi_in: np.ndarray
    targ_conj: np.ndarray
    cb_mask: np.ndarray
    phase: np.ndarray


@dataclass(frozen=True, eq=False)
class PreparedSet:
    """A training set converted to stacked symmetric tensors grouped by photon number."""

    m: int
    pairs: tuple[TrainingPair, ...]
    sectors: tuple[_Sector, ...]
    varphi: tuple[float, float]

    @property
    def K(self) -> int:
        return len(self.pairs)

    def photon_numbers(self) -> np.ndarray:
        return np.array([p.photons for p in self.pairs])

    @property
    def ns(self) -> tuple[int, ...]:
        return tuple(sec.n for sec in self.sectors)

    @cached_property
    def data(self) -> tuple:
        return tuple(
            tuple(jnp.asarray(a) for a in (sec.rows, sec.psi_in, sec.targ_conj, sec.cb_mask, sec.phase))
            for sec in self.sectors
        )


def prepare_training_set(pairs: Sequence[TrainingPair], m: int, varphi: tuple[float, float] = (0.0, np.pi)) -> PreparedSet:
    if not pairs:
        raise ValueError("the training set is empty")
    groups = defaultdict(list)
    for k, pair in enumerate(pairs):
        if pair.input.m != m:
            raise ValueError(f"training pair {pair.label} lives on {pair.input.m} modes, network has {m}")
        groups[pair.input.n].append(k)
    sectors = []
    for n in sorted(groups):
        rows = np.array(groups[n])
        emb = _embedding(m, n)
        basis = enumerate_basis(m, n)
        psi_in = np.stack([emb @ pairs[k].input.amplitudes for k in rows])
        targ = np.stack([emb @ pairs[k].target.amplitudes for k in rows])
        masks = []
        for k in rows:
            cb = np.zeros(basis.dim)
            cb[computational_indices(pairs[k].config)] = 1.0
            masks.append((emb @ cb) > 0)
        # every tensor entry inherits the phase of the occupation it belongs to
        owner = np.argmax(emb > 0, axis=1)
        phase = nonlinear_phases(basis, *varphi)[owner]
        sectors.append(_Sector(n, rows, psi_in, targ.conj(), np.array(masks, dtype=float), phase))
    return PreparedSet(m, tuple(pairs), tuple(sectors), tuple(varphi))


def _component_arrays(components: Sequence[MeshComponents]):
    amp = np.stack([db_to_amplitude(c.mzi_loss_db) for c in components])
    t_dc = np.stack([c.t_dc for c in components])
    idle = np.stack([db_to_amplitude(c.idle_loss_db) for c in components])
    return amp, t_dc, idle


def _apply_transfer(u, psi, n):
    for axis in range(1, n + 1):
        psi = jnp.moveaxis(jnp.tensordot(u, psi, axes=([1], [axis])), 0, axis)
    return psi


def _forward(m: int, layers: int, ns: tuple, params, amp, t_dc, idle, data):
    """Overlaps with the targets and computational-basis probabilities for every pair, in pair order.

    ``ns`` lists the photon number of each sector and ``data`` holds ``(rows, psi_in, targ_conj, cb_mask, phase)``
    per sector, so compiled code is shared by every training set with the same shapes.
    """
    k = mzi_count(m)
    mats = [
        mesh_transfer(m, params[i, :k], params[i, k:2 * k], params[i, 2 * k:], amp[i], t_dc[i], idle[i], xp=jnp)
        for i in range(layers)
    ]
    total = sum(rows.shape[0] for rows, *_ in data)
    overlaps = jnp.zeros(total, dtype=complex)
    cb_prob = jnp.zeros(total)
    for n, (rows, psi_in, targ_conj, cb_mask, phase) in zip(ns, data):
        batch = rows.shape[0]
        psi = psi_in.reshape((batch,) + (m,) * n)
        phase = phase.reshape((1,) + (m,) * n)
        for i, u in enumerate(mats):
            psi = _apply_transfer(u, psi, n)
            if i < layers - 1:
                psi = psi * phase
        flat = psi.reshape(batch, -1)
        overlaps = overlaps.at[rows].set(jnp.sum(targ_conj * flat, axis=1))
        cb_prob = cb_prob.at[rows].set(jnp.sum(cb_mask * jnp.abs(flat) ** 2, axis=1))
    return overlaps, cb_prob


def _cost_from(m, layers, ns, params, amp, t_dc, idle, data):
    overlaps, _ = _forward(m, layers, ns, params, amp, t_dc, idle, data)
    return 1.0 - jnp.mean(jnp.abs(overlaps) ** 2)


_forward_jit = jax.jit(_forward, static_argnums=(0, 1, 2))
_cost_jit = jax.jit(_cost_from, static_argnums=(0, 1, 2))
_value_and_grad_jit = jax.jit(jax.value_and_grad(_cost_from, argnums=3), static_argnums=(0, 1, 2))


class Evaluator:
    """Cost, gradient and overlap evaluation for one prepared training set and network depth."""

    def __init__(self, prepared: PreparedSet, layers: int):
        self.prepared = prepared
        self.layers = layers
        self.static = (prepared.m, layers, prepared.ns)

    def _args(self, net: QPNN):
        if net.m != self.prepared.m or net.layers != self.layers:
            raise ValueError("network shape does not match the prepared evaluator")
        if (net.varphi1, net.varphi2) != self.prepared.varphi:
            raise ValueError("network nonlinearity differs from the one the training set was prepared with")
        return (*self.static, jnp.asarray(net.params), *_component_arrays(net.components), self.prepared.data)

    def overlaps(self, net: QPNN) -> tuple[np.ndarray, np.ndarray]:
        ov, cb = _forward_jit(*self._args(net))
        return np.asarray(ov), np.asarray(cb)

    def cost(self, net: QPNN) -> float:
        return float(_cost_jit(*self._args(net)))

    def gradient(self, net: QPNN) -> np.ndarray:
        _, grad = _value_and_grad_jit(*self._args(net))
        return np.asarray(grad)


def _evaluator(net: QPNN, training_set: Union[Sequence[TrainingPair], PreparedSet]) -> Evaluator:
    prepared = training_set if isinstance(training_set, PreparedSet) else prepare_training_set(
        training_set, net.m, (net.varphi1, net.varphi2))
    return Evaluator(prepared, net.layers)


def cost(net: QPNN, training_set) -> float:
    """``1 - (1/K) sum_k |<targ_k|S|in_k>|^2``."""
    return _evaluator(net, training_set).cost(net)


def gradient(net: QPNN, training_set) -> np.ndarray:
    """Derivative of the cost with respect to every phase, shaped like ``net.params``."""
    return _evaluator(net, training_set).gradient(net)


def fidelities_from_overlaps(overlaps: np.ndarray, cb_prob: np.ndarray, pairs: Sequence[TrainingPair]) -> dict:
    """Network fidelity and per-operation fidelities, keyed ``"all"`` and by configuration label."""
    if np.any(cb_prob <= 0):
        bad = [pairs[k].config.label + ":" + pairs[k].label for k in np.flatnonzero(cb_prob <= 0)]
        raise ValueError(f"no computational-basis projection for pairs {bad}")
    ratio = np.abs(overlaps) ** 2 / cb_prob
    out = {"all": float(np.mean(ratio))}
    labels = [p.config.label for p in pairs]
    for label in dict.fromkeys(labels):
        out[label] = float(np.mean([r for r, lab in zip(ratio, labels) if lab == label]))
    return out


def fidelity(net: QPNN, training_set, per_operation: bool = False):
    """Mean over pairs of ``|<targ|S|in>|^2`` normalized by the output's computational-basis probability."""
    ev = _evaluator(net, training_set)
    fids = fidelities_from_overlaps(*ev.overlaps(net), ev.prepared.pairs)
    return fids if per_operation else fids["all"]


def mean_mzi_transmission(components: Sequence[MeshComponents]) -> float:
    losses = np.concatenate([c.mzi_loss_db for c in components])
    return float(np.mean(10 ** (-losses / 10))) if losses.size else 1.0


def loss_limit(source: Union[QPNN, Sequence[MeshComponents]], training_set, m: Optional[int] = None,
               layers: Optional[int] = None) -> float:
    """Cost floor set by loss: ``1 - (1/K) sum_k T^{n_k}`` with ``T`` the mean MZI transmission to the ``m L``.

    Args:
        source: a network, or the sampled mesh components of one
        training_set: pairs (or a prepared set) supplying the photon numbers ``n_k``
        m: mode count, required when ``source`` is a component list
        layers: layer count, defaults to the number of component sets

    Returns:
        The loss limit
    """
    components = source.components if isinstance(source, QPNN) else tuple(source)
    m = source.m if isinstance(source, QPNN) else (m or components[0].m)
    layers = layers or len(components)
    pairs = training_set.pairs if isinstance(training_set, PreparedSet) else training_set
    if not pairs:
        raise ValueError("the training set is empty")
    t_photon = mean_mzi_transmission(components) ** (m * layers)
    return float(1.0 - np.mean([t_photon ** p.photons for p in pairs]))


def success_threshold(limit: float, preset: str) -> float:
    """Largest cost a trial may reach and still count as converged for the given hardware preset."""
    factor = 0.90 if preset == "single" else 0.98
    return 1.0 - factor * (1.0 - limit)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 1000
    learning_rate: float = 0.05
    decay: float = 0.9
    decay_period: int = 100
    trials: int = 1
    seed: int = 0
    basis_choice: str = "restricted"

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.decay_period < 1 or self.trials < 1:
            raise ValueError("decay period and trial count must be at least 1")
        if self.basis_choice not in ("restricted", "full"):
            raise ValueError("basis_choice must be 'restricted' or 'full'")

    def trial_seed(self, trial: int) -> int:
        return self.seed ^ trial


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TrainingResult:
    """Outcome of one optimization trial.

    ``trajectory[e]`` is the cost after ``e + 1`` optimizer steps; ``initial_cost`` precedes the first step.
    """

    trial: int
    seed: int
    initial_cost: float
    trajectory: np.ndarray
    best_cost: float
    best_epoch: int
    net: QPNN
    loss_limit: float
    fidelity: float
    op_fidelities: dict = field(default_factory=dict)

    @property
    def final_cost(self) -> float:
        return float(self.trajectory[-1])

    def to_dict(self) -> dict:
        return {
            "trial": self.trial,
            "seed": self.seed,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "best_cost": self.best_cost,
            "best_epoch": self.best_epoch,
            "loss_limit": self.loss_limit,
            "fidelity": self.fidelity,
            "op_fidelities": dict(self.op_fidelities),
            "m": self.net.m,
            "layers": self.net.layers,
            "varphi": [self.net.varphi1, self.net.varphi2],
            "params": self.net.params.tolist(),
            "components": [c.to_dict() for c in self.net.components],
            "trajectory": self.trajectory.tolist(),
        }


def _train_loop(m, layers, ns, epochs, learning_rate, decay, decay_period, params, amp, t_dc, idle, data):
    opt = optax.adam(optax.exponential_decay(learning_rate, decay_period, decay))
    value_and_grad = jax.value_and_grad(_cost_from, argnums=3)

    def step(carry, _):
        p, state, best_c, best_p, best_e, e = carry
        c, g = value_and_grad(m, layers, ns, p, amp, t_dc, idle, data)
        better = c < best_c
        best_c = jnp.where(better, c, best_c)
        best_p = jnp.where(better, p, best_p)
        best_e = jnp.where(better, e, best_e)
        updates, state = opt.update(g, state, p)
        return (optax.apply_updates(p, updates), state, best_c, best_p, best_e, e + 1), c

    init = (params, opt.init(params), jnp.inf, params, jnp.asarray(0), jnp.asarray(0))
    (p, _, best_c, best_p, best_e, _), costs = jax.lax.scan(step, init, None, length=epochs)
    final = _cost_from(m, layers, ns, p, amp, t_dc, idle, data)
    better = final < best_c
    best_p = jnp.where(better, p, best_p)
    best_e = jnp.where(better, epochs, best_e)
    return costs, final, jnp.minimum(final, best_c), best_p, best_e


_train_loop_jit = jax.jit(_train_loop, static_argnums=tuple(range(7)))


class Trainer:
    """Adam loop with exponential learning-rate decay for a fixed training set and network shape."""

    def __init__(self, prepared: PreparedSet, layers: int, config: TrainingConfig):
        self.prepared = prepared
        self.layers = layers
        self.config = config
        self.evaluator = Evaluator(prepared, layers)
        self.static = (prepared.m, layers, prepared.ns, config.epochs, config.learning_rate, config.decay,
                       config.decay_period)

    def train(self, net: QPNN, trial: int = 0, seed: Optional[int] = None) -> TrainingResult:
        if net.m != self.prepared.m or net.layers != self.layers:
            raise ValueError("network shape does not match the trainer")
        arrays = _component_arrays(net.components)
        costs, final, best_c, best_p, best_e = _train_loop_jit(
            *self.static, jnp.asarray(net.params), *arrays, self.prepared.data)
        costs = np.asarray(costs)
        trajectory = np.append(costs[1:], float(final))
        if not np.all(np.isfinite(trajectory)) or not np.isfinite(costs[0]):
            bad = int(np.argmax(~np.isfinite(np.append(costs, float(final)))))
            raise TrainingDiverged(f"trial {trial}: cost became non-finite at epoch {bad}")
        best = net.with_params(np.asarray(best_p))
        fids = fidelities_from_overlaps(*self.evaluator.overlaps(best), self.prepared.pairs)
        return TrainingResult(
            trial=trial,
            seed=self.config.seed if seed is None else seed,
            initial_cost=float(costs[0]),
            trajectory=trajectory,
            best_cost=float(best_c),
            best_epoch=int(best_e),
            net=best,
            loss_limit=loss_limit(best, self.prepared),
            fidelity=fids.pop("all"),
            op_fidelities=fids,
        )


def train(net: QPNN, training_set, config: TrainingConfig) -> TrainingResult:
    """Optimize ``net`` from its current phases for exactly ``config.epochs`` Adam steps."""
    prepared = training_set if isinstance(training_set, PreparedSet) else prepare_training_set(
        training_set, net.m, (net.varphi1, net.varphi2))
    return Trainer(prepared, net.layers, config).train(net)


def run_trials(
    m: int,
    layers: int,
    hardware: HardwareModel,
    training_set,
    config: TrainingConfig,
    varphi: tuple[float, float] = (0.0, np.pi),
    trials: Optional[Sequence[int]] = None,
) -> list[Union[TrainingResult, TrainingDiverged]]:
    """Independent trials, each with freshly sampled hardware and a Haar-random Clements initialization.

    Trial ``t`` draws everything from a generator seeded with ``config.seed ^ t``. Diverged trials are returned as
    their :class:`TrainingDiverged` diagnostic instead of a result.
    """
    prepared = training_set if isinstance(training_set, PreparedSet) else prepare_training_set(training_set, m, varphi)
    trainer = Trainer(prepared, layers, config)
    out = []
    for t in (range(config.trials) if trials is None else trials):
        seed = config.trial_seed(t)
        rng = np.random.default_rng(seed)
        components = sample_hardware(hardware, m, layers, rng)
        net = initial_qpnn(m, layers, components, rng, varphi)
        try:
            out.append(trainer.train(net, trial=t, seed=seed))
        except TrainingDiverged as err:
            out.append(err)
    return out


def hinton_data(net: QPNN, config: QubitConfiguration, basis: str, restricted_inputs: bool = False):
    """Transfer amplitudes between dual-rail product states of one basis.

    Args:
        net: trained network
        config: slot occupancy of the operation
        basis: ``"X"`` or ``"Z"``
        restricted_inputs: keep only inputs whose first PRESENT qubit is ``|+>`` (X basis only)

    Returns:
        ``(input_labels, output_labels, matrix)`` where ``matrix[i, o] = <out_o|S|in_i>``
    """
    states = {"X": X_BASIS, "Z": Z_BASIS}[basis]
    present = config.present
    logicals = []
    for combo in itertools.product(states, repeat=len(present)):
        logical = [None] * len(config.slots)
        for slot, q in zip(present, combo):
            logical[slot] = q
        logicals.append(tuple(logical))
    vecs = [encode_dual_rail(config, lg).amplitudes for lg in logicals]
    inputs = [i for i, lg in enumerate(logicals) if not restricted_inputs or lg[present[0]] == "+"]
    s = system_matrix(net, config.photons)
    mat = np.array([[np.vdot(vecs[o], s @ vecs[i]) for o in range(len(vecs))] for i in inputs])
    label = lambda lg: "".join("∅" if q is None else q for q in lg)
    return [label(logicals[i]) for i in inputs], [label(lg) for lg in logicals], mat
