"""Few-photon Fock-space states, multi-photon linear optics and dual-rail qubit encoding.

States live in a fixed-photon-number sector of ``m`` optical modes. Basis states are occupation vectors ordered
lexicographically descending, e.g. for ``m = 2, n = 2``: ``(2, 0), (1, 1), (0, 2)``. A dual-rail qubit occupies
modes ``(2k, 2k + 1)`` (zero-indexed) with logical ``|0>`` being the photon in the upper mode ``2k``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, factorial, prod
from typing import Iterable, Optional, Sequence, Union

import numpy as np

SQRT_HALF = 1.0 / np.sqrt(2.0)

# single-qubit dual-rail amplitudes (upper mode, lower mode)
QUBIT_STATES = {
    "0": (1.0, 0.0),
    "1": (0.0, 1.0),
    "+": (SQRT_HALF, SQRT_HALF),
    "-": (SQRT_HALF, -SQRT_HALF),
}
X_BASIS = ("+", "-")
Z_BASIS = ("0", "1")
ABSENT_SYMBOL = "∅"

Occupation = tuple[int, ...]


@dataclass(frozen=True, eq=False)
class FockBasis:
    """Ordered basis of the ``n``-photon sector over ``m`` modes.

    Attributes:
        m: number of optical modes
        n: number of photons
        states: occupation vectors, lexicographically descending
        index: map from occupation vector to its position in ``states``
    """

    m: int
    n: int
    states: tuple[Occupation, ...]
    index: dict = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.states)

    def __len__(self) -> int:
        return len(self.states)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, FockBasis) and (self.m, self.n) == (other.m, other.n)

    def __hash__(self) -> int:
        return hash((self.m, self.n))

    def mode_lists(self) -> np.ndarray:
        """Each basis state as the sorted list of modes its photons occupy, shape ``(dim, n)``."""
        return _mode_lists(self.m, self.n)


def _descending(m: int, n: int) -> list[Occupation]:
    if m == 1:
        return [(n,)]
    out = []
    for first in range(n, -1, -1):
        out.extend((first,) + rest for rest in _descending(m - 1, n - first))
    return out


@lru_cache(maxsize=None)
def enumerate_basis(m: int, n: int) -> FockBasis:
    """Build the complete ``n``-photon, ``m``-mode Fock basis.

    Args:
        m: number of modes, at least 1
        n: number of photons, at least 0

    Returns:
        The basis, with ``binomial(n + m - 1, n)`` states
    """
    if m < 1 or n < 0:
        raise ValueError(f"need m >= 1 and n >= 0, got m={m}, n={n}")
    states = tuple(_descending(m, n))
    assert len(states) == comb(n + m - 1, n)
    return FockBasis(m=m, n=n, states=states, index={s: i for i, s in enumerate(states)})


@lru_cache(maxsize=None)
def _mode_lists(m: int, n: int) -> np.ndarray:
    basis = enumerate_basis(m, n)
    out = np.zeros((basis.dim, n), dtype=np.int64)
    for i, occ in enumerate(basis.states):
        out[i] = [k for k, c in enumerate(occ) for _ in range(c)]
    out.flags.writeable = False
    return out


def permanent(a: np.ndarray) -> Union[complex, np.ndarray]:
    """Permanent of a square matrix, or of a stack of them along the last two axes.

    Matrices up to 5x5 are expanded directly over permutations; larger ones use Glynn's formula.
    """
    a = np.asarray(a)
    n = a.shape[-1]
    if a.shape[-2] != n:
        raise ValueError(f"permanent needs square matrices, got shape {a.shape}")
    if n == 0:
        res = np.ones(a.shape[:-2], dtype=a.dtype)
    elif n <= 5:
        res = np.zeros(a.shape[:-2], dtype=np.result_type(a.dtype, np.complex128))
        rows = np.arange(n)
        for sigma in itertools.permutations(range(n)):
            res = res + np.prod(a[..., rows, sigma], axis=-1)
    else:
        # Glynn: perm(A) = 2^{1-n} sum_d (prod_k d_k) prod_j sum_i d_i a_ij, with d_0 = +1
        signs = np.array(list(itertools.product((1.0, -1.0), repeat=n - 1)))
        deltas = np.hstack((np.ones((len(signs), 1)), signs))
        weights = np.prod(deltas, axis=1)
        row_sums = np.einsum("di,...ij->...dj", deltas, a)
        res = np.einsum("d,...d->...", weights, np.prod(row_sums, axis=-1)) / 2 ** (n - 1)
    return res[()] if res.ndim == 0 else res


def multiphoton_matrix(transfer: np.ndarray, n: int) -> np.ndarray:
    """Representation of a single-photon transfer matrix on the ``n``-photon Fock sector.

    Element ``[T, S]`` is ``perm(transfer[T|S]) / sqrt(prod(s!) prod(t!))`` where ``transfer[T|S]`` repeats rows
    by the output occupation ``T`` and columns by the input occupation ``S``.

    Args:
        transfer: ``m x m`` complex matrix, not necessarily unitary
        n: photon number

    Returns:
        ``dim x dim`` matrix in the ordering of ``enumerate_basis(m, n)``
    """
    transfer = np.asarray(transfer, dtype=complex)
    m = transfer.shape[0]
    if transfer.shape != (m, m):
        raise ValueError(f"transfer matrix must be square, got {transfer.shape}")
    basis = enumerate_basis(m, n)
    lists = basis.mode_lists()
    norms = np.array([np.sqrt(float(prod(factorial(c) for c in occ))) for occ in basis.states])
    sub = transfer[lists[:, None, :, None], lists[None, :, None, :]]
    return permanent(sub) / np.outer(norms, norms)


@dataclass(frozen=True, eq=False)
class StateVector:
    """Complex amplitudes over a Fock basis; loss may leave the state sub-normalized."""

    basis: FockBasis
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.shape != (self.basis.dim,):
            raise ValueError(f"expected {self.basis.dim} amplitudes, got shape {amps.shape}")
        if np.vdot(amps, amps).real > 1.0 + 1e-12:
            raise ValueError("state norm exceeds one; linear optics here can only remove amplitude")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_dict(cls, m: int, terms: dict) -> "StateVector":
        """Build a state from ``{occupation: amplitude}``; all occupations must share one photon number."""
        ns = {sum(occ) for occ in terms}
        if len(ns) != 1:
            raise ValueError("all occupations of a state must carry the same photon number")
        basis = enumerate_basis(m, ns.pop())
        amps = np.zeros(basis.dim, dtype=complex)
        for occ, amp in terms.items():
            if len(occ) != m:
                raise ValueError(f"occupation {occ} does not have {m} modes")
            amps[basis.index[tuple(occ)]] += amp
        return cls(basis, amps)

    @classmethod
    def basis_state(cls, occupation: Sequence[int]) -> "StateVector":
        return cls.from_dict(len(occupation), {tuple(occupation): 1.0})

    @property
    def m(self) -> int:
        return self.basis.m

    @property
    def n(self) -> int:
        return self.basis.n

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def inner(self, other: "StateVector") -> complex:
        """Return ``<self|other>``."""
        if self.basis != other.basis:
            raise ValueError("states live in different Fock sectors")
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def amplitude(self, occupation: Sequence[int]) -> complex:
        return complex(self.amplitudes[self.basis.index[tuple(occupation)]])

    def terms(self, tol: float = 0.0) -> dict:
        return {occ: complex(a) for occ, a in zip(self.basis.states, self.amplitudes) if abs(a) > tol}

    def allclose(self, other: "StateVector", atol: float = 1e-10) -> bool:
        return self.basis == other.basis and bool(np.allclose(self.amplitudes, other.amplitudes, rtol=0, atol=atol))

    def to_text(self) -> str:
        """Serialize as a header ``fock m=<m> n=<n>`` followed by one ``occupation re im`` line per nonzero term."""
        lines = [f"fock m={self.m} n={self.n}"]
        for occ, a in zip(self.basis.states, self.amplitudes):
            if a != 0:
                lines.append(" ".join(str(c) for c in occ) + f" {a.real:.17g} {a.imag:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "StateVector":
        rows = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
        head = rows[0]
        if len(head) != 3 or head[0] != "fock":
            raise ValueError(f"bad state header: {' '.join(head)!r}")
        m = int(head[1].removeprefix("m="))
        n = int(head[2].removeprefix("n="))
        basis = enumerate_basis(m, n)
        amps = np.zeros(basis.dim, dtype=complex)
        for row in rows[1:]:
            if len(row) != m + 2:
                raise ValueError(f"expected {m} occupations and two reals, got {row}")
            occ = tuple(int(c) for c in row[:m])
            amps[basis.index[occ]] = complex(float(row[m]), float(row[m + 1]))
        return cls(basis, amps)


def apply_linear(transfer: np.ndarray, state: StateVector) -> StateVector:
    """Propagate a multi-photon state through a linear optical network with the given transfer matrix."""
    transfer = np.asarray(transfer, dtype=complex)
    if transfer.shape != (state.m, state.m):
        raise ValueError(f"transfer matrix {transfer.shape} does not act on {state.m} modes")
    return StateVector(state.basis, multiphoton_matrix(transfer, state.n) @ state.amplitudes)


def nonlinear_phases(basis: FockBasis, varphi1: float, varphi2: float) -> np.ndarray:
    """Diagonal of the single-site nonlinearity: each occupied mode with ``k`` photons adds ``varphi1 + (k-1) varphi2``."""
    occ = np.array(basis.states, dtype=float).reshape(basis.dim, basis.m)
    phase = np.where(occ >= 1, varphi1 + (occ - 1) * varphi2, 0.0).sum(axis=1)
    return np.exp(1j * phase)


def apply_nonlinearity(state: StateVector, varphi1: float, varphi2: float) -> StateVector:
    return StateVector(state.basis, nonlinear_phases(state.basis, varphi1, varphi2) * state.amplitudes)


@dataclass(frozen=True)
class QubitConfiguration:
    """Which dual-rail qubit slots carry a photon; slot ``k`` owns modes ``2k`` and ``2k + 1``."""

    slots: tuple[bool, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "slots", tuple(bool(s) for s in self.slots))
        if not self.slots:
            raise ValueError("a configuration needs at least one slot")

    @classmethod
    def from_pattern(cls, pattern: str) -> "QubitConfiguration":
        """Parse e.g. ``"101"`` (``1`` present, ``0`` absent)."""
        if set(pattern) - {"0", "1"}:
            raise ValueError(f"pattern must contain only 0/1, got {pattern!r}")
        return cls(tuple(c == "1" for c in pattern))

    @property
    def label(self) -> str:
        return "".join("1" if s else "0" for s in self.slots)

    @property
    def modes(self) -> int:
        return 2 * len(self.slots)

    @property
    def photons(self) -> int:
        return sum(self.slots)

    @property
    def present(self) -> tuple[int, ...]:
        return tuple(k for k, s in enumerate(self.slots) if s)

    def pair(self, slot: int) -> tuple[int, int]:
        return 2 * slot, 2 * slot + 1


def computational_basis(config: QubitConfiguration) -> list[tuple[Occupation, str]]:
    """Fock states obeying the dual-rail encoding of ``config``, each with its logical bit string.

    Bit strings list one bit per PRESENT slot, in slot order.
    """
    out = []
    for bits in itertools.product("01", repeat=config.photons):
        occ = [0] * config.modes
        for slot, bit in zip(config.present, bits):
            occ[2 * slot + int(bit)] = 1
        out.append((tuple(occ), "".join(bits)))
    return out


def computational_indices(config: QubitConfiguration) -> np.ndarray:
    basis = enumerate_basis(config.modes, config.photons)
    return np.array([basis.index[occ] for occ, _ in computational_basis(config)], dtype=np.int64)


def _logical_bits(config: QubitConfiguration, occ: Occupation) -> Optional[tuple[int, ...]]:
    bits = []
    for slot, present in enumerate(config.slots):
        upper, lower = occ[2 * slot], occ[2 * slot + 1]
        if not present:
            if upper or lower:
                return None
        elif (upper, lower) == (1, 0):
            bits.append(0)
        elif (upper, lower) == (0, 1):
            bits.append(1)
        else:
            return None
    return tuple(bits)


def encode_dual_rail(
    config: QubitConfiguration, logical: Sequence[Optional[Union[str, Sequence[complex]]]]
) -> StateVector:
    """Dual-rail encode a product of single-qubit states.

    Args:
        config: slot occupancy
        logical: one entry per slot; ``None`` for ABSENT slots, otherwise ``"0"``, ``"1"``, ``"+"``, ``"-"`` or a
            pair of amplitudes ``(upper, lower)``

    Returns:
        Product state with vacuum on every ABSENT mode pair
    """
    if len(logical) != len(config.slots):
        raise ValueError(f"expected {len(config.slots)} slot states, got {len(logical)}")
    factors = []
    for slot, (present, q) in enumerate(zip(config.slots, logical)):
        if not present:
            if q is not None:
                raise ValueError(f"slot {slot} is ABSENT but was given logical state {q!r}")
            continue
        if q is None:
            raise ValueError(f"slot {slot} is PRESENT but has no logical state")
        amps = QUBIT_STATES[q] if isinstance(q, str) else tuple(q)
        factors.append([(slot, bit, amps[bit]) for bit in (0, 1) if amps[bit] != 0])

    terms: dict = {}
    for choice in itertools.product(*factors):
        occ = [0] * config.modes
        amp = 1.0 + 0j
        for slot, bit, a in choice:
            occ[2 * slot + bit] = 1
            amp *= a
        terms[tuple(occ)] = terms.get(tuple(occ), 0) + amp
    if not terms:
        terms[(0,) * config.modes] = 1.0
    return StateVector.from_dict(config.modes, terms)


def apply_cz_circuit(state: StateVector, config: QubitConfiguration, tol: float = 1e-12) -> StateVector:
    """Apply CZ gates between the first PRESENT qubit and every other PRESENT qubit."""
    if state.m != config.modes or state.n != config.photons:
        raise ValueError("state sector does not match the qubit configuration")
    amps = np.array(state.amplitudes)
    for i, occ in enumerate(state.basis.states):
        bits = _logical_bits(config, occ)
        if bits is None:
            if abs(amps[i]) > tol:
                raise ValueError(f"component {occ} is not dual-rail encoded for {config.label}")
            continue
        if bits and bits[0] and sum(bits[1:]) % 2:
            amps[i] = -amps[i]
    return StateVector(state.basis, amps)


@dataclass(frozen=True, eq=False)
class TrainingPair:
    config: QubitConfiguration
    basis: str
    logical: tuple[Optional[str], ...]
    input: StateVector
    target: StateVector

    @property
    def label(self) -> str:
        return ",".join(ABSENT_SYMBOL if q is None else q for q in self.logical)

    @property
    def photons(self) -> int:
        return self.config.photons


def unit_cell_configs(b: int) -> list[QubitConfiguration]:
    """Every configuration a ``b``-branch unit cell can present: the new photon plus any subset of its children.

    For ``b = 2`` this yields ``111, 110, 101, 100``.
    """
    if b < 1:
        raise ValueError("branching must be at least 1")
    return [QubitConfiguration((True,) + rest) for rest in itertools.product((True, False), repeat=b)]


def _slot_assignments(config: QubitConfiguration, first: Iterable[str], rest: Iterable[str]):
    first, rest = tuple(first), tuple(rest)
    present = config.present
    for head in first:
        for tail in itertools.product(rest, repeat=len(present) - 1):
            logical: list = [None] * len(config.slots)
            for slot, q in zip(present, (head,) + tail):
                logical[slot] = q
            yield tuple(logical)


def build_training_set(configs: Sequence[QubitConfiguration], basis_choice: str = "restricted") -> list[TrainingPair]:
    """Input/target pairs teaching a network the multi-CZ unit-cell operations.

    With ``restricted`` the first PRESENT qubit is always ``|+>`` and the remaining ones range over the X basis and,
    separately, over the Z basis. With ``full`` the first qubit is freed: it ranges over the X basis in both of those
    groups, and a third group places every qubit in the Z basis, so the full set contains the restricted one.
    Duplicate inputs within a configuration are kept once.
    """
    if not configs:
        raise ValueError("need at least one qubit configuration")
    if basis_choice not in ("restricted", "full"):
        raise ValueError(f"basis_choice must be 'restricted' or 'full', got {basis_choice!r}")
    pairs: list[TrainingPair] = []
    seen: set = set()
    for config in configs:
        if config.photons == 0:
            raise ValueError("configurations must carry at least one photon")
        if basis_choice == "restricted":
            groups = (("X", ("+",), X_BASIS), ("Z", ("+",), Z_BASIS))
        else:
            groups = (("X", X_BASIS, X_BASIS), ("Z", X_BASIS, Z_BASIS), ("Z", Z_BASIS, Z_BASIS))
        for name, first, rest in groups:
            for logical in _slot_assignments(config, first, rest):
                state_in = encode_dual_rail(config, logical)
                key = (config.slots, state_in.amplitudes.tobytes())
                if key in seen:
                    continue
                seen.add(key)
                pairs.append(TrainingPair(config, name, logical, state_in, apply_cz_circuit(state_in, config)))
    return pairs
