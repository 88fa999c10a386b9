import itertools
from collections import Counter
from math import comb, factorial, sqrt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treeqpnn.fock import (
    QubitConfiguration,
    StateVector,
    apply_cz_circuit,
    apply_linear,
    apply_nonlinearity,
    build_training_set,
    computational_basis,
    encode_dual_rail,
    enumerate_basis,
    multiphoton_matrix,
    permanent,
    unit_cell_configs,
)
from treeqpnn.mesh import haar_random_unitary


def creation_operator_transform(transfer, occupation):
    """Expand prod_k (sum_j U[j,k] a_j^dag)^{s_k} / sqrt(s_k!) acting on vacuum, term by term."""
    m = len(occupation)
    poly = {(): 1.0 + 0j}
    for k, s in enumerate(occupation):
        for _ in range(s):
            new = Counter()
            for modes, c in poly.items():
                for j in range(m):
                    new[tuple(sorted(modes + (j,)))] += c * transfer[j, k]
            poly = dict(new)
        for key in poly:
            poly[key] /= sqrt(factorial(s))
    out = {}
    for modes, c in poly.items():
        occ = [0] * m
        for j in modes:
            occ[j] += 1
        out[tuple(occ)] = out.get(tuple(occ), 0) + c * sqrt(np.prod([factorial(t) for t in occ]))
    return out


def brute_force_permanent(a):
    n = a.shape[0]
    return sum(np.prod([a[i, s[i]] for i in range(n)]) for s in itertools.permutations(range(n)))


@pytest.mark.parametrize("m,n,count", [(2, 1, 2), (6, 3, 56), (4, 2, 10), (3, 0, 1), (1, 4, 1)])
def test_basis_size(m, n, count):
    basis = enumerate_basis(m, n)
    brute = [o for o in itertools.product(range(n + 1), repeat=m) if sum(o) == n]
    assert len(basis) == count == len(brute) == comb(n + m - 1, n)
    assert basis.states == tuple(sorted(brute, reverse=True))
    assert all(basis.states[basis.index[s]] == s for s in basis.states)


def test_basis_small_ordering():
    assert enumerate_basis(2, 1).states == ((1, 0), (0, 1))
    assert enumerate_basis(2, 2).states == ((2, 0), (1, 1), (0, 2))
    with pytest.raises(ValueError):
        enumerate_basis(0, 1)


@pytest.mark.parametrize("n", [0, 1, 3, 5, 6, 7])
def test_permanent_matches_brute_force(n):
    rng = np.random.default_rng(n)
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    expected = brute_force_permanent(a) if n else 1.0
    assert np.isclose(permanent(a), expected, rtol=1e-10, atol=1e-12)


def test_permanent_batched():
    rng = np.random.default_rng(1)
    stack = rng.normal(size=(4, 6, 6))
    assert np.allclose(permanent(stack), [brute_force_permanent(a) for a in stack])
    with pytest.raises(ValueError):
        permanent(np.zeros((2, 3)))


@pytest.mark.parametrize("m,n", [(2, 2), (3, 2), (4, 3), (3, 4)])
def test_multiphoton_matrix_matches_creation_operators(m, n):
    rng = np.random.default_rng(10 * m + n)
    transfer = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    basis = enumerate_basis(m, n)
    mat = multiphoton_matrix(transfer, n)
    for col, occ in enumerate(basis.states):
        oracle = creation_operator_transform(transfer, occ)
        for row, out in enumerate(basis.states):
            assert np.isclose(mat[row, col], oracle.get(out, 0), atol=1e-10)


def test_hong_ou_mandel():
    bs = np.array([[1, 1j], [1j, 1]]) / np.sqrt(2)
    out = apply_linear(bs, StateVector.basis_state((1, 1)))
    assert abs(out.amplitude((1, 1))) < 1e-12
    assert np.isclose(abs(out.amplitude((2, 0))) ** 2, 0.5)
    assert np.isclose(abs(out.amplitude((0, 2))) ** 2, 0.5)


def test_identity_and_permutation():
    state = encode_dual_rail(QubitConfiguration((True, True)), ("+", "1"))
    assert apply_linear(np.eye(4), state).allclose(state)
    perm = np.eye(4)[[2, 3, 0, 1]]
    out = apply_linear(perm, state)
    for occ, amp in state.terms().items():
        moved = tuple(occ[[2, 3, 0, 1].index(k)] for k in range(4))
        assert np.isclose(abs(out.amplitude(moved)), abs(amp))
    with pytest.raises(ValueError):
        apply_linear(np.eye(3), state)


def random_state(m, n, seed):
    rng = np.random.default_rng(seed)
    basis = enumerate_basis(m, n)
    amps = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    return StateVector(basis, amps / np.linalg.norm(amps))


@settings(max_examples=30, deadline=None)
@given(m=st.integers(1, 10), n=st.integers(0, 4), seed=st.integers(0, 2**32 - 1))
def test_unitary_preserves_norm(m, n, seed):
    if comb(n + m - 1, n) > 400:
        n = 2
    state = random_state(m, n, seed)
    out = apply_linear(haar_random_unitary(m, seed), state)
    assert abs(out.norm_squared() - 1) < 1e-10


@settings(max_examples=20, deadline=None)
@given(m=st.integers(1, 6), n=st.integers(0, 3), seed=st.integers(0, 2**32 - 1))
def test_representation_homomorphism(m, n, seed):
    a, b = haar_random_unitary(m, seed), haar_random_unitary(m, seed + 1)
    a = 0.9 * a
    state = random_state(m, n, seed)
    assert apply_linear(a @ b, state).allclose(apply_linear(a, apply_linear(b, state)), atol=1e-10)


def test_state_rejects_gain():
    with pytest.raises(ValueError):
        StateVector(enumerate_basis(2, 1), [1.0, 1.0])


def test_nonlinearity_examples():
    s = StateVector.from_dict(3, {(2, 0, 0): 0.6, (1, 1, 0): 0.8})
    out = apply_nonlinearity(s, 0.0, np.pi)
    assert np.isclose(out.amplitude((2, 0, 0)), -0.6)
    assert np.isclose(out.amplitude((1, 1, 0)), 0.8)
    out = apply_nonlinearity(s, np.pi / 2, 0.0)
    assert np.isclose(out.amplitude((1, 1, 0)), -0.8)
    assert apply_nonlinearity(s, 0.0, 0.0).allclose(s)
    assert np.isclose(apply_nonlinearity(random_state(4, 3, 0), 0.3, 1.1).norm_squared(), 1)


def test_encode_examples():
    plus = encode_dual_rail(QubitConfiguration((True,)), ("+",))
    assert np.allclose(plus.amplitudes, [1 / np.sqrt(2)] * 2)
    s = encode_dual_rail(QubitConfiguration((True, False, True)), ("+", None, "1"))
    assert s.m == 6 and s.n == 2
    assert set(s.terms()) == {(1, 0, 0, 0, 0, 1), (0, 1, 0, 0, 0, 1)}
    assert encode_dual_rail(QubitConfiguration((True, True)), ("0", "0")).terms() == {(1, 0, 1, 0): 1}
    with pytest.raises(ValueError):
        encode_dual_rail(QubitConfiguration((True, False)), ("+", "0"))
    with pytest.raises(ValueError):
        encode_dual_rail(QubitConfiguration((True, True)), ("+", None))


def test_cz_examples():
    one = QubitConfiguration((True,))
    plus = encode_dual_rail(one, ("+",))
    assert apply_cz_circuit(plus, one).allclose(plus)

    two = QubitConfiguration((True, True))
    out = apply_cz_circuit(encode_dual_rail(two, ("+", "+")), two)
    cluster = StateVector(
        out.basis,
        (encode_dual_rail(two, ("0", "+")).amplitudes + encode_dual_rail(two, ("1", "-")).amplitudes) / np.sqrt(2),
    )
    assert out.allclose(cluster)

    three = QubitConfiguration((True, True, True))
    s = encode_dual_rail(three, ("+", "1", "1"))
    assert apply_cz_circuit(s, three).allclose(s)
    s = encode_dual_rail(three, ("+", "1", "0"))
    out = apply_cz_circuit(s, three)
    assert np.isclose(out.amplitude((0, 1, 0, 1, 1, 0)), -s.amplitude((0, 1, 0, 1, 1, 0)))

    with pytest.raises(ValueError):
        apply_cz_circuit(StateVector.basis_state((2, 0, 0, 0)), two)


@pytest.mark.parametrize("pattern", ["1", "11", "101", "111", "1011"])
def test_cz_involution(pattern):
    config = QubitConfiguration.from_pattern(pattern)
    rng = np.random.default_rng(len(pattern))
    basis = enumerate_basis(config.modes, config.photons)
    amps = np.zeros(basis.dim, dtype=complex)
    for occ, _ in computational_basis(config):
        amps[basis.index[occ]] = rng.normal() + 1j * rng.normal()
    s = StateVector(basis, amps / np.linalg.norm(amps))
    assert apply_cz_circuit(apply_cz_circuit(s, config), config).allclose(s)


def test_training_set_sizes():
    restricted = build_training_set(unit_cell_configs(2), "restricted")
    assert len(restricted) == 17
    counts = Counter(p.photons for p in restricted)
    assert counts == {3: 8, 2: 8, 1: 1}
    full = build_training_set(unit_cell_configs(2), "full")
    assert len(full) > len(restricted)
    keys = {(p.config.slots, p.input.amplitudes.tobytes()) for p in full}
    assert {(p.config.slots, p.input.amplitudes.tobytes()) for p in restricted} <= keys
    ident = build_training_set([QubitConfiguration((True,))])
    assert len(ident) == 1 and ident[0].target.allclose(ident[0].input)
    with pytest.raises(ValueError):
        build_training_set([])


@pytest.mark.parametrize("b,basis_choice", [(2, "restricted"), (2, "full"), (3, "restricted")])
def test_targets_normalized_in_computational_span(b, basis_choice):
    for pair in build_training_set(unit_cell_configs(b), basis_choice):
        assert np.isclose(pair.target.norm_squared(), 1)
        cb = {occ for occ, _ in computational_basis(pair.config)}
        assert set(pair.target.terms(1e-14)) <= cb


def test_text_round_trip():
    s = random_state(4, 2, 3)
    text = s.to_text()
    assert text.startswith("fock m=4 n=2\n")
    back = StateVector.from_text(text)
    assert np.array_equal(back.amplitudes, s.amplitudes)


def test_configuration_pattern():
    c = QubitConfiguration.from_pattern("101")
    assert c.label == "101" and c.photons == 2 and c.modes == 6 and c.present == (0, 2)
    assert [cfg.label for cfg in unit_cell_configs(2)] == ["111", "110", "101", "100"]
    with pytest.raises(ValueError):
        QubitConfiguration.from_pattern("1x")
