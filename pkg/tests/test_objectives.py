import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hagcl import diffcore as dc
from hagcl.config import LossConfig
from hagcl.errors import ContractError
from hagcl.objectives import info_nce_anchor, info_nce_pair

from gradcheck import check

T1 = LossConfig(temperature=1.0)
T02 = LossConfig()
POOLED = LossConfig(anchor_negatives="pooled")


def c(x):
    return dc.constant(np.asarray(x, dtype=np.float64))


def reference_pair(za, zb, tau):
    """Direct loop over the 2N arrangement; positives are (2k, 2k+1)."""
    views = np.empty((2 * len(za), za.shape[1]))
    views[0::2], views[1::2] = za, zb
    unit = views / np.maximum(np.linalg.norm(views, axis=1, keepdims=True), 1e-12)
    s = unit @ unit.T / tau
    total = 0.0
    for i in range(len(views)):
        j = i + 1 if i % 2 == 0 else i - 1
        denom = sum(np.exp(s[i, k]) for k in range(len(views)) if k != i)
        total += s[i, j] - np.log(denom)
    return -total / len(views)


def reference_anchor(zo, zv, tau):
    uo = zo / np.linalg.norm(zo, axis=1, keepdims=True)
    uv = zv / np.linalg.norm(zv, axis=1, keepdims=True)
    s = uo @ uv.T / tau
    n = len(zo)
    return np.mean([s[i, i] - np.log(sum(np.exp(s[i, k]) for k in range(n) if k != i))
                    for i in range(n)])


def test_single_pair_is_zero():
    assert info_nce_pair(c([[1.0, 2.0]]), c([[0.3, -1.0]]), T1).data == 0.0


def test_two_orthogonal_pairs_closed_form():
    z = c([[1.0, 0.0], [0.0, 1.0]])
    assert abs(float(info_nce_pair(z, z, T1).data) - (np.log(np.e + 2) - 1)) < 1e-9


def test_pair_symmetry():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    assert abs(float(info_nce_pair(c(a), c(b), T02).data)
               - float(info_nce_pair(c(b), c(a), T02).data)) < 1e-12


def test_pair_matches_loop_reference():
    rng = np.random.default_rng(1)
    for n in (1, 2, 3, 7):
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        assert float(info_nce_pair(c(a), c(b), T02).data) == pytest.approx(reference_pair(a, b, 0.2), abs=1e-12)


def test_zero_rows_use_norm_floor():
    out = info_nce_pair(c([[0.0, 0.0], [1.0, 0.0]]), c([[0.0, 0.0], [0.0, 1.0]]), T1)
    assert np.isfinite(out.data)


def test_contract_errors():
    with pytest.raises(ContractError):
        info_nce_pair(c(np.ones((2, 3))), c(np.ones((3, 3))), T1)
    with pytest.raises(ContractError):
        info_nce_pair(c(np.ones((0, 3))), c(np.ones((0, 3))), T1)
    with pytest.raises(ContractError):
        info_nce_anchor(c(np.ones((2, 3))), c(np.ones((2, 2))), T1)


def test_anchor_identical_embeddings_zero():
    z = c([[1.0, 2.0], [1.0, 2.0]])
    assert abs(float(info_nce_anchor(z, z, T1).data)) < 1e-12


def test_anchor_orthogonal_closed_form():
    zo = c([[1.0, 0.0], [0.0, 1.0]])
    assert abs(float(info_nce_anchor(zo, zo, T1).data) - 1.0) < 1e-9


def test_anchor_single_graph_zero_with_warning(caplog):
    assert float(info_nce_anchor(c([[1.0, 2.0]]), c([[0.5, 0.1]]), T1).data) == 0.0
    assert "single graph" in caplog.text


def test_anchor_matches_loop_reference():
    rng = np.random.default_rng(2)
    for n in (2, 4, 9):
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        assert float(info_nce_anchor(c(a), c(b), T02).data) == pytest.approx(reference_anchor(a, b, 0.2), abs=1e-12)


def test_anchor_pooled_negatives_adds_terms():
    rng = np.random.default_rng(3)
    zo, z1, z2 = (rng.normal(size=(4, 3)) for _ in range(3))
    per_view = float(info_nce_anchor(c(zo), c(z1), T02).data)
    pooled = float(info_nce_anchor(c(zo), c(z1), POOLED, extra_negatives=c(z2)).data)
    assert pooled < per_view  # a larger denominator lowers every term


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 8), d=st.integers(1, 5), seed=st.integers(0, 10_000),
       scale=st.floats(0.1, 10.0))
def test_pair_properties(n, d, seed, scale):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    base = float(info_nce_pair(c(a), c(b), T02).data)
    assert base >= -1e-12
    assert abs(float(info_nce_pair(c(scale * a), c(scale * b), T02).data) - base) < 1e-9
    perm = rng.permutation(n)
    assert abs(float(info_nce_pair(c(a[perm]), c(b[perm]), T02).data) - base) < 1e-12


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 8), d=st.integers(1, 5), seed=st.integers(0, 10_000),
       scale=st.floats(0.1, 10.0))
def test_anchor_properties(n, d, seed, scale):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    base = float(info_nce_anchor(c(a), c(b), T02).data)
    assert abs(float(info_nce_anchor(c(3 * a), c(3 * b), T02).data) - base) < 1e-12
    assert abs(float(info_nce_anchor(c(scale * a), c(scale * b), T02).data) - base) < 1e-9
    perm = rng.permutation(n)
    assert abs(float(info_nce_anchor(c(a[perm]), c(b[perm]), T02).data) - base) < 1e-12


def test_loss_gradients():
    rng = np.random.default_rng(4)
    for n in (2, 3, 5):
        a, b = rng.uniform(-2, 2, (n, 4)), rng.uniform(-2, 2, (n, 4))
        assert check(lambda x, y: info_nce_pair(x, y, T02), [a, b], rng) < 1e-4
        assert check(lambda x, y: info_nce_anchor(x, y, T02), [a, b], rng) < 1e-4
