import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorank.errors import AmbiguousDirectionError, FormatError, VanishingDirectionError
from lorank.genzoo import forward, half_masks, jacobian, make_blocky, make_linear
from lorank.rpca import PcpConfig
from lorank.subspace import (
    RELAX_PRESETS,
    AttributeBasis,
    EditRequest,
    ProjectionSpec,
    RegionMask,
    attribute_basis,
    dumps_basis,
    edit,
    loads_basis,
    local_direction,
    null_project,
    principal_direction,
    projection_residual,
    region_basis,
    region_gram,
)

GRAM = PcpConfig(lam=0.4, max_iter=5000)


def test_region_mask_validation():
    assert RegionMask([1, 4, 9]).indices == (1, 4, 9)
    for bad in ([], [3, 3], [4, 1], [-1, 2]):
        with pytest.raises(ValueError):
            RegionMask(bad)
    with pytest.raises(ValueError):
        RegionMask([0, 10]).check(10)


def test_rect_worked_example():
    assert RegionMask.from_rect(4, 1, 0, 3, 2).indices == (1, 2, 5, 6)
    assert len(RegionMask.from_rect(16, 0, 0, 8, 16)) == 128
    for rect in ((2, 0, 2, 3), (0, 0, 5, 1), (3, 1, 1, 2)):
        with pytest.raises(ValueError):
            RegionMask.from_rect(4, *rect)


def test_complement():
    assert RegionMask([0, 2]).complement(4).indices == (1, 3)


def test_region_gram_uses_only_region_rows(rng):
    j = rng.standard_normal((6, 3))
    g = region_gram(j, [1, 4])
    assert np.allclose(g, np.outer(j[1], j[1]) + np.outer(j[4], j[4]))


def test_principal_direction_maximizes_change(rng):
    a = rng.standard_normal((7, 4))
    gram = a.T @ a
    n = principal_direction(gram)
    w, vecs = np.linalg.eigh(gram)
    assert abs(n @ vecs[:, -1]) == pytest.approx(1.0)
    for _ in range(50):
        r = rng.standard_normal(4)
        r /= np.linalg.norm(r)
        assert n @ gram @ n >= r @ gram @ r - 1e-12


def test_principal_direction_rejects_ties():
    with pytest.raises(AmbiguousDirectionError):
        principal_direction(np.eye(3))
    with pytest.raises(AmbiguousDirectionError):
        principal_direction(np.zeros((2, 2)))


def test_attribute_basis_of_clean_low_rank(rng):
    # With a large sparsity weight S stays zero and L is the Gram itself.
    a = rng.standard_normal((3, 12))
    basis = attribute_basis(a.T @ a, PcpConfig(lam=10.0, max_iter=5000))
    assert basis.solution.converged and not basis.solution.s.any()
    assert basis.rank == 3
    assert np.allclose(basis.v.T @ basis.v, np.eye(12), atol=1e-10)
    # The attribute span is the row space of a.
    proj = basis.attributes @ basis.attributes.T
    assert np.allclose(proj @ a.T, a.T, atol=1e-6)
    assert np.allclose(basis.null_space.T @ a.T, 0, atol=1e-6)


def test_separable_blocky_basis_lives_in_its_block():
    g = make_blocky(seed=5)
    left, right = half_masks(16)
    z = np.random.default_rng(2).standard_normal(32)
    j = jacobian(g, z)
    ba = region_basis(j, left, GRAM)
    bb = region_basis(j, right, GRAM)
    assert 1 <= ba.rank <= 16 and 1 <= bb.rank <= 16
    assert np.abs(ba.attributes[16:]).max() <= 1e-6
    assert np.abs(bb.attributes[:16]).max() <= 1e-6


def test_projection_removes_retained_span(rng):
    v = np.linalg.qr(rng.standard_normal((6, 6)))[0]
    basis = AttributeBasis(v=v, sigma=np.array([5.0, 3, 1, 0, 0, 0]), rank=3)
    x = rng.standard_normal(6)
    x /= np.linalg.norm(x)
    p = null_project(x, ProjectionSpec(basis, 0))
    assert np.linalg.norm(p) == pytest.approx(1.0)
    assert np.allclose(v[:, :3].T @ p, 0, atol=1e-12)
    # Relaxing one direction frees the smallest retained attribute.
    p1 = null_project(x, ProjectionSpec(basis, 1))
    assert np.allclose(v[:, :2].T @ p1, 0, atol=1e-12)
    assert abs(v[:, 2] @ p1) > 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_retained_norm_nondecreasing_in_relaxation(seed, rank):
    rng = np.random.default_rng(seed)
    v = np.linalg.qr(rng.standard_normal((8, 8)))[0]
    basis = AttributeBasis(v=v, sigma=np.linspace(8, 1, 8), rank=rank)
    x = rng.standard_normal(8)
    x /= np.linalg.norm(x)
    norms = [np.linalg.norm(projection_residual(x, ProjectionSpec(basis, r))) for r in range(rank + 1)]
    assert all(b >= a - 1e-15 for a, b in zip(norms, norms[1:]))


def test_projection_spec_bounds():
    basis = AttributeBasis(v=np.eye(3), sigma=np.ones(3), rank=2)
    ProjectionSpec(basis, 2)
    for r in (-1, 3):
        with pytest.raises(ValueError):
            ProjectionSpec(basis, r)


def test_vanishing_direction():
    basis = AttributeBasis(v=np.eye(3), sigma=np.array([2.0, 1.0, 0.0]), rank=2)
    with pytest.raises(VanishingDirectionError, match="no local direction exists"):
        null_project(np.array([1.0, 0.0, 0.0]), ProjectionSpec(basis, 0))


def test_null_project_requires_unit_vector():
    basis = AttributeBasis(v=np.eye(2), sigma=np.ones(2), rank=1)
    with pytest.raises(ValueError):
        null_project(np.array([2.0, 0.0]), ProjectionSpec(basis, 0))


def test_edit_request_and_zero_alpha(zoo):
    g = zoo["mlp-tanh"]
    z = np.random.default_rng(0).standard_normal(g.d_z)
    d = np.zeros(g.d_z)
    d[0] = 1.0
    assert np.array_equal(edit(g, EditRequest(z, d, 0.0)), forward(g, z))
    with pytest.raises(ValueError):
        EditRequest(z, 2 * d, 1.0)


def test_local_direction_on_separable_generator():
    g = make_blocky(seed=9)
    left, right = half_masks(16)
    z = np.random.default_rng(4).standard_normal(32)
    p, ba, bb = local_direction(g, z, left, right, pcp_config=GRAM)
    before = forward(g, z)
    after = forward(g, z + p)
    assert np.mean((after - before)[right] ** 2) <= 1e-20
    assert np.mean((after - before)[left] ** 2) > 1e-3
    with pytest.raises(IndexError):
        local_direction(g, z, left, right, index=ba.rank, pcp_config=GRAM)


def test_linear_top_direction_is_top_right_singular_vector():
    g = make_linear(4, 40, seed=1)
    z = np.zeros(4)
    region = range(20)
    v, ba, _ = local_direction(g, z, region, project=False, pcp_config=PcpConfig(lam=10.0, max_iter=5000))
    w = g.layers[0].weight[:20]
    assert ba.solution.converged
    assert ba.rank == 4
    top = np.linalg.svd(w)[2][0]
    assert abs(v @ top) == pytest.approx(1.0, abs=1e-6)


def test_relax_presets():
    assert RELAX_PRESETS == {"none": 0, "faces": 8, "small-mask": 20}


def test_basis_text_roundtrip(rng):
    a = rng.standard_normal((2, 5))
    basis = attribute_basis(a.T @ a, GRAM, region=RegionMask([0, 3]))
    text = dumps_basis(basis)
    back = loads_basis(text)
    assert np.array_equal(back.v, basis.v) and np.array_equal(back.sigma, basis.sigma)
    assert back.rank == basis.rank and back.region == basis.region
    assert dumps_basis(back) == text


@pytest.mark.parametrize(
    "mutate",
    [
        lambda lines: lines[:-1],
        lambda lines: lines[:-2],
        lambda lines: lines[:-1] + ["9 0 1"],
        lambda lines: lines[:-1] + ["2 3 1"],
        lambda lines: lines + ["extra"],
        lambda lines: lines[:-2] + ["1 2"] + lines[-1:],
    ],
)
def test_basis_parse_errors(mutate):
    basis = AttributeBasis(v=np.eye(3), sigma=np.array([2.0, 1.0, 0.0]), rank=2, region=RegionMask([0, 1]))
    lines = dumps_basis(basis).splitlines()
    with pytest.raises(FormatError):
        loads_basis("\n".join(mutate(lines)) + "\n")
