import math

import numpy as np
import pytest
from scipy import integrate

from ovsim.adhesion import (AdhesionStrengths, StencilError, adhesion_strength,
                            build_sensing_stencil, eval_adhesion_flux, fibre_biased_direction, kernel)


def test_strength_examples():
    assert adhesion_strength(1.0, 0.3) == 0.3
    assert adhesion_strength(0.0, 0.3) == 0.0
    assert adhesion_strength(0.5, 1.0) == pytest.approx(math.exp(-1 / 3), abs=1e-12)
    # clamped outside [0, 1]
    assert adhesion_strength(1.7, 0.3) == 0.3
    assert adhesion_strength(-0.2, 0.3) == 0.0


def test_strength_monotone_and_bounded():
    E = np.linspace(0, 1, 1000)
    S = adhesion_strength(E, 2.0)
    assert np.all(np.diff(S) >= 0) and S.min() >= 0 and S.max() <= 2.0


def test_kernel_closed_form():
    R = 0.15
    assert kernel(0.0, R) == pytest.approx(3 / (2 * math.pi * R**2), rel=1e-15)
    assert kernel(R, R) == pytest.approx(3 / (4 * math.pi * R**2), rel=1e-15)


def test_kernel_integrates_to_one():
    R = 0.3
    val, _ = integrate.quad(lambda r: kernel(r, R) * 2 * math.pi * r, 0, R)
    assert val == pytest.approx(1.0, abs=1e-12)


def test_stencil_at_unit_radius_has_five_offsets():
    st = build_sensing_stencil(0.1, 0.1)
    assert len(st.offsets) == 5
    assert {tuple(o) for o in st.offsets} == {(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)}


def test_under_resolved_radius():
    with pytest.raises(StencilError, match="under-resolved"):
        build_sensing_stencil(0.05, 0.1)


@pytest.mark.parametrize("R,h", [(0.1, 0.0125), (0.15, 0.03125), (0.3, 0.0375), (0.15, 0.0375)])
def test_stencil_invariants(R, h):
    st = build_sensing_stencil(R, h)
    r = np.hypot(*st.vectors.T)
    assert r.max() <= R * (1 + 1e-12)
    brute = sum(1 for p in range(-20, 21) for q in range(-20, 21) if math.hypot(p * h, q * h) <= R * (1 + 1e-12))
    assert len(st.offsets) == brute
    assert abs(st.weights.sum() - 1) <= 1e-3
    centre = np.flatnonzero(r == 0)
    assert np.array_equal(st.normals[centre[0]], [0.0, 0.0])
    np.testing.assert_allclose(np.hypot(*st.normals[r > 0].T), 1.0)
    assert st.prefactor == pytest.approx(1 / R)


def test_raw_midpoint_sum_reported():
    st = build_sensing_stencil(0.15, 0.03125)
    # the raw rule misses the ball's ragged rim; the weights correct it
    assert 0.9 < st.midpoint_sum() < 1.0
    assert st.area_weight == pytest.approx(0.03125**2 / st.midpoint_sum())


def test_fibre_biased_direction():
    np.testing.assert_allclose(fibre_biased_direction((0.3, 0.4), (0, 0)), (0.6, 0.8))
    assert np.array_equal(fibre_biased_direction((0, 0), (1, 2)), (0, 0))
    np.testing.assert_allclose(fibre_biased_direction((1, 0), (0, 1)), (1 / math.sqrt(2),) * 2)
    assert np.array_equal(fibre_biased_direction((1, 0), (-1, 0)), (0, 0))


def naive_flux(which, c, i, E, F, theta, mask, R, h, S, rho):
    """Per-node brute-force evaluation of the nonlocal flux."""
    N0, N1 = c.shape
    m = int(math.floor(R / h + 1e-9))
    offs = [(p, q) for p in range(-m, m + 1) for q in range(-m, m + 1)
            if math.hypot(p * h, q * h) <= R * (1 + 1e-12)]
    raw = sum(kernel(math.hypot(p * h, q * h), R) * h * h for p, q in offs)
    s_c, s_i, s_e, s_f = S.for_population(which)
    Ax = np.zeros_like(c)
    Ay = np.zeros_like(c)
    for a in range(N0):
        for b in range(N1):
            if not mask[a, b]:
                continue
            acc = np.zeros(2)
            for p, q in offs:
                u, w = a + p, b + q
                if not (0 <= u < N0 and 0 <= w < N1) or not mask[u, w]:
                    continue
                y = np.array([p * h, q * h])
                r = math.hypot(*y)
                wk = kernel(r, R) * h * h / raw
                gate = max(1 - rho[u, w], 0.0)
                T = adhesion_strength(E[u, w], s_c) * c[u, w] + adhesion_strength(E[u, w], s_i) * i[u, w]
                n = y / r if r > 0 else np.zeros(2)
                acc += wk * gate * n * (T + s_e * E[u, w])
                acc += wk * gate * fibre_biased_direction(y, theta[:, u, w]) * s_f * F[u, w]
            Ax[a, b], Ay[a, b] = acc / R
    return Ax, Ay


def _random_fields(N, seed):
    rng = np.random.default_rng(seed)
    c, i, E, F = (rng.uniform(0, 0.4, (N, N)) for _ in range(4))
    theta = rng.normal(scale=0.05, size=(2, N, N))
    mask = np.zeros((N, N), bool)
    mask[2:N - 1, 1:N - 3] = True
    return c, i, E, F, theta, mask


@pytest.mark.parametrize("which", ["uninfected", "infected"])
def test_flux_matches_brute_force(which):
    N, h, R = 14, 0.03125, 0.1
    c, i, E, F, theta, mask = _random_fields(N, 3)
    S = AdhesionStrengths(0.1, 0.05, 0.07, 0.1, 0.5, 0.4, 0.2, 0.3)
    rho = E + F + c + i
    st = build_sensing_stencil(R, h)
    got = eval_adhesion_flux(which, c, i, E, F, theta, mask, st, S, rho)
    want = naive_flux(which, c, i, E, F, theta, mask, R, h, S, rho)
    scale = np.abs(want).max()
    np.testing.assert_allclose(got[0], want[0], rtol=0, atol=1e-12 * scale)
    np.testing.assert_allclose(got[1], want[1], rtol=0, atol=1e-12 * scale)


def _setup(N=15, h=0.03125, R=0.1):
    st = build_sensing_stencil(R, h)
    theta = np.zeros((2, N, N))
    mask = np.ones((N, N), bool)
    return st, theta, mask


def test_zero_state_gives_zero_flux():
    st, theta, mask = _setup()
    z = np.zeros((15, 15))
    Ax, Ay = eval_adhesion_flux("uninfected", z, z, z, z, theta, mask, st, AdhesionStrengths(), z)
    assert not Ax.any() and not Ay.any()


def test_overcrowded_ball_gives_zero_flux():
    st, theta, mask = _setup()
    rng = np.random.default_rng(0)
    c, E, F = (rng.uniform(0.1, 0.5, (15, 15)) for _ in range(3))
    rho = np.full((15, 15), 1.0)
    Ax, Ay = eval_adhesion_flux("uninfected", c, c, E, F, rng.normal(size=(2, 15, 15)), mask, st,
                                AdhesionStrengths(), rho)
    assert not Ax.any() and not Ay.any()


def test_radially_symmetric_state_cancels_at_centre():
    N, h = 15, 0.03125
    st, theta, mask = _setup(N, h)
    x = (np.arange(N) - 7) * h
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    r2 = X1**2 + X2**2
    c = 0.4 * np.exp(-r2 / 0.01)
    E = 0.3 + 0.1 * np.exp(-r2 / 0.02)
    z = np.zeros((N, N))
    rho = c + E
    Ax, Ay = eval_adhesion_flux("uninfected", c, z, E, z, theta, mask, st, AdhesionStrengths(), rho)
    scale = np.abs(Ax).max()
    assert abs(Ax[7, 7]) <= 1e-12 * scale and abs(Ay[7, 7]) <= 1e-12 * scale


def test_locality():
    N, h, R = 21, 0.03125, 0.1
    c, i, E, F, theta, mask = _random_fields(N, 5)
    mask[:] = True
    st = build_sensing_stencil(R, h)
    S = AdhesionStrengths()
    rho = 0.5 * (c + i + E + F)
    base = eval_adhesion_flux("uninfected", c, i, E, F, theta, mask, st, S, rho)
    far = (18, 18)
    c2 = c.copy()
    c2[far] += 0.3
    pert = eval_adhesion_flux("uninfected", c2, i, E, F, theta, mask, st, S, rho)
    X = np.arange(N) * h
    d = np.hypot(*np.meshgrid(X - X[far[0]], X - X[far[1]], indexing="ij"))
    untouched = d > R + h
    assert np.array_equal(base[0][untouched], pert[0][untouched])
    assert np.array_equal(base[1][untouched], pert[1][untouched])


def test_linearity_in_strengths():
    N = 12
    c, i, E, F, theta, mask = _random_fields(N, 7)
    st = build_sensing_stencil(0.1, 0.03125)
    S = AdhesionStrengths()
    rho = c + i + E + F
    a = eval_adhesion_flux("uninfected", c, i, E, F, theta, mask, st, S, rho)
    b = eval_adhesion_flux("uninfected", c, i, E, F, theta, mask, st, S.scaled(2.0), rho)
    np.testing.assert_allclose(b[0], 2 * a[0], rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(b[1], 2 * a[1], rtol=1e-13, atol=1e-15)


def test_fibre_term_vanishes_without_fibres():
    N = 12
    c, i, E, _, _, mask = _random_fields(N, 9)
    z = np.zeros((N, N))
    st = build_sensing_stencil(0.1, 0.03125)
    rho = c + i + E
    with_f = eval_adhesion_flux("infected", c, i, E, z, np.zeros((2, N, N)), mask, st, AdhesionStrengths(), rho)
    no_f = eval_adhesion_flux("infected", c, i, E, z, np.zeros((2, N, N)), mask, st,
                              AdhesionStrengths(S_iF=0.0, S_cF=0.0), rho)
    assert np.array_equal(with_f[0], no_f[0]) and np.array_equal(with_f[1], no_f[1])


def test_non_members_contribute_nothing():
    N = 12
    c, i, E, F, theta, mask = _random_fields(N, 11)
    st = build_sensing_stencil(0.1, 0.03125)
    rho = 0.5 * (c + i + E + F)
    a = eval_adhesion_flux("uninfected", c, i, E, F, theta, mask, st, AdhesionStrengths(), rho)
    junk = np.where(mask, 0.0, 9.0)
    b = eval_adhesion_flux("uninfected", c + junk, i + junk, E + junk, F + junk, theta, mask, st,
                           AdhesionStrengths(), rho)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not a[0][~mask].any()


def test_threads_are_bitwise_identical():
    N = 24
    c, i, E, F, theta, mask = _random_fields(N, 13)
    st = build_sensing_stencil(0.15, 0.03125)
    rho = c + i + E + F
    one = eval_adhesion_flux("uninfected", c, i, E, F, theta, mask, st, AdhesionStrengths(), rho, threads=1)
    four = eval_adhesion_flux("uninfected", c, i, E, F, theta, mask, st, AdhesionStrengths(), rho, threads=4)
    assert np.array_equal(one[0], four[0]) and np.array_equal(one[1], four[1])


def test_embedding_in_larger_grid_is_bitwise_neutral():
    N = 14
    c, i, E, F, theta, mask = _random_fields(N, 17)
    st = build_sensing_stencil(0.1, 0.03125)
    S = AdhesionStrengths()
    rho = c + i + E + F
    small = eval_adhesion_flux("uninfected", c, i, E, F, theta, mask, st, S, rho)
    pad = lambda a, v=0.0: np.pad(a, ((5, 3), (2, 7)), constant_values=v)
    big = eval_adhesion_flux("uninfected", pad(c), pad(i), pad(E), pad(F),
                             np.stack([pad(theta[0]), pad(theta[1])]), pad(mask, False), st, S, pad(rho))
    assert np.array_equal(big[0][5:-3, 2:-7], small[0]) and np.array_equal(big[1][5:-3, 2:-7], small[1])
