import numpy as np
import pytest

from devmix.errors import InputError
from devmix.known_density import GaussianMixtureH0, KdeH0
from devmix.mixing import Atom, MixingMeasure, location_measure
from devmix.model import DeviatedMixture, FamilyTag
from devmix.quadrature import trapezoid_grid_1d, trapezoid_grid_2d
from devmix.regimes import (
    I_lambda,
    classify_regime,
    distinguishability_probe,
    minimize_polynomial_residual,
    overline_G_star,
    polynomial_system_residual,
    r_bar,
    ratio_independent,
    set_B_contains,
    tilde_G_star,
)


def mixture_h0_1d():
    return GaussianMixtureH0([0.5, 0.5], [[-1.0], [2.0]], [[[0.6]], [[1.2]]])


def two_component_h0_2d():
    return GaussianMixtureH0(
        [0.4, 0.6],
        [[-2.0, 3.0], [1.0, -4.0]],
        [[[3.0, -1.0], [-1.0, 2.0]], [[1.0, 0.0], [0.0, 4.0]]],
    )


def overlap_pair_1d():
    """(G0, G*) with full overlap: G* reuses both h0 atoms plus one extra."""
    h0 = mixture_h0_1d()
    G0 = h0.mixing_measure()
    G_star = MixingMeasure(
        (Atom([-1.0], [[0.6]]), Atom([2.0], [[1.2]]), Atom([5.0], [[0.8]])),
        [0.3, 0.2, 0.5],
    )
    return h0, G0, G_star


# ---------------------------------------------------------------------------
# classify_regime
# ---------------------------------------------------------------------------


def test_lambda_zero_is_regime_a():
    h0, _, G_star = overlap_pair_1d()
    assert classify_regime(h0, 0.0, G_star).regime == "a_lambda_zero"


def test_single_shared_atom_geometry_is_regime_b():
    h0 = two_component_h0_2d()
    G_star = MixingMeasure((Atom([-2.0, 3.0], [[3.0, -1.0], [-1.0, 2.0]]),), [1.0])
    rep = classify_regime(h0, 0.3, G_star)
    assert rep.regime == "b_partial_overlap"
    assert rep.k_bar == 1
    assert rep.a_bar == (0,)


def test_full_overlap_is_regime_c():
    h0, _, G_star = overlap_pair_1d()
    rep = classify_regime(h0, 0.4, G_star)
    assert rep.regime == "c_full_overlap"
    assert rep.k_bar == 2


def test_student_kde_is_distinguishable():
    kde = KdeH0(np.linspace(-2, 2, 6).reshape(-1, 1), 0.5, "student", nu=3.0)
    rep = classify_regime(kde, 0.3, location_measure([[0.0]], [1.0]))
    assert rep.regime == "distinguishable"


def test_ambiguous_match_demands_smaller_tolerance():
    h0 = mixture_h0_1d()
    # one deviated atom within tol of both h0 atoms
    G_star = MixingMeasure((Atom([0.5], [[0.9]]),), [1.0])
    with pytest.raises(InputError):
        classify_regime(h0, 0.3, G_star, atom_match_tol=10.0)


def test_classify_monotone_in_tolerance():
    h0, _, G_star = overlap_pair_1d()
    sizes = []
    for tol in (1e-8, 1e-3, 2.0):
        try:
            sizes.append(len(classify_regime(h0, 0.4, G_star, atom_match_tol=tol).a_bar))
        except InputError:
            sizes.append(None)  # ambiguity only possible once matches widen
    known = [s for s in sizes if s is not None]
    assert all(a <= b for a, b in zip(known, known[1:]))


def test_location_atoms_need_family():
    h0 = mixture_h0_1d()
    with pytest.raises(InputError):
        classify_regime(h0, 0.4, location_measure([[-1.0]], [1.0]))
    fam = FamilyTag.location([[0.6]])
    rep = classify_regime(h0, 0.4, location_measure([[-1.0]], [1.0]), family=fam)
    assert rep.k_bar == 1  # matches atom 0 (same mean and covariance)


# ---------------------------------------------------------------------------
# overline_G_star
# ---------------------------------------------------------------------------


def test_gbar_at_lambda_star_is_g_star():
    _, G0, G_star = overlap_pair_1d()
    out = overline_G_star(0.4, 0.4, G0, G_star)
    assert out.k == G_star.k
    np.testing.assert_allclose(sorted(out.weights), sorted(G_star.weights), atol=1e-12)


def test_gbar_mass_split_at_large_lambda():
    _, G0, G_star = overlap_pair_1d()
    lam_star = 0.09
    out = overline_G_star(10 * lam_star, lam_star, G0, G_star, merge_tol=1e-12)
    # mass contributed by G0's atoms is 1 - lam*/lam = 0.9 (overlapped atoms
    # also receive lam*/lam * p_i^*)
    g0_mass = (1 - 0.1) * np.asarray(G0.weights)
    star = 0.1 * np.asarray(G_star.weights)
    expect_total = g0_mass.sum() + star.sum()
    assert out.weights.sum() == pytest.approx(expect_total, abs=1e-12)
    loc = out.locations().ravel()
    w_at_extra = float(out.weights[np.argmin(np.abs(loc - 5.0))])
    assert w_at_extra == pytest.approx(0.1 * 0.5, abs=1e-12)


def test_gbar_density_identity_on_grid():
    h0, G0, G_star = overlap_pair_1d()
    fam = FamilyTag.location_scale()
    lam_star = 0.3
    p_true = DeviatedMixture(h0, lam_star, G_star, fam)
    grid = np.linspace(-9.0, 11.0, 2**12).reshape(-1, 1)
    base = p_true.pdf_batch(grid)
    for lam in np.linspace(lam_star, 1.0, 20):
        gbar = overline_G_star(float(lam), lam_star, G0, G_star, merge_tol=1e-9)
        alt = DeviatedMixture(h0, float(lam), gbar, fam)
        assert np.abs(alt.pdf_batch(grid) - base).max() <= 1e-12


def test_gbar_rejects_lambda_below_lambda_star():
    _, G0, G_star = overlap_pair_1d()
    with pytest.raises(InputError):
        overline_G_star(0.2, 0.4, G0, G_star)


# ---------------------------------------------------------------------------
# set B, I(lambda), ratio independence, Gtilde
# ---------------------------------------------------------------------------


def single_overlap_pair():
    """k0 = 1: G0 = delta_theta0, G* = 0.5 delta_theta0 + 0.5 delta_far."""
    h0 = GaussianMixtureH0([1.0], [[0.0]], [[[1.0]]])
    G0 = h0.mixing_measure()
    G_star = MixingMeasure((Atom([0.0], [[1.0]]), Atom([3.0], [[1.0]])), [0.5, 0.5])
    return G0, G_star


def test_set_b_always_contains_lambda_above_lambda_star():
    G0, G_star = single_overlap_pair()
    for lam in (0.4, 0.7, 1.0):
        assert set_B_contains(lam, 0.4, G0, G_star)


def test_set_b_hand_computation():
    # (0.4 - lam) * 1 <= 0.4 * 0.5  <=>  lam >= 0.2
    G0, G_star = single_overlap_pair()
    assert not set_B_contains(0.1, 0.4, G0, G_star)
    assert set_B_contains(0.2, 0.4, G0, G_star)  # boundary included
    assert set_B_contains(0.3, 0.4, G0, G_star)


def test_i_lambda_hand_computations():
    G0, G_star = single_overlap_pair()
    assert I_lambda(0.3, 0.4, G0, G_star) == ()  # lam in B
    assert I_lambda(0.1, 0.4, G0, G_star) == (0,)

    h0 = GaussianMixtureH0([0.5, 0.5], [[-1.0], [2.0]], [[[1.0]], [[1.0]]])
    G0b = h0.mixing_measure()
    G_star_b = MixingMeasure(
        (Atom([-1.0], [[1.0]]), Atom([2.0], [[1.0]])), [0.9, 0.1]
    )
    # (0.5-0.2)*0.5 = 0.15: > 0.5*0.1 at index 1 only
    assert I_lambda(0.2, 0.5, G0b, G_star_b) == (1,)


def test_ratio_independence():
    h0 = GaussianMixtureH0([0.2, 0.4, 0.4], [[-2.0], [1.0], [4.0]],
                           [[[1.0]], [[1.0]], [[1.0]]])
    G0 = h0.mixing_measure()
    atoms = G0.atoms
    G_same_ratio = MixingMeasure(atoms, [0.1, 0.2, 0.7])  # p0/p* = 2, 2 on {0,1}
    assert ratio_independent([0], G0, G_same_ratio)  # |I| = 1
    assert ratio_independent([0, 1], G0, G_same_ratio, tol=1e-9)
    G_diff_ratio = MixingMeasure(atoms, [0.1, 0.1, 0.8])  # ratios 2 vs 4
    assert not ratio_independent([0, 1], G0, G_diff_ratio, tol=1e-9)
    with pytest.raises(InputError):
        ratio_independent([], G0, G_same_ratio)


def test_tilde_g_star_reduces_to_g_star_at_lambda_star():
    G0, G_star = single_overlap_pair()
    out, S = tilde_G_star(0.4, 0.4, G0, G_star)
    assert S == pytest.approx(0.4, abs=1e-12)
    np.testing.assert_allclose(sorted(out.weights), [0.5, 0.5], atol=1e-12)


def test_tilde_g_star_mass_and_hand_case():
    h0 = GaussianMixtureH0([0.5, 0.5], [[-1.0], [2.0]], [[[1.0]], [[1.0]]])
    G0 = h0.mixing_measure()
    G_star = MixingMeasure(
        (Atom([-1.0], [[1.0]]), Atom([2.0], [[1.0]]), Atom([6.0], [[1.0]])),
        [0.05, 0.45, 0.5],
    )
    lam_star, lam = 0.5, 0.2
    # deficits: (0.5-0.2)*0.5 = 0.15 vs 0.5*0.05 = 0.025 -> index 0 in I
    #           0.15 vs 0.5*0.45 = 0.225 -> index 1 not in I
    assert I_lambda(lam, lam_star, G0, G_star) == (0,)
    out, S = tilde_G_star(lam, lam_star, G0, G_star)
    v1 = 0.45 * 0.5 + (0.2 - 0.5) * 0.5  # = 0.075
    extra = 0.5 * 0.5                     # lam* * p_3^*
    assert S == pytest.approx(v1 + extra, abs=1e-12)
    assert out.weights.sum() == pytest.approx(1.0, abs=1e-12)
    locs = out.locations().ravel()
    w_at_2 = float(out.weights[np.argmin(np.abs(locs - 2.0))])
    assert w_at_2 == pytest.approx(v1 / S, abs=1e-12)


def test_tilde_identity_when_deficits_vanish():
    # boundary case: (lam* - lam) p_i^0 = lam* p_i^* for every overlapped atom,
    # so I is empty and p_(lam, Gtilde(lam)) reproduces p_(lam*, G*)
    h0 = GaussianMixtureH0([0.5, 0.5], [[-1.0], [2.0]], [[[0.6]], [[1.2]]])
    G0 = h0.mixing_measure()
    lam_star = 0.5
    p_match = 0.2  # with lam = lam* - lam* * p_match = 0.4: deficit exactly zero
    lam = lam_star * (1.0 - p_match)
    G_star = MixingMeasure(
        (Atom([-1.0], [[0.6]]), Atom([2.0], [[1.2]]), Atom([6.0], [[0.9]])),
        [p_match, p_match, 1.0 - 2 * p_match],
    )
    assert I_lambda(lam, lam_star, G0, G_star) == ()
    out, S = tilde_G_star(lam, lam_star, G0, G_star)
    assert S == pytest.approx(lam, abs=1e-12)
    fam = FamilyTag.location_scale()
    p_true = DeviatedMixture(h0, lam_star, G_star, fam)
    p_alt = DeviatedMixture(h0, lam, out, fam)
    grid = np.linspace(-9.0, 12.0, 2**12).reshape(-1, 1)
    assert np.abs(p_true.pdf_batch(grid) - p_alt.pdf_batch(grid)).max() <= 1e-10


def test_tilde_outside_regime_c_rejected():
    h0 = two_component_h0_2d()
    G0 = h0.mixing_measure()
    G_star = MixingMeasure((Atom([-2.0, 3.0], [[3.0, -1.0], [-1.0, 2.0]]),), [1.0])
    with pytest.raises(InputError):
        tilde_G_star(0.2, 0.3, G0, G_star)  # k_bar = 1 < k0 = 2


# ---------------------------------------------------------------------------
# r_bar and the polynomial system
# ---------------------------------------------------------------------------


def test_r_bar_table():
    assert (r_bar(1).value, r_bar(1).exact) == (4, True)
    assert (r_bar(2).value, r_bar(2).exact) == (6, True)
    assert (r_bar(3).value, r_bar(3).exact) == (7, False)
    assert r_bar(9).value == 7
    with pytest.raises(InputError):
        r_bar(0)


def test_polynomial_residual_trivial_solution():
    zeros = (np.zeros(2), np.zeros(2), np.array([1.0, 2.0]))
    assert polynomial_system_residual(1, 4, zeros) == 0.0


def test_polynomial_residual_known_r3_solution():
    # hand-derived: a = (1,-1), b = (-1/2,-1/2), c = (1,1) solves orders 1..3
    sol = (np.array([1.0, -1.0]), np.array([-0.5, -0.5]), np.array([1.0, 1.0]))
    assert polynomial_system_residual(1, 3, sol) == pytest.approx(0.0, abs=1e-15)
    assert polynomial_system_residual(1, 4, sol) > 1e-3  # fails at order 4


def test_polynomial_residual_random_nonzero(rng):
    a = rng.uniform(0.5, 1.0, 2)
    b = rng.uniform(-1.0, 1.0, 2)
    c = rng.uniform(0.5, 1.5, 2)
    assert polynomial_system_residual(1, 4, (a, b, c)) > 0.0


def test_multistart_finds_r3_solution_and_r4_floor():
    best3, cand3 = minimize_polynomial_residual(1, 3, restarts=30, seed=7)
    assert best3 < 1e-10
    a, b, c = cand3
    assert np.all(np.abs(c) >= 0.1) and np.abs(a).max() == pytest.approx(1.0)
    best4, _ = minimize_polynomial_residual(1, 4, restarts=30, seed=7)
    assert best4 >= 1e-8


# ---------------------------------------------------------------------------
# distinguishability probe
# ---------------------------------------------------------------------------


def test_probe_h0_in_span_single_gaussian():
    h0 = GaussianMixtureH0([1.0], [[0.3]], [[[0.8]]])
    points, weights = trapezoid_grid_1d(-8.0, 8.0, 3001)
    res = distinguishability_probe(
        h0, [Atom([0.3], [[0.8]])], 0, points, weights
    )
    assert res.residual < 1e-10


def test_probe_mixture_probed_with_own_atoms():
    h0 = GaussianMixtureH0(
        [0.3, 0.3, 0.4], [[-2.0], [0.5], [3.0]], [[[0.5]], [[0.8]], [[1.1]]]
    )
    points, weights = trapezoid_grid_1d(-12.0, 13.0, 4001)
    atoms = [Atom(h0.means[i], h0.covariances[i]) for i in range(3)]
    res = distinguishability_probe(h0, atoms, 0, points, weights)
    assert res.residual < 1e-8


def test_probe_student_kde_not_in_gaussian_span():
    kde = KdeH0(np.array([[-0.5], [1.0]]), 0.8, "student", nu=3.0)
    points, weights = trapezoid_grid_1d(-30.0, 30.0, 6001)
    atoms = [Atom([-0.5], [[0.64]]), Atom([1.0], [[0.64]])]
    res = distinguishability_probe(kde, atoms, 1, points, weights)
    assert res.residual > 0.01


def test_probe_2d_grid_and_order_validation():
    h0 = GaussianMixtureH0([1.0], [[0.0, 0.0]], [np.eye(2)])
    points, weights = trapezoid_grid_2d([-6.0, -6.0], [6.0, 6.0], 96)
    res = distinguishability_probe(h0, [Atom([0.0, 0.0], np.eye(2))], 1, points, weights)
    assert res.residual < 1e-8  # h0 itself sits in the span
    with pytest.raises(InputError):
        distinguishability_probe(h0, [Atom([0.0, 0.0], np.eye(2))], 3, points, weights)


def test_probe_duplicate_atoms_rejected():
    h0 = GaussianMixtureH0([1.0], [[0.0]], [[[1.0]]])
    points, weights = trapezoid_grid_1d(-5.0, 5.0, 501)
    with pytest.raises(InputError):
        distinguishability_probe(
            h0, [Atom([0.0], [[1.0]]), Atom([0.0], [[1.0]])], 0, points, weights
        )
