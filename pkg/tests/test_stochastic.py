"""Covariance model, seeded sampling, Monte Carlo machinery."""

import numpy as np
import pytest

from lmpspike import (CovarianceSpec, GaussianModel, GridCase, Generator,
                      Line, build_covariance, compare_ranking, compute_lmp,
                      empirical_density, mc_spike_probabilities, sample,
                      solve_opf)
from lmpspike.spikes import NodeRanking, build_thresholds
from lmpspike.stochastic import (MCResult, NodeHistogram, evaluate_lmp_samples,
                                 find_modes)

from oracles import normal_tail, toy2r_lmp


def two_node_case():
    return GridCase(buses=(1, 2), lines=(Line(1, 2, 0.37),),
                    generators=(Generator(1, 0.0, 20.0, 1.0, 0.0),),
                    loads=np.array([0.0, 10.0]), renewable_buses=(1, 2),
                    reference_bus=1)


# -- covariance ----------------------------------------------------------------

def test_two_node_kernel_hand_value():
    """Normalized Laplacian of one edge gives the kernel (1/9)[[5,4],[4,5]];
    installed capacities are chosen so the rescaling is the identity."""
    inst = np.full(2, np.sqrt(5.0) / 3.0)
    sigma = build_covariance(two_node_case(),
                             CovarianceSpec(q=1.0, installed=inst))
    assert np.allclose(sigma, np.array([[5.0, 4.0], [4.0, 5.0]]) / 9.0,
                       atol=1e-12)


def test_correlation_is_scale_free():
    sigma = build_covariance(two_node_case(), CovarianceSpec(
        q=0.018, installed=np.array([123.0, 57.0])))
    rho = sigma[0, 1] / np.sqrt(sigma[0, 0] * sigma[1, 1])
    assert rho == pytest.approx(0.8, abs=1e-12)


def test_stddevs_match_fraction_of_installed(toy_ring):
    problem, theta_space, _ = toy_ring
    inst = np.array([theta_space.support(e) for e in np.eye(2)])
    sigma = build_covariance(problem.case,
                             CovarianceSpec(q=0.018, installed=inst))
    assert np.allclose(np.sqrt(np.diag(sigma)), 0.018 * inst, atol=1e-12)
    np.linalg.cholesky(sigma)  # positive definite


def test_kappa_one_closed_form():
    # (L_sym + I)^-1 for one edge: inverse of [[2,-1],[-1,2]] = (1/3)[[2,1],[1,2]]
    inst = np.full(2, np.sqrt(2.0 / 3.0))
    sigma = build_covariance(two_node_case(), CovarianceSpec(
        q=1.0, installed=inst, kappa=1.0))
    assert np.allclose(sigma, np.array([[2.0, 1.0], [1.0, 2.0]]) / 3.0,
                       atol=1e-12)


# -- sampling -------------------------------------------------------------------

def model2():
    return GaussianModel(np.array([3.0, 4.0]),
                         np.array([[2.0, 0.6], [0.6, 1.0]]))


def test_same_seed_same_samples():
    a = sample(model2(), 10_000, seed=42)
    b = sample(model2(), 10_000, seed=42)
    assert np.array_equal(a, b)
    c = sample(model2(), 10_000, seed=43)
    assert not np.array_equal(a, c)


def test_sample_moments():
    model = model2()
    draws = sample(model, 1_000_000, seed=7)
    stds = model.stddevs
    assert np.all(np.abs(draws.mean(axis=0) - model.mu_theta)
                  <= 4.0 * stds / 1000.0)
    emp = np.cov(draws.T)
    rel = np.linalg.norm(emp - model.sigma_theta) \
        / np.linalg.norm(model.sigma_theta)
    assert rel < 0.05


def test_sample_count_validation():
    with pytest.raises(Exception):
        sample(model2(), 0, seed=1)


# -- Monte Carlo over a decomposition --------------------------------------------

def test_halfspace_tail_matches_closed_form(toy2r):
    """Bus-1 spike reduces to {theta > 7}: compare against the normal tail."""
    problem, _, decomp = toy2r
    model = GaussianModel(np.array([5.0]), np.array([[1.0]]))
    spec = build_thresholds(np.array(toy2r_lmp(5.0)), 0.25)
    n = 100_000
    draws = sample(model, n, seed=11)
    mc = mc_spike_probabilities(draws, decomp, spec, problem=problem,
                                with_histograms=False)
    exact = normal_tail(2.0)
    se = np.sqrt(exact * (1 - exact) / n)
    assert abs(mc.node_spike_probs[0] - exact) <= 3.0 * se


def test_fast_path_matches_direct_solves(toy_ring):
    problem, _, decomp = toy_ring
    model = GaussianModel(np.array([3.0, 4.0]),
                          np.array([[1.0, 0.3], [0.3, 2.0]]))
    draws = sample(model, 10_000, seed=13)
    spec = build_thresholds(np.array([4.5, 4.5, 4.5]), 0.25)
    fast = mc_spike_probabilities(draws, decomp, spec, problem=problem,
                                  with_histograms=False)
    direct_counts = np.zeros(3, dtype=int)
    infeasible = 0
    for theta in draws:
        try:
            sol = solve_opf(problem, theta)
        except Exception:
            infeasible += 1
            continue
        vals = compute_lmp(sol, problem.ptdf).values
        direct_counts += ((vals < spec.alpha_minus)
                          | (vals > spec.alpha_plus)).astype(int)
    assert infeasible == fast.infeasible_count
    assert np.array_equal(direct_counts, fast.node_spike_counts)


def test_union_probability_dominates_each_node(toy_ring):
    problem, _, decomp = toy_ring
    model = GaussianModel(np.array([3.0, 4.0]),
                          np.array([[1.0, 0.3], [0.3, 2.0]]))
    draws = sample(model, 20_000, seed=14)
    spec = build_thresholds(np.array([4.5, 4.5, 4.5]), 0.25)
    mc = mc_spike_probabilities(draws, decomp, spec, problem=problem,
                                with_histograms=False)
    assert mc.overall_spike_prob >= mc.node_spike_probs.max() - 1e-12
    assert np.all(mc.node_spike_probs >= 0.0)
    assert np.all(mc.node_spike_probs <= 1.0)


def test_infinite_band_never_spikes(toy2r):
    problem, _, decomp = toy2r
    from lmpspike import SpikeSpec
    spec = SpikeSpec(alpha_minus=np.array([-np.inf, -np.inf]),
                     alpha_plus=np.array([np.inf, np.inf]),
                     lmp_at_mean=np.array(toy2r_lmp(5.0)))
    model = GaussianModel(np.array([5.0]), np.array([[1.0]]))
    draws = sample(model, 5_000, seed=15)
    mc = mc_spike_probabilities(draws, decomp, spec, problem=problem,
                                with_histograms=False)
    assert mc.node_spike_probs.max() == 0.0
    assert mc.overall_spike_prob == 0.0


def test_out_of_range_samples_are_counted_not_crashed(toy2r):
    problem, _, decomp = toy2r
    spec = build_thresholds(np.array(toy2r_lmp(5.0)), 0.25)
    draws = np.array([[5.0], [9.0], [14.0], [-3.0]])
    mc = mc_spike_probabilities(draws, decomp, spec, problem=problem,
                                with_histograms=False)
    # 14 exceeds demand plus export headroom: infeasible, excluded; -3 is
    # outside the parameter box but the dispatch problem still solves there
    assert mc.infeasible_count == 1
    assert mc.fallback_count == 2
    assert mc.valid_samples == 3


def test_histogram_mass(toy_ring):
    problem, _, decomp = toy_ring
    model = GaussianModel(np.array([3.0, 4.0]),
                          np.array([[1.0, 0.3], [0.3, 2.0]]))
    draws = sample(model, 5_000, seed=16)
    spec = build_thresholds(np.array([4.5, 4.5, 4.5]), 0.25)
    mc = mc_spike_probabilities(draws, decomp, spec, problem=problem,
                                bins=50)
    for hist in mc.histograms.values():
        assert hist.counts.sum() == mc.valid_samples
        assert hist.edges.size == 51


def test_empirical_density_records_band(toy_ring):
    problem, _, decomp = toy_ring
    model = GaussianModel(np.array([3.0, 4.0]),
                          np.array([[1.0, 0.3], [0.3, 2.0]]))
    draws = sample(model, 2_000, seed=17)
    spec = build_thresholds(np.array([4.5, 4.5, 4.5]), 0.25)
    hist = empirical_density(draws, decomp, node=1, bins=40, spec=spec,
                             problem=problem)
    assert hist.alpha_minus == pytest.approx(4.5 * 0.75)
    assert hist.alpha_plus == pytest.approx(4.5 * 1.25)
    assert hist.counts.sum() == 2000


def test_zero_variance_limit_concentrates(toy_ring):
    problem, _, decomp = toy_ring
    mu = np.array([3.0, 4.0])
    model = GaussianModel(mu, 1e-12 * np.eye(2))
    draws = sample(model, 2_000, seed=18)
    lmp, feas, _ = evaluate_lmp_samples(draws, decomp, problem)
    at_mean = compute_lmp(solve_opf(problem, mu), problem.ptdf).values
    assert np.abs(lmp[feas] - at_mean).max() < 1e-3


# -- mode detection ----------------------------------------------------------------

def hist_from(counts):
    counts = np.asarray(counts)
    return NodeHistogram(node=0, edges=np.arange(counts.size + 1.0),
                         counts=counts)


def test_two_well_separated_modes():
    counts = [0, 10, 80, 10, 2, 1, 2, 12, 60, 12, 0]
    assert len(find_modes(hist_from(counts))) == 2


def test_single_mode():
    counts = [1, 5, 20, 60, 90, 60, 20, 5, 1]
    assert len(find_modes(hist_from(counts))) == 1


def test_shallow_valley_is_one_mode():
    counts = [0, 50, 90, 85, 88, 90, 50, 0]  # dip less than 20% of the peak
    assert len(find_modes(hist_from(counts))) == 1


def test_close_peaks_not_separate_modes():
    counts = [0, 80, 0, 90, 0]  # two bins apart: below the separation floor
    assert len(find_modes(hist_from(counts), min_separation=3)) == 1


# -- ranking comparison ----------------------------------------------------------

def _mc_with_probs(probs):
    probs = np.asarray(probs, dtype=float)
    n = 1_000_000
    counts = (probs * n).astype(np.int64)
    return MCResult(n_samples=n, seed=0, node_spike_counts=counts,
                    node_spike_probs=counts / n, overall_spike_count=0,
                    overall_spike_prob=0.0, infeasible_count=0,
                    fallback_count=0)


def _ranking(nodes, rates):
    best = min(r for r in rates if np.isfinite(r))
    scores = tuple(-best / r if np.isfinite(r) and r > 0 else 0.0
                   for r in rates)
    return NodeRanking(nodes=tuple(nodes), rates=tuple(rates),
                       normalized_scores=scores)


def test_identical_rankings_match():
    mc = _mc_with_probs([0.5, 0.3, 0.1])
    ldp = _ranking([0, 1, 2], [1.0, 2.0, 3.0])
    cmp = compare_ranking(mc, ldp)
    assert cmp.exact_match
    assert cmp.kendall_tau == pytest.approx(1.0)
    assert cmp.resolvable_nodes == (0, 1, 2)


def test_reversed_ranking_tau_minus_one():
    mc = _mc_with_probs([0.1, 0.3, 0.5])
    ldp = _ranking([0, 1, 2], [1.0, 2.0, 3.0])
    cmp = compare_ranking(mc, ldp)
    assert not cmp.exact_match
    assert cmp.kendall_tau == pytest.approx(-1.0)


def test_resolution_floor_drops_unresolved_nodes():
    mc = _mc_with_probs([0.5, 0.3, 0.0])
    ldp = _ranking([0, 1, 2], [1.0, 2.0, 3.0])
    cmp = compare_ranking(mc, ldp)
    assert cmp.resolvable_nodes == (0, 1)
    assert cmp.exact_match


def test_exact_ties_compare_as_groups():
    mc = _mc_with_probs([0.5, 0.2, 0.2])
    # the decay ranking lists the tied pair in the opposite order
    ldp = _ranking([0, 2, 1], [1.0, 2.0, 2.0 * (1 + 1e-12)])
    cmp = compare_ranking(mc, ldp)
    assert cmp.exact_match
