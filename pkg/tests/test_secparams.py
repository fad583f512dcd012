"""
test_secparams.py — Threshold bounds and the (alpha, t) solver against brute force
"""

import math

import numpy as np
import pytest
from scipy.stats import norm

from analysis.secparams import (
    check_thresholds,
    max_t_service,
    min_alpha,
    min_t_integrity,
    min_t_replica,
    probit,
    solve,
)
from core.errors import InvalidParameterError
from sim.config import derive_q


# Slack matching the solver's rounding guard
TOL = 1e-9


def inequality_bounds(alpha, f, q, epsilon):
    """Real-valued (integrity, service, replica) bounds on t, straight from the closed forms."""
    z = norm.isf(epsilon)
    integrity = math.sqrt(alpha * f * (1 - f)) * z + alpha * f + 1
    honest_up = (1 - f) * (1 - q)
    service = alpha * honest_up / (f + honest_up)
    replica = 1 / (1 - q) - 1
    return integrity, service, replica


def brute_force(f, q, epsilon, alpha_cap):
    z = norm.isf(epsilon)
    alpha_floor = (math.sqrt(f) + math.sqrt(f * z * z + 4)) ** 2 / (4 * (1 - f))
    for alpha in range(1, alpha_cap + 1):
        if alpha < alpha_floor - TOL:
            continue
        integrity, service, replica = inequality_bounds(alpha, f, q, epsilon)
        for t in range(1, alpha + 1):
            if t >= integrity - TOL and t <= service + TOL and t >= replica - TOL:
                return alpha, t
    return None


@pytest.mark.parametrize("p", [1e-12, 2.0**-20, 0.001, 0.02425, 0.3, 0.5, 0.8, 0.975, 0.999999])
def test_probit_matches_scipy(p):
    assert probit(p) == pytest.approx(norm.ppf(p), rel=1e-9, abs=1e-9)


def test_probit_known_value():
    assert abs(probit(0.975) - 1.959964) < 1e-4


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1])
def test_probit_domain(p):
    with pytest.raises(InvalidParameterError):
        probit(p)


@pytest.mark.parametrize("q, expected", [(0.0, 1), (0.209, 1), (0.5, 1), (0.7, 3), (0.9, 9)])
def test_min_t_replica(q, expected):
    assert min_t_replica(q) == expected


def test_no_adversary_no_failures():
    report = solve(0.0, 0.0)
    assert report.feasible and report.chosen == (1, 1)


def test_majority_adversary_is_infeasible():
    report = solve(0.51, 0.0, alpha_cap=500)
    assert not report.feasible and report.chosen is None
    assert "feasible=false" in report.to_lines()


@pytest.mark.parametrize("q", [0.01, 0.2, 0.5])
def test_majority_adversary_with_churn_is_infeasible_up_to_large_alpha(q):
    cap = 100_000
    report = solve(0.51, q, alpha_cap=cap)
    assert not report.feasible and report.chosen is None

    alphas = np.arange(1, cap + 1, dtype=float)
    f, z = 0.51, norm.isf(2.0**-20)
    integrity = np.sqrt(alphas * f * (1 - f)) * z + alphas * f + 1
    honest_up = (1 - f) * (1 - q)
    service = alphas * honest_up / (f + honest_up)
    assert np.all(np.ceil(integrity - TOL) > np.floor(service + TOL))


@pytest.mark.parametrize("alpha, f, epsilon", [(100, 0.33, 2.0**-10), (40, 0.16, 2.0**-20), (7, 0.0, 2.0**-20)])
def test_bounds_match_closed_forms(alpha, f, epsilon):
    integrity, service, replica = inequality_bounds(alpha, f, 0.209, epsilon)
    assert min_t_integrity(alpha, f, epsilon) == max(1, math.ceil(integrity - TOL))
    assert max_t_service(alpha, f, 0.209) == math.floor(service + TOL)
    assert min_t_replica(0.209) == max(1, math.ceil(replica - TOL))


def test_reference_point_is_feasible():
    epsilon = 2.0**-10
    report = solve(0.16, 0.209, epsilon, alpha_cap=200)
    assert report.feasible
    alpha, t = report.chosen
    assert check_thresholds(alpha, t, 0.16, 0.209, epsilon)
    assert report.chosen == brute_force(0.16, 0.209, epsilon, 200)
    assert report.t_min_integrity <= t <= report.t_max_service


@pytest.mark.parametrize("f", np.linspace(0.0, 0.45, 10).round(3).tolist())
@pytest.mark.parametrize("q", np.linspace(0.0, 0.6, 10).round(3).tolist())
def test_solver_agrees_with_brute_force(f, q):
    epsilon, cap = 2.0**-8, 60
    report = solve(f, q, epsilon, alpha_cap=cap)
    assert report.chosen == brute_force(f, q, epsilon, cap)
    assert report.feasible == (report.chosen is not None)


def test_bounds_are_monotone():
    fs = np.linspace(0.0, 0.49, 25)
    alphas = [min_alpha(f) for f in fs]
    assert alphas == sorted(alphas)
    integrity = [min_t_integrity(a, 0.2) for a in range(1, 200)]
    assert integrity == sorted(integrity)
    service = [max_t_service(64, 0.1, q) for q in np.linspace(0.0, 0.9, 25)]
    assert service == sorted(service, reverse=True)


def test_report_lines_are_stable():
    keys = [line.split("=", 1)[0] for line in solve(0.1, 0.1).to_lines()]
    assert keys == [
        "f", "q", "epsilon", "alpha_cap", "alpha_min", "t_min_integrity",
        "t_max_service", "t_min_replica", "feasible", "alpha", "t",
    ]


def test_rejects_fractions_out_of_range():
    with pytest.raises(InvalidParameterError):
        solve(1.2, 0.0)
    with pytest.raises(InvalidParameterError):
        min_t_replica(1.0)


@pytest.mark.parametrize(
    "online, offline, expected", [(10.6, 2.8, 0.20896), (1.0, 1.0, 0.5), (3.0, 0.0, 0.0)]
)
def test_derive_q(online, offline, expected):
    assert derive_q(online, offline) == pytest.approx(expected, abs=1e-5)


@pytest.mark.parametrize("online, offline", [(0.0, 1.0), (1.0, -1.0)])
def test_derive_q_rejects_bad_means(online, offline):
    with pytest.raises(InvalidParameterError):
        derive_q(online, offline)
