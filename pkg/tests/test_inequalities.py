import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import bell_shared_margins, chsh_local_max
from random_models import random_angles, random_deterministic_model, random_local_model
from retrobell.core import angular_distance, polarizer_sign
from retrobell.inequalities import (
    angle_grid,
    bell1964,
    chsh,
    correlator_of,
    integrand_residual,
    local_bound_bruteforce,
    violation_search,
)
from retrobell.models import QM_REPRODUCING, AtomLaw, DeterministicLocalModel, UniformLaw, make_model, qm_correlator
from retrobell.statistics import CorrelatorEstimate

PI = math.pi
seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_bell1964_qm_example():
    r = bell1964(qm_correlator, 0.0, PI / 6, PI / 3)
    assert r.lhs == pytest.approx(1.0, abs=1e-12)
    assert r.rhs == pytest.approx(0.5, abs=1e-12)
    assert r.violated and r.margin == pytest.approx(0.5, abs=1e-12)


def test_bell1964_degenerate_triple():
    r = bell1964(qm_correlator, 0.4, 0.4, 0.4)
    assert r.lhs == 0.0 and r.rhs == pytest.approx(0.0, abs=1e-12) and not r.violated


@pytest.mark.parametrize("model_id", QM_REPRODUCING)
def test_all_quantum_models_violate(model_id):
    assert bell1964(correlator_of(make_model(model_id)), 0.0, PI / 6, PI / 3).violated


def test_monte_carlo_claims_need_five_sigma():
    def noisy(stderr):
        return lambda x, y: CorrelatorEstimate(qm_correlator(x, y), stderr, 100)

    assert bell1964(noisy(0.01), 0.0, PI / 6, PI / 3).violated
    # margin 0.5 against a propagated error of sqrt(3) * 0.06 ~ 0.104 is under 5 sigma
    r = bell1964(noisy(0.06), 0.0, PI / 6, PI / 3)
    assert r.stderr == pytest.approx(math.sqrt(3) * 0.06)
    assert not r.violated
    q = chsh(noisy(0.2), 0.0, PI / 4, PI / 8, 3 * PI / 8)
    assert q.S > 2 and not q.violated


def test_chsh_qm_examples():
    assert chsh(qm_correlator, 0.0, PI / 4, PI / 8, 3 * PI / 8).S == pytest.approx(2 * math.sqrt(2), abs=1e-12)
    q = chsh(qm_correlator, 0.9, 0.9, 0.9, 0.9)
    assert q.S == pytest.approx(2.0, abs=1e-12) and not q.violated


def test_integrand_two_atom_sign_model():
    model = DeterministicLocalModel(AtomLaw.build([0.2, 1.7], [0.5, 0.5]), polarizer_sign)
    assert integrand_residual(model, 0.0, PI / 6, PI / 3) <= 1e-12


def test_integrand_single_atom_is_exact():
    model = DeterministicLocalModel(AtomLaw.build([0.9], [1.0]), polarizer_sign)
    assert integrand_residual(model, 0.0, PI / 6, PI / 3) == 0.0


def test_integrand_needs_finite_law():
    with pytest.raises(ValueError):
        integrand_residual(DeterministicLocalModel(UniformLaw(), polarizer_sign), 0, 1, 2)


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_integrand_identity_on_random_models(seed):
    rng = np.random.default_rng(seed)
    assert integrand_residual(random_deterministic_model(rng), *random_angles(rng, 3)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_deterministic_models_never_violate_bell1964(seed):
    rng = np.random.default_rng(seed)
    model = random_deterministic_model(rng)
    r = bell1964(model.correlator, *random_angles(rng, 3))
    assert r.lhs <= r.rhs + 1e-12 and not r.violated


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_local_models_never_exceed_chsh_bound(seed):
    rng = np.random.default_rng(seed)
    model = random_local_model(rng)
    assert chsh(correlator_of(model), *random_angles(rng, 4)).S <= 2 + 1e-12


def test_brute_force_constants_match_oracle():
    chsh_best = local_bound_bruteforce("chsh", (0.1, 0.7, 1.3, 2.9))
    assert chsh_best.value == chsh_local_max() == 2
    bell_best = local_bound_bruteforce("bell1964", (0.0, PI / 6, PI / 3))
    assert bell_best.value == max(bell_shared_margins()) == 0
    assert bell_best.strategy == (1, 1, 1)


def test_brute_force_degenerate_chsh():
    assert local_bound_bruteforce("chsh", (0.1, 0.5, 0.9, 0.9)).value == 2


@pytest.mark.parametrize("expression, settings_", [
    ("chsh", (0.0, 1.0, 2.0)),
    ("chsh", (0.0, 1.0, 2.0, 3.0, 4.0)),
    ("bell1964", (0.0, 1.0, 2.0, 3.0)),
    ("tsirelson", (0.0,)),
])
def test_brute_force_rejects_wrong_sizes(expression, settings_):
    with pytest.raises(ValueError):
        local_bound_bruteforce(expression, settings_)


def test_grid_contains_the_known_triple():
    g = angle_grid(64)
    for target in (0.0, PI / 6, PI / 3):
        assert np.min(np.abs(g - target)) <= 1e-12


def test_violation_search_bell1964():
    r = violation_search(qm_correlator, "bell1964", 64)
    assert r.margin >= 0.5 - 1e-12 and r.violated
    a, b, c = r.settings
    assert bell1964(qm_correlator, a, b, c).margin == pytest.approx(r.margin, abs=1e-12)
    # the maximizing triple is equally spaced
    assert angular_distance(a, b) == pytest.approx(angular_distance(b, c), abs=1e-12)
    assert angular_distance(a, c) == pytest.approx(2 * angular_distance(a, b), abs=1e-12)


def test_violation_search_chsh():
    r = violation_search(qm_correlator, "chsh", 64)
    assert r.value >= 2.82
    assert chsh(qm_correlator, *r.settings).S == pytest.approx(r.value, abs=1e-12)


def test_violation_search_constant_correlator():
    for expression in ("bell1964", "chsh"):
        assert not violation_search(lambda x, y: 1.0, expression, 16).violated


def test_violation_search_rejects_coarse_grids():
    with pytest.raises(ValueError):
        violation_search(qm_correlator, "chsh", 7)
    with pytest.raises(ValueError):
        violation_search(qm_correlator, "ghz", 16)


def test_chsh_search_matches_exhaustive_scan_on_small_grid():
    g = angle_grid(9)
    best = max(chsh(qm_correlator, a, a2, b, b2).S for a in g for a2 in g for b in g for b2 in g)
    assert violation_search(qm_correlator, "chsh", 9).value == pytest.approx(best, abs=1e-12)
