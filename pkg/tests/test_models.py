import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import four_atom_law, joint_from_moments, mixture_joint, window_product_integral
from retrobell.core import RandomStream, angular_distance
from retrobell.models import (
    QM_REPRODUCING,
    AtomLaw,
    BellToyModel,
    JointLaw,
    LocalCausalModel,
    QMModel,
    RetroModel,
    SingleBranchModel,
    UniformLaw,
    UnsupportedLaw,
    Variant,
    bell_toy_aprime,
    branch_statistics,
    exact_correlator,
    make_model,
    malus_plus,
    malus_prob,
    model_ids,
    nonlocalize,
    qm_correlator,
    qm_joint,
    retro_lambda_law,
    sample_trial,
)
from retrobell.statistics import run_experiment

PI = math.pi
angles = st.floats(min_value=0.0, max_value=PI, exclude_max=True)


def law_close(law: JointLaw, expected, tol=1e-12):
    for key, p in law.as_dict().items():
        assert p == pytest.approx(expected[key], abs=tol), key


# --- quantum statistics ---


@pytest.mark.parametrize("a, b, expected", [
    (0.4, 0.4, 1.0),
    (0.0, PI / 4, 0.0),
    (0.0, PI / 8, 0.7071067811865476),
])
def test_qm_correlator_examples(a, b, expected):
    assert qm_correlator(a, b) == pytest.approx(expected, abs=1e-12)


@given(angles, angles)
def test_qm_correlator_period_and_separation(a, b):
    e = qm_correlator(a, b)
    assert qm_correlator(a + PI, b + PI) == pytest.approx(e, abs=1e-12)
    assert qm_correlator(0.0, angular_distance(a, b)) == pytest.approx(e, abs=1e-12)


def test_qm_joint_matches_linear_system():
    p = qm_joint(0.0, PI / 8).as_array()
    np.testing.assert_allclose(p, joint_from_moments(0, 0, math.cos(PI / 4)), atol=1e-12)
    np.testing.assert_allclose(p, [0.42677669529663687, 0.07322330470336313] * 1 + [0.07322330470336313, 0.42677669529663687], atol=1e-12)


def test_qm_joint_equal_and_orthogonal_settings():
    np.testing.assert_allclose(qm_joint(1.1, 1.1).as_array(), [0.5, 0, 0, 0.5], atol=1e-12)
    np.testing.assert_allclose(qm_joint(0.0, PI / 4).as_array(), [0.25] * 4, atol=1e-12)


def test_qm_joint_is_a_law_on_random_settings():
    rng = np.random.default_rng(3)
    for a, b in rng.uniform(0, PI, (10**4, 2)):
        p = qm_joint(a, b).as_array()
        assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-12


def test_joint_law_validation():
    with pytest.raises(ValueError):
        JointLaw(0.5, 0.5, 0.5, -0.5)
    with pytest.raises(ValueError):
        JointLaw(0.3, 0.3, 0.3, 0.3)


# --- Malus law ---


@pytest.mark.parametrize("A, a, lam, expected", [
    (1, 0.9, 0.9, 1.0),
    (1, 0.0, PI / 3, 0.25),
    (-1, 0.0, PI / 2, 1.0),
])
def test_malus_examples(A, a, lam, expected):
    assert malus_prob(A, a, lam) == pytest.approx(expected, abs=1e-12)


@given(angles, angles)
def test_malus_outcomes_sum_to_one(a, lam):
    assert malus_prob(1, a, lam) + malus_prob(-1, a, lam) == pytest.approx(1.0, abs=1e-12)


def test_malus_rejects_bad_outcome():
    with pytest.raises(ValueError):
        malus_prob(0, 0.0, 0.0)


# --- retro law ---


def test_symmetric_law_example():
    law = retro_lambda_law(Variant.SYMMETRIC, 0.0, PI / 8)
    assert sorted(law.atoms) == pytest.approx(sorted([0.0, PI / 2, PI / 8, 5 * PI / 8]), abs=1e-12)
    assert law.weights == (0.25, 0.25, 0.25, 0.25)


@pytest.mark.parametrize("a, b", [(0.3, 0.3), (0.3, 0.3 + PI / 2), (0.3, 0.3 + PI)])
def test_symmetric_law_merges_coinciding_atoms(a, b):
    law = retro_lambda_law("symmetric", a, b)
    assert len(law.atoms) == 2
    assert law.weights == (0.5, 0.5)
    assert law.weight_of(a) == 0.5 and law.weight_of(a + PI / 2) == 0.5


@given(angles, angles)
def test_asymmetric_law_ignores_b(a, b):
    law = retro_lambda_law(Variant.ASYMMETRIC_LEFT_FIRST, a, b)
    assert law == retro_lambda_law(Variant.ASYMMETRIC_LEFT_FIRST, a, 0.0)
    assert law.weights == (0.5, 0.5)


def test_asymmetric_law_example():
    law = retro_lambda_law(Variant.ASYMMETRIC_LEFT_FIRST, 0.0, 1.234)
    assert law.as_dict() == {0.0: 0.5, PI / 2: 0.5}


# --- Bell toy model ---


@pytest.mark.parametrize("a, b, expected", [
    (0.6, 0.6, 0.6),
    (0.0, PI / 8, 0.16266128557107165),
    (0.0, PI / 2, 0.0),
])
def test_bell_toy_aprime_examples(a, b, expected):
    assert angular_distance(bell_toy_aprime(a, b), expected) <= 1e-12


def test_bell_toy_aprime_offset_value():
    assert angular_distance(bell_toy_aprime(0.0, PI / 8), PI / 8) == pytest.approx(0.2300377961276525, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(angles, angles)
def test_bell_toy_correlator_against_quadrature(a, b):
    ap = bell_toy_aprime(a, b)
    assert window_product_integral(ap, b) == pytest.approx(qm_correlator(a, b), abs=1e-9)
    assert exact_correlator(BellToyModel(), a, b) == pytest.approx(1 - 4 / PI * angular_distance(ap, b), abs=1e-12)


@given(angles, angles)
def test_bell_toy_aprime_steps_from_b_toward_a(a, b):
    ap = bell_toy_aprime(a, b)
    step = PI / 4 * (1 - math.cos(2 * a - 2 * b))
    assert angular_distance(ap, b) == pytest.approx(min(step, PI - step), abs=1e-9)
    d = angular_distance(a, b)
    if 1e-6 < d < PI / 2 - 1e-6 and step < PI / 2:
        # moving by step toward a shrinks the distance to a, moving away grows it
        assert angular_distance(ap, a) == pytest.approx(abs(d - step), abs=1e-9)


# --- sampling ---


def test_qm_equal_settings_always_agree():
    res = run_experiment(QMModel(), 0.7, 0.7, 5000, 1)
    assert np.array_equal(res.trials.A, res.trials.B)


def test_retro_branch_orthogonal_to_a_gives_minus_one():
    a, b = 0.2, 1.0
    res = run_experiment(RetroModel(), a, b, 40000, 2, record_hidden=True)
    on_branch = np.array([angular_distance(h, a + PI / 2) <= 1e-12 for h in res.trials.hidden])
    assert on_branch.sum() > 9000
    assert np.all(res.trials.A[on_branch] == -1)


def test_bell_toy_orthogonal_settings_anticorrelate():
    res = run_experiment(BellToyModel(), 0.0, PI / 2, 20000, 3)
    assert np.all(res.trials.A * res.trials.B == -1)


@pytest.mark.parametrize("model_id", model_ids())
def test_sample_trial_matches_batch_row(model_id):
    model = make_model(model_id)
    stream = RandomStream(42, 3)
    batch = run_experiment(model, 0.1, 0.9, 20, 42, stream_id=3, record_hidden=True).trials
    for i in (0, 7, 19):
        t = sample_trial(model, 0.1, 0.9, stream, index=i, record_hidden=True)
        assert t == batch[i]
    assert sample_trial(model, 0.1, 0.9, stream, index=2).hidden is None


def test_sample_trial_marks_retro_order():
    assert sample_trial(RetroModel(), 0, 0, RandomStream(0)).retro_order
    assert not sample_trial(QMModel(), 0, 0, RandomStream(0)).retro_order


@pytest.mark.parametrize("model_id", model_ids())
def test_sampling_consistent_with_exact_law(model_id):
    model = make_model(model_id)
    n = 10**6
    res = run_experiment(model, 0.0, PI / 8, n, 2024)
    exact = exact_correlator(model, 0.0, PI / 8)
    assert abs(res.correlator.z(exact)) < 5


# --- exact laws ---


@pytest.mark.parametrize("variant", list(Variant))
def test_retro_joint_matches_enumeration(variant):
    model = RetroModel(variant)
    for a, b in [(0.0, PI / 8), (0.3, 2.0), (1.0, 1.0)]:
        atoms = four_atom_law(a, b) if variant is Variant.SYMMETRIC else [(a, 0.5), (a + PI / 2, 0.5)]
        law_close(model.joint(a, b), mixture_joint(atoms, a, b))


def test_retro_correlator_example_and_each_branch():
    model = RetroModel()
    assert exact_correlator(model, 0.0, PI / 8) == pytest.approx(0.7071067811865476, abs=1e-12)
    for lam in model.law(0.0, PI / 8).atoms:
        _, _, corr = branch_statistics(model, lam, 0.0, PI / 8)
        assert corr == pytest.approx(math.cos(PI / 4), abs=1e-12)


@pytest.mark.parametrize("model_id", QM_REPRODUCING)
def test_equal_settings_give_perfect_correlation(model_id):
    assert exact_correlator(make_model(model_id), 0.8, 0.8) == pytest.approx(1.0, abs=1e-12)


def test_branch_statistics_examples():
    retro = RetroModel()
    a, b = 0.3, 1.1
    mA, mB, corr = branch_statistics(retro, a + PI / 2, a, b)
    assert mA == pytest.approx(-1.0, abs=1e-12)
    assert corr == pytest.approx(-math.sin(a - b) ** 2 + math.cos(a - b) ** 2, abs=1e-12)
    assert branch_statistics(retro, 0.0, 0.0, PI / 8)[1] == pytest.approx(0.7071067811865476, abs=1e-12)
    mean_b = (branch_statistics(retro, a, a, b)[1] + branch_statistics(retro, a + PI / 2, a, b)[1]) / 2
    assert mean_b == pytest.approx(0.0, abs=1e-12)


def test_branch_statistics_rejects_non_atoms():
    with pytest.raises(ValueError):
        branch_statistics(RetroModel(), 0.5, 0.0, PI / 8)


def test_local_uniform_law_against_riemann_sum():
    model = LocalCausalModel(UniformLaw(), malus_plus, malus_plus)
    a, b = 0.2, 0.9
    lam = (np.arange(200_000) + 0.5) * PI / 200_000
    pa, pb = malus_plus(a, lam), malus_plus(b, lam)
    expected = {(1, 1): np.mean(pa * pb), (1, -1): np.mean(pa * (1 - pb)),
                (-1, 1): np.mean((1 - pa) * pb), (-1, -1): np.mean((1 - pa) * (1 - pb))}
    law_close(model.joint(a, b), expected, tol=1e-9)
    # Malus stations on a uniform polarization give half the quantum contrast
    assert model.joint(a, b).correlator == pytest.approx(0.5 * math.cos(2 * (a - b)), abs=1e-12)


def test_local_model_sides_never_see_the_far_setting():
    seen = {"A": set(), "B": set()}

    def law(tag):
        def f(x, lam):
            seen[tag].add(float(np.asarray(x).flat[0]))
            return malus_plus(x, lam)
        return f

    model = LocalCausalModel(AtomLaw.build([0.1, 1.2], [0.5, 0.5]), law("A"), law("B"))
    for b in (0.0, 0.7, 2.9):
        j = model.joint(0.4, b)
        assert j.mean_A == pytest.approx(model.joint(0.4, 0.0).mean_A, abs=1e-12)
    for a in (0.0, 1.5):
        assert model.joint(a, 0.7).mean_B == pytest.approx(model.joint(2.2, 0.7).mean_B, abs=1e-12)
    assert seen["A"] == {0.4, 0.0, 1.5, 2.2}
    assert seen["B"] == {0.0, 0.7, 2.9}


def test_exact_correlator_rejects_unsupported_law():
    class Gaussian:
        def sample(self, u):
            return u

    with pytest.raises(UnsupportedLaw):
        exact_correlator(LocalCausalModel(Gaussian(), malus_plus, malus_plus), 0.0, 0.1)


# --- translation ---


def test_lambda_prime_example():
    assert nonlocalize(RetroModel()).lambda_prime(2, 0.0, PI / 8) == pytest.approx(PI / 2, abs=1e-12)


def test_translation_reproduces_quantum_law():
    retro = RetroModel()
    translated = nonlocalize(retro)
    q = qm_joint(0.0, PI / 8).as_dict()
    law_close(retro.joint(0.0, PI / 8), q)
    law_close(translated.joint(0.0, PI / 8), q)
    for model in (retro, translated):
        assert model.joint(0.5, 0.5).correlator == pytest.approx(1.0, abs=1e-12)


def test_translation_records_integer_hidden_value():
    res = run_experiment(nonlocalize(RetroModel()), 0.0, 0.3, 4000, 5, record_hidden=True)
    assert set(np.unique(res.trials.hidden).tolist()) == {1, 2, 3, 4}
    assert not res.trials.retro_order


def test_translation_requires_symmetric_variant():
    with pytest.raises(ValueError):
        nonlocalize(RetroModel(Variant.ASYMMETRIC_LEFT_FIRST))


def test_single_branch_fixture_reproduces_cosine_but_not_marginals():
    model = SingleBranchModel()
    j = model.joint(0.0, 0.0)
    assert j.correlator == pytest.approx(1.0, abs=1e-12)
    assert j.mean_B == pytest.approx(1.0, abs=1e-12)


def test_unknown_model_id():
    with pytest.raises(KeyError):
        make_model("nope")
    with pytest.raises(KeyError):
        make_model("local:nope")
