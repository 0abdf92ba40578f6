import numpy as np
import pytest

from tensorspike.diagnostics import (ExpansionProbe, alignment, first_order_term,
                                     population_alpha_step, population_steps_to,
                                     psi1_remainder)


def _unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def test_alignment_identity():
    rng = np.random.default_rng(0)
    v, u = _unit(rng, 4), _unit(rng, 3)
    assert alignment(v, u, np.outer(v, u)) == pytest.approx(1.0, abs=1e-14)


def test_alignment_orthogonal():
    rng = np.random.default_rng(1)
    v, u = _unit(rng, 4), _unit(rng, 3)
    w = rng.standard_normal((4, 3))
    w -= np.vdot(np.outer(v, u), w) * np.outer(v, u)
    assert alignment(v, u, w) == pytest.approx(0.0, abs=1e-12)


def test_alignment_mixture():
    rng = np.random.default_rng(2)
    v = _unit(rng, 4)
    u = _unit(rng, 3)
    vp = rng.standard_normal(4)
    vp -= np.dot(vp, v) * v
    vp /= np.linalg.norm(vp)
    w = (np.outer(v, u) + np.outer(vp, u)) / 2.0
    assert alignment(v, u, w) == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-12)


def test_first_order_term_scale_direction():
    rng = np.random.default_rng(3)
    w = rng.standard_normal((4, 3))
    v, u = _unit(rng, 4), _unit(rng, 3)
    assert first_order_term(w, w, v, u) == pytest.approx(0.0, abs=1e-14)


def test_first_order_term_pure_signal():
    rng = np.random.default_rng(4)
    v, u = _unit(rng, 4), _unit(rng, 3)
    p = np.outer(v, u)
    w = rng.standard_normal((4, 3))
    w -= np.vdot(p, w) * p
    w /= np.linalg.norm(w)
    assert first_order_term(w, p, v, u) == pytest.approx(1.0, abs=1e-12)


def test_first_order_term_matches_finite_difference():
    rng = np.random.default_rng(5)
    for _ in range(50):
        w = rng.standard_normal((4, 3))
        q = rng.standard_normal((4, 3))
        v, u = _unit(rng, 4), _unit(rng, 3)
        s = first_order_term(w, q, v, u)
        eta = 1e-6
        fd = (alignment(v, u, w + eta * q) - alignment(v, u, w - eta * q)) / (2 * eta)
        assert abs(fd - s) < 1e-6


def test_first_order_error_halves_with_eta():
    rng = np.random.default_rng(6)
    ratios = []
    for _ in range(200):
        w = rng.standard_normal((4, 3))
        q = rng.standard_normal((4, 3))
        v, u = _unit(rng, 4), _unit(rng, 3)
        s = first_order_term(w, q, v, u)
        errs = []
        for eta in (1e-3, 5e-4):
            fd = (alignment(v, u, w + eta * q) - alignment(v, u, w)) / eta
            errs.append(abs(fd - s))
        if errs[0] > 1e-10:
            ratios.append(errs[1] / errs[0])
    assert np.median(ratios) == pytest.approx(0.5, abs=0.1)


def test_psi1_zero_perturbation():
    rng = np.random.default_rng(7)
    w = rng.standard_normal((3, 3))
    probe = ExpansionProbe(W=w, Q=np.zeros((3, 3)), v=_unit(rng, 3), u=_unit(rng, 3),
                           eta=0.1, eta_bar=0.05)
    assert psi1_remainder(probe) == 0.0


def test_psi1_scale_direction_cancels():
    rng = np.random.default_rng(8)
    for _ in range(50):
        w = rng.standard_normal((4, 3))
        v, u = _unit(rng, 4), _unit(rng, 3)
        eta_bar = float(rng.uniform(0.0, 0.09))
        probe = ExpansionProbe(W=w, Q=w.copy(), v=v, u=u, eta=0.1, eta_bar=eta_bar)
        assert abs(psi1_remainder(probe)) < 1e-10


def test_expansion_identity_grid_bound():
    # |alpha(W+eta Q) - alpha(W) - eta s| <= (eta^2/2) max over eta_bar grid of |Psi1|
    rng = np.random.default_rng(9)
    eta = 1e-3
    failures = 0
    for _ in range(1000):
        w = rng.standard_normal((4, 3))
        q = rng.standard_normal((4, 3))
        v, u = _unit(rng, 4), _unit(rng, 3)
        lhs = abs(alignment(v, u, w + eta * q) - alignment(v, u, w)
                  - eta * first_order_term(w, q, v, u))
        grid = np.linspace(0.0, eta, 11)
        bound = max(abs(psi1_remainder(ExpansionProbe(w, q, v, u, eta, float(eb))))
                    for eb in grid)
        if lhs > (eta ** 2 / 2.0) * bound * (1 + 1e-6) + 1e-15:
            failures += 1
    assert failures == 0


def test_population_step_fixed_point():
    assert population_alpha_step(1.0, 0.1, 1.0) == 1.0


def test_population_step_linear_regime():
    assert population_alpha_step(0.0, 0.1, 1.0) == pytest.approx(0.1, abs=1e-15)


def test_population_steps_to_matches_closed_form_scale():
    # dalpha/dt = eta*lam*(1 - alpha^2): steps ~ (atanh(b) - atanh(a))/(eta lam)
    eta, lam = 0.001, 1.0
    steps = population_steps_to(0.05, eta, lam, 0.99)
    expected = (np.arctanh(0.99) - np.arctanh(0.05)) / (eta * lam)
    assert steps == pytest.approx(expected, rel=0.02)
