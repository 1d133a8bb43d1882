import numpy as np
import pytest

from safelearn import regression
from safelearn.bench import instance
from safelearn.geometry import HPolytope, MatrixPolytope
from safelearn.plant import Plant
from safelearn.regression import (
    QuadraticResidualModel,
    explore_nonlinear_one_step,
    fit_least_squares,
    fit_sos_constrained,
    rmse,
    sample_region,
)
from safelearn.safesets import NonlinearEnvelope


def _quadratic_plant(rng, n=2, scale=0.1):
    A = rng.normal(size=(n, n)) * 0.4
    G = []
    for _ in range(n):
        M = rng.normal(size=(n, n)) * scale
        G.append((M + M.T) / 2)
    model = QuadraticResidualModel(A, G)
    return Plant(A, g_star=model.residual), model


class TestLeastSquares:
    def test_exact_recovery_from_generic_data(self, rng):
        plant, truth = _quadratic_plant(rng)
        data = []
        for _ in range(30):
            x = rng.uniform(-1, 1, size=2)
            data.append((x, plant.step(x)))
        model = fit_least_squares(data)
        assert model.loss(data) <= 1e-10
        assert np.allclose(model.A, truth.A, atol=1e-6)
        for G_hat, G in zip(model.G, truth.G):
            assert np.allclose(G_hat, G, atol=1e-6)

    def test_single_point_interpolates(self, rng):
        x = rng.uniform(-1, 1, size=3)
        y = rng.normal(size=3)
        model = fit_least_squares([(x, y)])
        assert np.sum((model.predict(x) - y) ** 2) <= 1e-12

    def test_requires_data(self):
        with pytest.raises(ValueError):
            fit_least_squares([])


class TestConstrainedFit:
    def test_envelope_violation_is_infeasible(self, rng):
        inst = instance("sec6.3")
        x = np.full(4, 0.05)
        y = inst.plant.A_star @ x + 10.0  # grossly outside the envelope
        with pytest.raises(ValueError):
            fit_sos_constrained([(x, y)], inst.base, inst.extras["gamma"], inst.S)

    def test_loose_envelope_matches_unconstrained(self, rng):
        plant, _ = _quadratic_plant(rng, scale=0.02)
        base = MatrixPolytope.entrywise_bound(2, 10.0)
        S = HPolytope.box(2)
        data = [(x, plant.step(x))
                for x in rng.uniform(-1, 1, size=(12, 2))]
        m_free = fit_least_squares(data)
        sup_res = max(np.max(np.abs(plant.step(x) - plant.A_star @ x))
                      for x, _ in data)
        m_cons = fit_sos_constrained(data, base, max(10 * sup_res, 1.0), S)
        assert m_cons.loss(data) - m_free.loss(data) <= 1e-4

    def test_loss_ordering(self, rng):
        inst = instance("sec6.3")
        env = NonlinearEnvelope(inst.extras["gamma"], np.inf, 0)
        data, _ = explore_nonlinear_one_step(inst.S, inst.base, env, inst.plant,
                                             8, seed=1)
        m_ls = fit_least_squares(data)
        m_sos = fit_sos_constrained(data, inst.base, env.gamma, inst.S)
        assert m_sos.loss(data) >= m_ls.loss(data) - 1e-8

    def test_certificate_soundness(self, rng):
        inst = instance("sec6.3")
        env = NonlinearEnvelope(inst.extras["gamma"], np.inf, 0)
        data, _ = explore_nonlinear_one_step(inst.S, inst.base, env, inst.plant,
                                             8, seed=2)
        model = fit_sos_constrained(data, inst.base, env.gamma, inst.S)
        assert model.certified_gamma == env.gamma
        # |g_j(x)| <= gamma everywhere on S, checked on 10^4 samples
        pts = sample_region(inst.S, 10_000, seed=3)
        quad = np.stack([np.einsum("ki,ij,kj->k", pts, Gj, pts)
                         for Gj in model.G], axis=1)
        assert np.max(np.abs(quad)) <= env.gamma + 1e-6
        # the fitted linear part respects its polytope
        assert inst.base.membership(model.A, 1e-7)


class TestRmse:
    def test_perfect_model_is_zero(self, rng):
        plant, truth = _quadratic_plant(rng)
        pts = rng.uniform(-1, 1, size=(100, 2))
        assert rmse(truth, plant, pts) <= 1e-12

    def test_constant_offset(self, rng):
        A = rng.normal(size=(2, 2))
        v = np.array([0.3, -0.4])
        plant = Plant(A)
        model = QuadraticResidualModel(A, [np.zeros((2, 2))] * 2)
        model.predict_base = model.predict

        class Shifted:
            def predict(self, x):
                return A @ x + v

        pts = rng.uniform(-1, 1, size=(50, 2))
        assert rmse(Shifted(), plant, pts) == pytest.approx(np.linalg.norm(v),
                                                            abs=1e-12)


class TestExploration:
    def test_queries_stay_safe_and_data_consistent(self):
        inst = instance("sec6.3")
        env = NonlinearEnvelope(inst.extras["gamma"], np.inf, 0)
        data, states = explore_nonlinear_one_step(inst.S, inst.base, env,
                                                  inst.plant, 10, seed=0)
        assert len(data) == len(states) == 10
        for x, y in data:
            assert inst.S.contains(x, 1e-7)
            assert inst.S.contains(y, 1e-6)
            assert np.allclose(y, inst.plant.step(x), atol=1e-12)

    def test_first_eight_points_are_well_spread(self):
        inst = instance("sec6.3")
        env = NonlinearEnvelope(inst.extras["gamma"], np.inf, 0)
        for seed in range(3):
            data, _ = explore_nonlinear_one_step(inst.S, inst.base, env,
                                                 inst.plant, 8, seed=seed)
            X = np.array([x for x, _ in data])
            sv = np.linalg.svd(X, compute_uv=False)
            assert sv[-1] > 1e-4

    def test_constrained_beats_unconstrained_generalization(self):
        inst = instance("sec6.3")
        env = NonlinearEnvelope(inst.extras["gamma"], np.inf, 0)
        data, _ = explore_nonlinear_one_step(inst.S, inst.base, env, inst.plant,
                                             8, seed=0)
        m_ls = fit_least_squares(data)
        m_sos = fit_sos_constrained(data, inst.base, env.gamma, inst.S)
        test = sample_region(inst.S, 500, seed=9)
        assert rmse(m_sos, inst.plant, test) < rmse(m_ls, inst.plant, test)


def test_model_json_roundtrip(rng):
    _, model = _quadratic_plant(rng)
    doc = model.to_json()
    back = QuadraticResidualModel.from_json(doc)
    x = rng.uniform(-1, 1, size=2)
    assert np.allclose(back.predict(x), model.predict(x))
