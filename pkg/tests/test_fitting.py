import numpy as np
import pytest
from conftest import random_params
from loguru import logger
from protomem.core.exceptions import FitDivergedError, InvalidInputError
from protomem.models.body import NUM_BETAS, NUM_JOINTS, BodyParams
from protomem.models.fitting import CameraParams, FitProblem, LossTerms, LossWeights
from protomem.services.fitting_service import FIT_DIM, FittingService


@pytest.fixture
def fitter(small_body):
    return FittingService(small_body)


def exact_problem(body, params: BodyParams, camera: CameraParams, **extra) -> FitProblem:
    _, joints = body.forward(params)
    return FitProblem(target_j3d=joints, target_j2d=FittingService.project(joints, camera), **extra)


class TestProjection:
    def test_identity_camera(self):
        j3d = np.random.default_rng(0).standard_normal((NUM_JOINTS, 3))
        np.testing.assert_array_equal(FittingService.project(j3d, CameraParams()), j3d[:, :2])

    def test_hand_arithmetic(self):
        j3d = np.zeros((NUM_JOINTS, 3))
        j3d[0] = [0.5, 0.5, 3.0]
        out = FittingService.project(j3d, CameraParams(s=2.0, t=np.array([0.1, -0.1])))
        np.testing.assert_allclose(out[0], [1.1, 0.9], atol=1e-12)

    def test_depth_ignored(self):
        rng = np.random.default_rng(1)
        j3d = rng.standard_normal((NUM_JOINTS, 3))
        moved = j3d.copy()
        moved[:, 2] += rng.standard_normal(NUM_JOINTS)
        camera = CameraParams(s=1.3, t=np.array([0.2, 0.4]))
        assert np.array_equal(FittingService.project(j3d, camera), FittingService.project(moved, camera))

    def test_scale_must_be_positive(self):
        with pytest.raises(ValueError):
            CameraParams(s=0.0)


class TestLosses:
    def test_zero_at_target(self, fitter, small_body):
        params = random_params(np.random.default_rng(2))
        camera = CameraParams(s=0.9, t=np.array([0.05, -0.02]))
        problem = exact_problem(small_body, params, camera, target_params=params)
        terms = fitter.loss_terms(params, camera, problem)
        assert terms.j3d == pytest.approx(0.0, abs=1e-20)
        assert terms.j2d == pytest.approx(0.0, abs=1e-20)
        assert terms.pose == 0.0 and terms.shape == 0.0 and terms.label == 0.0

    def test_single_visible_keypoint(self, fitter, small_body):
        params = BodyParams.identity()
        _, joints = small_body.forward(params)
        target = joints[:, :2].copy()
        target[3, 0] += 0.1
        visibility = np.zeros(NUM_JOINTS)
        visibility[3] = 1.0
        problem = FitProblem(target_j2d=target, visibility=visibility)
        terms = fitter.loss_terms(params, CameraParams(), problem)
        assert terms.j2d == pytest.approx(0.01, abs=1e-12)

    def test_invisible_joints_ignored(self, fitter, small_body):
        params = BodyParams.identity()
        _, joints = small_body.forward(params)
        target = joints[:, :2] + 1.0
        problem = FitProblem(target_j2d=target, visibility=np.zeros(NUM_JOINTS))
        assert fitter.loss_terms(params, CameraParams(), problem).j2d == 0.0

    def test_negative_visibility_rejected(self):
        visibility = np.ones(NUM_JOINTS)
        visibility[0] = -1.0
        with pytest.raises(ValueError):
            FitProblem(target_j3d=np.zeros((NUM_JOINTS, 3)), visibility=visibility)

    def test_problem_needs_a_target(self):
        with pytest.raises(ValueError):
            FitProblem()

    def test_classification_loss(self):
        K = 50
        target = np.zeros(K)
        target[7] = 1.0
        assert FittingService.classification_loss(target, target) == 0.0
        assert FittingService.classification_loss(target, np.full(K, 1.0 / K)) == pytest.approx(np.log(50), abs=1e-12)

    def test_total_loss_defaults(self):
        assert FittingService.total_loss(LossTerms()) == 0.0
        assert FittingService.total_loss(LossTerms(j3d=1.0)) == 5.0
        assert FittingService.total_loss(LossTerms(j2d=1.0)) == 5.0
        assert FittingService.total_loss(LossTerms(pose=1.0)) == 1.0
        assert FittingService.total_loss(LossTerms(shape=1.0)) == pytest.approx(1e-3)
        assert FittingService.total_loss(LossTerms(label=1.0)) == 1.0

    def test_total_loss_is_linear(self):
        weights = LossWeights(j3d=2.0, j2d=0.5, pose=1.5, shape=0.1, label=3.0)
        a = LossTerms(pose=1.0, shape=2.0, j3d=0.5, j2d=4.0, label=0.2)
        doubled = a.model_copy(update={"j2d": 8.0})
        delta = FittingService.total_loss(doubled, weights) - FittingService.total_loss(a, weights)
        assert delta == pytest.approx(0.5 * 4.0)


class TestGradient:
    def test_matches_finite_differences(self, fitter, small_body):
        rng = np.random.default_rng(3)
        for _ in range(20):
            target = random_params(rng, angle=0.4)
            start = random_params(rng, angle=0.4)
            camera = CameraParams(s=float(rng.uniform(0.8, 1.2)), t=rng.uniform(-0.1, 0.1, 2))
            problem = exact_problem(small_body, target, camera, target_params=target)
            x = fitter.pack(start, CameraParams())
            grad = fitter.gradient(x, problem)
            reference = fitter.finite_difference_gradient(lambda v: fitter.objective(v, problem), x, 1e-5)
            assert grad.shape == (FIT_DIM,)
            assert np.linalg.norm(grad - reference) <= 1e-4 * np.linalg.norm(reference)


class TestFit:
    def test_already_optimal(self, fitter, small_body):
        params = random_params(np.random.default_rng(4))
        camera = CameraParams(s=1.1, t=np.array([0.02, 0.03]))
        problem = exact_problem(small_body, params, camera, target_params=params)
        report = fitter.fit(params, camera, problem, iters=3, step=0.1)
        assert report.trace == [report.trace[0]] * 4
        assert report.trace[0] == pytest.approx(0.0, abs=1e-18)
        np.testing.assert_array_equal(report.params.flatten(), params.flatten())

    def test_exhausted_halvings_warn(self, fitter):
        problem = FitProblem(target_params=BodyParams.identity())
        records = []
        sink = logger.add(lambda m: records.append(m.record), level="WARNING")
        try:
            fitter.fit(BodyParams.identity(), None, problem, iters=2, step=0.1)
        finally:
            logger.remove(sink)
        assert [r["level"].name for r in records] == ["WARNING", "WARNING"]

    def test_shape_only_problem_decreases(self, fitter):
        target = BodyParams(pose=BodyParams.identity().pose, shape=np.full(NUM_BETAS, 1.0))
        problem = FitProblem(target_params=target, weights=LossWeights(shape=1.0))
        report = fitter.fit(BodyParams.identity(), None, problem, iters=5, step=0.1)
        assert len(report.trace) == 6
        assert report.accepted_steps == 5
        assert all(b < a for a, b in zip(report.trace, report.trace[1:]))
        assert report.loss == min(report.trace)

    def test_better_start_fits_better(self, fitter, small_body):
        rng = np.random.default_rng(5)
        truth = random_params(rng, angle=0.3)
        near = BodyParams(pose=truth.pose, shape=truth.shape + 0.05)
        problem = exact_problem(small_body, truth, CameraParams())
        from_near = fitter.fit(near, None, problem, iters=3)
        from_identity = fitter.fit(BodyParams.identity(), None, problem, iters=3)
        assert from_near.loss < from_identity.loss

    def test_non_finite_initial_loss_diverges(self, fitter):
        start = BodyParams(pose=BodyParams.identity().pose, shape=np.full(NUM_BETAS, 1e200))
        problem = FitProblem(target_params=BodyParams.identity(), weights=LossWeights(shape=1.0))
        with pytest.raises(FitDivergedError) as exc:
            fitter.fit(start, None, problem, iters=3)
        assert len(exc.value.trace) == 1
        assert exc.value.trace[0] == np.inf

    def test_nan_candidate_loss_diverges(self, fitter, monkeypatch):
        problem = FitProblem(
            target_params=BodyParams(pose=BodyParams.identity().pose, shape=np.ones(NUM_BETAS)),
            weights=LossWeights(shape=1.0),
        )
        calls = []
        real_objective = fitter.objective

        def objective(x, p):
            calls.append(1)
            return real_objective(x, p) if len(calls) == 1 else np.nan

        monkeypatch.setattr(fitter, "objective", objective)
        with pytest.raises(FitDivergedError) as exc:
            fitter.fit(BodyParams.identity(), None, problem, iters=3, step=0.1)
        assert exc.value.trace == [pytest.approx(float(NUM_BETAS))]
        assert len(calls) == 2

    def test_invalid_arguments(self, fitter):
        problem = FitProblem(target_params=BodyParams.identity())
        with pytest.raises(InvalidInputError):
            fitter.fit(BodyParams.identity(), None, problem, iters=0)
        with pytest.raises(InvalidInputError):
            fitter.fit(BodyParams.identity(), None, problem, step=-1.0)

    def test_fit_many_keeps_order_and_thread_invariance(self, fitter, small_body):
        rng = np.random.default_rng(6)
        truths = [random_params(rng, angle=0.3) for _ in range(4)]
        problems = [exact_problem(small_body, t, CameraParams()) for t in truths]
        inits = [BodyParams.identity()] * 4
        one = fitter.fit_many(inits, [None] * 4, problems, iters=2, n_jobs=1)
        many = fitter.fit_many(inits, [None] * 4, problems, iters=2, n_jobs=4)
        for a, b in zip(one, many):
            assert a.trace == b.trace
            assert np.array_equal(a.params.flatten(), b.params.flatten())
