import numpy as np
import pytest
from protomem.models.body import NUM_BETAS, NUM_JOINTS, BodyParams
from protomem.services import rotations
from protomem.services.body_model_service import BodyModelService
from protomem.services.clustering_service import ClusteringService
from protomem.services.dataset_service import DatasetService


@pytest.fixture(scope="session")
def toy_model():
    return BodyModelService.gen_toy_model(seed=0)


@pytest.fixture(scope="session")
def body(toy_model):
    return BodyModelService(toy_model)


@pytest.fixture(scope="session")
def small_body():
    """Model with 4 vertices per joint for the slower fitting tests."""
    return BodyModelService(BodyModelService.gen_toy_model(seed=0, verts_per_joint=4))


@pytest.fixture(scope="session")
def corpus(body):
    """300 samples in 3 clusters with small noise, plus the generator labels."""
    return DatasetService(body).gen_samples(seed=0, n=300, clusters=3, noise=0.02)


@pytest.fixture(scope="session")
def small_corpus(small_body):
    return DatasetService(small_body).gen_samples(seed=1, n=30, clusters=3, noise=0.02)


def random_params(rng: np.random.Generator, angle: float = 0.5, shape_scale: float = 1.0) -> BodyParams:
    R = rotations.axis_angle_to_rotmat(rng.normal(0.0, angle, (NUM_JOINTS, 3)))
    return BodyParams(pose=rotations.rotmat_to_rot6d(R), shape=shape_scale * rng.standard_normal(NUM_BETAS))


def covering_seed(labels: np.ndarray, K: int, max_seed: int = 200) -> int:
    """First seed whose initial centers are drawn from K distinct generator clusters."""
    for seed in range(max_seed):
        idx = ClusteringService.draw_center_indices(len(labels), K, seed)
        if len(set(int(labels[i]) for i in idx)) == K:
            return seed
    raise AssertionError("no covering seed found")


def limb_dominant_samples(per_cluster: int = 20, shape_sigma: float = 2.0, seed: int = 0):
    """
    Three generators that differ only by hip and shoulder rotations; members carry large shape noise.
    In parameter space the shape noise dominates, in limb-weighted vertex space the pose does.
    """
    rng = np.random.default_rng(seed)
    samples, labels = [], []
    for g, angle in enumerate((-0.8, 0.0, 0.8)):
        aa = np.zeros((NUM_JOINTS, 3))
        aa[[1, 2], 0] = angle  # hips swing about x
        aa[[16, 17], 2] = angle  # shoulders swing about z
        pose = rotations.rotmat_to_rot6d(rotations.axis_angle_to_rotmat(aa))
        for _ in range(per_cluster):
            samples.append(BodyParams(pose=pose, shape=shape_sigma * rng.standard_normal(NUM_BETAS)))
            labels.append(g)
    return samples, np.array(labels)
