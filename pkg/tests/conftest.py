import numpy as np
import pytest

from rgi.geometry import _rectangle, room_from_footprint
from rgi.ism import RirSample, SimConfig


@pytest.fixture
def box_room():
    """6 x 4 x 3 shoebox centred on the device, perfectly reflecting walls."""
    return room_from_footprint(_rectangle(6.0, 4.0), 3.0, "shoebox")


@pytest.fixture
def fast_sim():
    return SimConfig(max_order=2)


def make_sample(rng, shape_id=0, num_walls=6, seed=0):
    A = np.zeros((8, 4), dtype=np.float32)
    normals = rng.normal(size=(num_walls, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    A[:num_walls, :3] = normals
    A[:num_walls, 3] = rng.uniform(1.0, 5.0, size=num_walls)
    p = np.zeros(8, dtype=np.float32)
    p[:num_walls] = 1.0
    rir = rng.normal(size=(32, 1024)).astype(np.float32)
    return RirSample(shape_id=shape_id, num_walls=num_walls, seed=seed, A=A, p=p, rir=rir)


@pytest.fixture
def synthetic_samples():
    rng = np.random.default_rng(123)
    walls = {0: 6, 1: 7, 2: 8, 3: 8}
    return [make_sample(rng, shape_id=i % 4, num_walls=walls[i % 4], seed=1000 + i) for i in range(10)]
