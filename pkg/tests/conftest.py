import numpy as np
import pytest
from hypothesis import settings

from maskprivacy.synthetic import generate_dataset, generate_face

# CPU-bound CI box: no per-example deadlines.
settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def face_array():
    return generate_face(30, "female", "asian", size=120, rng=np.random.default_rng(11))


@pytest.fixture(scope="session")
def tiny_faces_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("faces")
    generate_dataset(d, count=14, seed=5, size=100)
    return d
