import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hazedecomp.scenes import make_scene

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scene():
    return make_scene(8, 8, seed=0)


@pytest.fixture(scope="session")
def scene():
    return make_scene(32, 96, seed=7, visibility_rel=0.6)


@pytest.fixture(scope="session")
def image_dirs(tmp_path_factory):
    """Two clear images with PNG16 depth maps and matching intrinsics."""
    from hazedecomp import io
    from hazedecomp.geometry import CameraIntrinsics, range_to_depth

    root = tmp_path_factory.mktemp("inputs")
    (root / "clear").mkdir()
    (root / "depth").mkdir()
    k = CameraIntrinsics(80.0, 80.0, 48.0, 16.0, 96, 32)
    k.save(root / "K.json")
    for i in range(2):
        s = make_scene(32, 96, seed=100 + i)
        io.write_png(root / "clear" / f"img{i}.png", s.clear)
        io.write_depth_png16(root / "depth" / f"img{i}.png", range_to_depth(s.range, k))
    return root
