import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qmimo.scene import SceneConfig, concentric_layout

settings.register_profile(
    "qmimo", max_examples=200, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("qmimo")


@pytest.fixture
def desk_scene():
    tx, rx = concentric_layout(2, 3, 5000.0, 3000.0)
    return SceneConfig(tx, rx)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def desk_like_tim():
    from helpers import small_scene_tim
    from qmimo.quantizer import QuantizerSpec, peak_gamma, quantize_complex

    x = small_scene_tim()
    spec = QuantizerSpec.from_bits(peak_gamma(x), 6)
    return quantize_complex(x, spec), spec.delta


def pytest_collection_modifyitems(items):
    # hypothesis-driven tests form the invariant suite that acceptance criterion 8 reruns
    for item in items:
        if getattr(getattr(item, "obj", None), "is_hypothesis_test", False):
            item.add_marker(pytest.mark.property)
