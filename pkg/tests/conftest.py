import numpy as np
import pytest
from PIL import Image

from legrad import fixtures, model


@pytest.fixture(scope="session")
def tiny_cls():
    return fixtures.make_tiny_vit(layers=3, heads=2, width=16, seed=5,
                                  image_size=16)


@pytest.fixture(scope="session")
def tiny_pooler():
    return fixtures.make_tiny_vit(layers=2, heads=2, width=16, seed=6,
                                  image_size=16, pooling="attn_pooler",
                                  pooler_extras=True)


@pytest.fixture(scope="session")
def tiny_text():
    return fixtures.make_tiny_vit(layers=2, heads=2, width=16, seed=8,
                                  image_size=16, classifier_kind="text_embeddings",
                                  with_proj=True, embed_dim=12)


@pytest.fixture()
def sample_image(tmp_path):
    rng = fixtures.stream(42, "test.image")
    arr = rng.uniform(0, 255, (16, 16, 3)).astype(np.uint8)
    path = tmp_path / "img.png"
    Image.fromarray(arr).save(path)
    return str(path)


@pytest.fixture()
def saved_model(tmp_path, tiny_cls):
    path = tmp_path / "tiny.lgtc"
    model.save_bundle(str(path), tiny_cls)
    return str(path)
