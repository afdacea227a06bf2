import os

# single-threaded BLAS keeps small-matrix results bit-reproducible
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest

from mdlas.dialects import DialectInventory, GraphemeVocab, system_mode
from mdlas.model import LasModel, ModelConfig


@pytest.fixture(scope="session")
def inventory():
    return DialectInventory.from_codes(["en-us", "en-gb", "en-ke"])


def tiny_config(
    inventory,
    system="S1",
    vector_kind=None,
    encoder=(8, 8),
    decoder=(8,),
    input_dim=6,
    graphemes="abc ",
    cat=None,
):
    mode = system_mode(system, vector_kind)
    vocab = GraphemeVocab.build(list(graphemes), inventory if mode.uses_tokens else None)
    return ModelConfig(
        encoder=list(encoder),
        decoder=list(decoder),
        attention_dim=6,
        embed_dim=5,
        input_dim=input_dim,
        vocab=vocab,
        inventory=inventory,
        conditioning=mode,
        cat=cat,
        system=system,
    ).validate()


def tiny_model(inventory, system="S1", precision="float64", seed=0, scale=1.0, **kw):
    cfg = tiny_config(inventory, system=system, **kw)
    model = LasModel.init(cfg, seed=seed, precision=precision)
    if scale != 1.0:
        for t in model.params.values():
            t.data *= scale
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
