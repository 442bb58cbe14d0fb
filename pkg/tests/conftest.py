import numpy as np
import pytest

from clada.modules.corpus.records import make_synthetic_corpus
from clada.modules.model.weights import ActivationFn, LayerWeights, ModelDims, ModelWeights, gen_random_model


@pytest.fixture(scope="session")
def tiny_dims() -> ModelDims:
    return ModelDims(n_layers=2, d_model=16, d_h=32, n_heads=2, vocab_size=258, max_ctx=128)


@pytest.fixture(scope="session")
def tiny_model(tiny_dims):
    return gen_random_model(7, tiny_dims)


@pytest.fixture(scope="session")
def relu_model(tiny_dims):
    return gen_random_model(11, tiny_dims, "relu")


@pytest.fixture(scope="session")
def corpus():
    return make_synthetic_corpus(seed=3, count=24, length=64)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def prompt(corpus) -> np.ndarray:
    return np.asarray(corpus[0].tokens[:16], dtype=np.int64)


@pytest.fixture(scope="session")
def hand_model() -> ModelWeights:
    """One relu layer with d_model = d_h = 2 and attention zeroed out.

    Token t embeds to e_t, so each position only sees its own token:
    gates = (2 s^2, 0) for token 0 and (0, 3 s^2) for token 1 with s = 1/sqrt(0.5 + eps).
    """
    eye = np.eye(2, dtype=np.float32)
    zeros = np.zeros((2, 2), dtype=np.float32)
    layer = LayerWeights(
        attn_norm=np.ones(2),
        wq=zeros,
        wk=zeros,
        wv=zeros,
        wo=zeros,
        mlp_norm=np.ones(2),
        w_in=eye,
        v_in=np.diag([2.0, 3.0]),
        w_out=np.diag([0.5, 1.0]),
    )
    return ModelWeights(
        dims=ModelDims(n_layers=1, d_model=2, d_h=2, n_heads=1, vocab_size=2, max_ctx=8),
        token_embedding=eye,
        layers=(layer,),
        final_norm=np.ones(2),
        lm_head=eye,
        activation_fn=ActivationFn.RELU,
    )
