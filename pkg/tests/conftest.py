import numpy as np
import pytest

from hesd import autodiff as ad
from hesd.data import DatasetConfig, make_dataset
from hesd.models import Batch, ModelSpec, build_model

TOY_SPECS = {
    "mlp-tanh": ModelSpec("mlp", (4, 8, 3)),
    "mlp-relu-2h": ModelSpec("mlp", (5, 10, 10, 3), activation="relu"),
    "convnet": ModelSpec("convnet", (8, 6, 3), kernel_size=3, channels=3),
    "wide-dense-bn": ModelSpec("wide-dense", (4, 5, 3), width=16, use_batchnorm=True),
}


def quadratic(A):
    """``w -> 0.5 w^T A w`` as an autodiff function of a flat vector."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]

    def f(w):
        col = w.reshape(n, 1)
        return (col.T @ (ad.Tensor(A) @ col)).sum() * 0.5

    return f


def random_batch(spec: ModelSpec, n: int, seed: int) -> Batch:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, spec.input_dim))
    y = np.arange(n) % spec.n_classes
    return Batch(x, rng.permutation(y), spec.n_classes)


@pytest.fixture(params=sorted(TOY_SPECS))
def toy(request):
    spec = TOY_SPECS[request.param]
    model, params = build_model(spec, seed=0)
    return model, params, random_batch(spec, 16, seed=1)


@pytest.fixture
def mlp_setup():
    spec = ModelSpec("mlp", (4, 8, 3))
    model, params = build_model(spec, seed=0)
    return model, params, random_batch(spec, 8, seed=0)


@pytest.fixture(scope="session")
def blobs():
    return make_dataset(DatasetConfig(n_samples=120, input_dim=4, n_classes=3,
                                      separation=4.0, noise=0.7, seed=0))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
