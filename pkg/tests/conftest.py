from __future__ import annotations

import numpy as np
import pytest

from bufbench import codegen, memnet


@pytest.fixture(scope="session")
def corpus_1000(tmp_path_factory):
    """A 1,000-file labeled dataset shared across test modules."""
    out = tmp_path_factory.mktemp("corpus1000")
    cfg = codegen.GenConfig(seed=20260808, file_count=1000)
    manifest = codegen.generate_dataset(cfg, out)
    return cfg, manifest, out


def finite_difference_check(params: memnet.MemNetParams, loss_fn,
                            grads: dict, step: float = 1e-5,
                            floor: float = 1e-6) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients,
    per learnable tensor. ``loss_fn(params)`` must be deterministic."""
    errors = {}
    for name, arr in params.learnables():
        analytic = grads[name]
        numeric = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            orig = arr[ix]
            arr[ix] = orig + step
            up = loss_fn(params)
            arr[ix] = orig - step
            down = loss_fn(params)
            arr[ix] = orig
            numeric[ix] = (up - down) / (2.0 * step)
            it.iternext()
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        errors[name] = float((np.abs(analytic - numeric) / denom).max())
    return errors


def random_small_memnet(rng: np.random.Generator):
    """A random tiny network instance for gradient checking: returns
    (params, grids, rows, labels, dropout_p, mask_seed)."""
    v = int(rng.integers(6, 17))
    n = int(rng.integers(2, 5))
    j = int(rng.integers(2, 6))
    d = int(rng.integers(2, 9))
    h = int(rng.integers(1, 4))
    c = 4
    b = int(rng.integers(2, 5))
    hyper = memnet.HyperParams(dim=d, hops=h, classes=c, batch_size=c, seed=0)
    params = memnet.init_params(v, hyper, np.random.default_rng(rng.integers(1 << 30)))
    grids = rng.integers(1, v, size=(b, n, j)).astype(np.uint16)
    true_rows = rng.integers(1, n + 1, size=b)
    for bi in range(b):
        grids[bi, true_rows[bi]:, :] = 0
    rows = np.array([int(rng.integers(0, t)) for t in true_rows])
    labels = rng.integers(0, c, size=b)
    dropout_p = float(rng.choice([0.0, 0.3]))
    mask_seed = int(rng.integers(1 << 30))
    return params, grids, rows, labels, dropout_p, mask_seed


def memnet_loss_fn(grids, rows, labels, dropout_p, mask_seed):
    def loss_fn(params):
        probs, _ = memnet.forward(params, grids, rows, dropout_p, train=True,
                                  rng=np.random.default_rng(mask_seed))
        return memnet.cross_entropy(probs, labels)[0]
    return loss_fn
