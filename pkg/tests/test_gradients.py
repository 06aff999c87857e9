"""Finite-difference verification of every analytic gradient path."""

import numpy as np
import pytest

from drorec.dro import batch_objective
from drorec.model import SeqModel
from drorec.nn import Adam, check_gradients

DIM = 8
N_ITEMS = 6
MAX_LEN = 5
TOL = 1e-4


def _batch(seed=0, batch_size=3):
    rng = np.random.default_rng(seed)
    seqs = np.zeros((batch_size, MAX_LEN), dtype=np.int64)
    for i in range(batch_size):
        n = rng.integers(2, MAX_LEN + 1)
        seqs[i, MAX_LEN - n:] = rng.integers(1, N_ITEMS + 1, size=n)
    negs = rng.integers(1, N_ITEMS + 1, size=(batch_size, MAX_LEN - 1))
    q0 = rng.dirichlet(np.ones(N_ITEMS), size=(batch_size, MAX_LEN - 1))
    return seqs, negs, q0


@pytest.mark.parametrize("arch", ["recurrent", "attention"])
def test_bce_gradients(arch):
    model = SeqModel(N_ITEMS, DIM, MAX_LEN, arch, seed=1)
    batch = [([0, 0, 1, 2, 3], 4, 5), ([0, 2, 2, 1, 6], 3, 1)]
    err = check_gradients(lambda p: model.bce_loss(batch, p),
                          lambda p: model.bce_gradients(batch, p),
                          model.params, n_coords=80, seed=0)
    assert err < TOL


@pytest.mark.parametrize("arch", ["recurrent", "attention"])
def test_joint_dro_gradients(arch):
    model = SeqModel(N_ITEMS, DIM, MAX_LEN, arch, seed=2)
    seqs, negs, q0 = _batch(seed=3)

    def loss(p):
        return batch_objective(model, seqs, negs, method="dro", a=0.7,
                               q0_steps=q0, params=p,
                               want_grads=False)["loss_joint"]

    def grad(p):
        return batch_objective(model, seqs, negs, method="dro", a=0.7,
                               q0_steps=q0, params=p)["grads"]

    err = check_gradients(loss, grad, model.params, n_coords=120, seed=1)
    assert err < TOL


@pytest.mark.parametrize("method", ["ips", "ips_c", "relmf"])
def test_baseline_gradients(method):
    model = SeqModel(N_ITEMS, DIM, MAX_LEN, "recurrent", seed=4)
    seqs, negs, _ = _batch(seed=5)
    rng = np.random.default_rng(6)
    prop = rng.uniform(0.1, 0.9, size=(seqs.shape[0], MAX_LEN - 1))
    kwargs = dict(method=method, prop_steps=prop, clip=0.3)

    def loss(p):
        # the baselines reweight only the positive BCE gradient; the loss
        # they descend is the reweighted BCE, reconstructed here directly
        from drorec.baselines import relmf_loss
        from drorec.nn import log_sigmoid, sigmoid
        valid = (seqs[:, :-1] > 0) & (seqs[:, 1:] > 0)
        H, _ = model.forward_states(seqs, p)
        states = H[:, :-1, :][valid]
        pos = seqs[:, 1:][valid]
        neg = negs[valid]
        g = states @ p["W_main"] + p["b_main"]
        r_pos = np.sum(g * p["emb"][pos], axis=1)
        r_neg = np.sum(g * p["emb"][neg], axis=1)
        rho = prop[valid]
        if method == "ips":
            w = 1.0 / rho
            pos_term = -w * log_sigmoid(r_pos)
        elif method == "ips_c":
            w = np.minimum(1.0 / rho, 1.0 / 0.3)
            pos_term = -w * log_sigmoid(r_pos)
        else:
            pos_term = np.array([relmf_loss(sigmoid(np.array([r]))[0], rh, True)
                                 for r, rh in zip(r_pos, rho)])
        return float(np.sum(pos_term - log_sigmoid(-r_neg)) / valid.sum())

    def grad(p):
        return batch_objective(model, seqs, negs, params=p, **kwargs)["grads"]

    err = check_gradients(loss, grad, model.params, n_coords=60, seed=2)
    assert err < TOL


def test_loss_scaling_linearity():
    model = SeqModel(N_ITEMS, DIM, MAX_LEN, "attention", seed=7)
    batch = [([0, 0, 0, 1, 2], 3, 4)]
    grads = model.bce_gradients(batch)
    scaled = {k: 2.0 * v for k, v in grads.items()}
    batch2 = batch + batch  # summing the same term twice doubles the loss
    grads2 = model.bce_gradients(batch2)
    for k in grads:
        np.testing.assert_allclose(grads2[k], scaled[k], rtol=1e-12, atol=1e-15)


def test_adam_rejects_shape_mismatch():
    opt = Adam(["w"], lr=0.1)
    params = {"w": np.zeros((2, 2))}
    with pytest.raises(ValueError):
        opt.step(params, {"w": np.zeros(3)})


def test_pad_embedding_gets_no_gradient():
    model = SeqModel(N_ITEMS, DIM, MAX_LEN, "recurrent", seed=8)
    seqs, negs, q0 = _batch(seed=9)
    out = batch_objective(model, seqs, negs, method="dro", a=1.0, q0_steps=q0)
    assert np.all(out["grads"]["emb"][0] == 0.0)
