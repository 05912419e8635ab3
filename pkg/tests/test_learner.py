import math

import numpy as np
import pytest

from ctrstack import kernels
from ctrstack.learner import (EPS, FtrlHyperparams, FtrlModel, log_loss_gradient, sigmoid,
                              train)
from ctrstack.metrics import auc
from ctrstack.sparse import FeatureBatch, SparseVector

UNIT = FtrlHyperparams(lr_alpha=1.0, lr_beta=1.0)


def one(i, v=1.0, dim=4):
    return SparseVector.from_entries([i], [v], dim)


def logistic_data(rng, n, dim=20, scale=2.0, w_true=None):
    if w_true is None:
        w_true = scale * rng.normal(size=dim)
    x = rng.normal(size=(n, dim))
    y = (rng.random(n) < sigmoid(x @ w_true)).astype(np.float64)
    idx = np.tile(np.arange(dim), n)
    batch = FeatureBatch(np.arange(n + 1) * dim, idx, x.ravel(), np.arange(n), dim)
    return batch, y, w_true, x


def sparse_data(rng, n=4000, dim=2000, k=8):
    w_true = rng.normal(size=dim) * (rng.random(dim) < 0.05) * 3
    vecs, ys = [], []
    for _ in range(n):
        idx = rng.choice(dim, size=k, replace=False)
        v = SparseVector.from_entries(idx, np.ones(k), dim)
        vecs.append(v)
        ys.append(float(rng.random() < sigmoid(w_true[idx].sum() - 1)))
    return FeatureBatch.from_vectors(vecs, dim), np.array(ys)


# --- closed form and prediction -------------------------------------------

def test_weight_at_origin():
    assert FtrlModel(4, UNIT).weight(0) == 0.0


def test_weight_dead_zone():
    m = FtrlModel(4, FtrlHyperparams(lambda1=1.0))
    m.z[1] = 0.5
    assert m.weight(1) == 0.0


def test_weight_hand_example():
    m = FtrlModel(4, UNIT)
    m.z[0], m.n[0] = -0.5, 0.25
    assert abs(m.weight(0) - 1 / 3) < 1e-12
    assert abs(m.weights()[0] - 1 / 3) < 1e-12


def test_weight_index_checked():
    with pytest.raises(IndexError):
        FtrlModel(4).weight(4)


def test_empty_model_predicts_half():
    assert FtrlModel(4).predict(one(2)) == 0.5


@pytest.mark.parametrize("a,expected", [(math.log(3), 0.75), (-math.log(3), 0.25)])
def test_predict_sigmoid_values(a, expected):
    m = FtrlModel(4, UNIT)
    # pick z so that w_0 = a with n = 0: w = -z / (beta/alpha)
    m.z[0] = -a
    assert abs(m.predict(one(0)) - expected) < 1e-15


def test_predict_clamped():
    m = FtrlModel(4, UNIT)
    m.z[0] = -1e6
    assert m.predict(one(0)) == 1 - EPS
    m.z[0] = 1e6
    assert m.predict(one(0)) == EPS


def test_predict_dimension_mismatch():
    with pytest.raises(ValueError):
        FtrlModel(4).predict(one(0, dim=8))


# --- single steps -------------------------------------------------------

def test_train_step_hand_example():
    m = FtrlModel(4, UNIT).train_step(one(0), 1)
    assert m.n[0] == 0.25 and m.z[0] == -0.5
    assert abs(m.weight(0) - 1 / 3) < 1e-12


def test_train_step_negative_label():
    m = FtrlModel(4, UNIT).train_step(one(0), 0)
    assert abs(m.weight(0) + 1 / 3) < 1e-12


def test_train_step_general_formula():
    m = FtrlModel(4, FtrlHyperparams(lr_alpha=0.3, lr_beta=0.7, lambda1=0.01, lambda2=0.2))
    m.z[:] = [0.4, -0.2, 0.05, 0.0]
    m.n[:] = [1.0, 0.5, 2.0, 0.0]
    x = SparseVector.from_entries([0, 1, 2], [1.5, -2.0, 0.5], 4)
    w0 = np.array([m.weight(i) for i in range(4)])
    p = 1 / (1 + math.exp(-float(w0[x.indices] @ x.values)))
    z, n = m.z.copy(), m.n.copy()
    m.train_step(x, 1, weight=2.5)
    for i, xi in zip(x.indices, x.values):
        g = 2.5 * (p - 1) * xi
        sigma = (math.sqrt(n[i] + g * g) - math.sqrt(n[i])) / 0.3
        assert m.z[i] == pytest.approx(z[i] + g - sigma * w0[i], rel=1e-14, abs=1e-15)
        assert m.n[i] == pytest.approx(n[i] + g * g, rel=1e-14)
    assert m.z[3] == 0 and m.n[3] == 0


def test_empty_vector_leaves_model_unchanged():
    m = FtrlModel(4, UNIT).train_step(one(1), 1)
    z, n = m.z.copy(), m.n.copy()
    m.train_step(SparseVector.empty(4), 1)
    assert np.array_equal(m.z, z) and np.array_equal(m.n, n)


def test_train_step_rejects_bad_weight():
    with pytest.raises(ValueError):
        FtrlModel(4).train_step(one(0), 1, weight=0.0)


def test_non_finite_update_aborts():
    with pytest.raises((FloatingPointError, ValueError)):
        FtrlModel(4, UNIT).train_step(one(0, 1e300), 1, weight=1e300)


def test_empty_stream():
    m, loss = train(FtrlModel(4), [])
    assert math.isnan(loss) and not m.z.any()


def test_stream_reports_row_errors():
    with pytest.raises(ValueError, match="row 1"):
        train(FtrlModel(4), [(one(0), 1, 1.0), (one(0, dim=8), 1, 1.0)])


def test_stream_matches_steps():
    rng = np.random.default_rng(3)
    rows = [(SparseVector.from_entries(rng.choice(16, 3, replace=False), rng.normal(size=3), 16),
             int(rng.integers(0, 2)), float(rng.uniform(0.5, 2))) for _ in range(50)]
    a, _ = train(FtrlModel(16, UNIT), rows)
    b = FtrlModel(16, UNIT)
    for x, y, w in rows:
        b.train_step(x, y, w)
    assert np.array_equal(a.z, b.z) and np.array_equal(a.n, b.n)


def test_n_never_decreases(rng):
    batch, y = sparse_data(rng, n=300, dim=200)
    m = FtrlModel(200)
    prev = m.n.copy()
    for r in range(len(batch)):
        m.train_step(batch.row(r), int(y[r]))
        assert np.all(m.n >= prev)
        prev = m.n.copy()


# --- gradient and convergence ------------------------------------------------

def _loss(w, x, y):
    a = float(np.dot(w, x))
    return float(np.logaddexp(0.0, a) - y * a)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-5
    worst = 0.0
    for _ in range(1000):
        dim = int(rng.integers(1, 12))
        w, x = rng.normal(size=dim), rng.normal(size=dim)
        y = int(rng.integers(0, 2))
        g = log_loss_gradient(w, x, y)
        fd = np.array([(_loss(w + h * e, x, y) - _loss(w - h * e, x, y)) / (2 * h)
                       for e in np.eye(dim)])
        worst = max(worst, np.linalg.norm(fd - g) / np.linalg.norm(g))
    assert worst < 1e-5


def test_known_logistic_model_recovered():
    rng = np.random.default_rng(1)
    batch, y, w_true, _ = logistic_data(rng, 10_000)
    held, hy, _, hx = logistic_data(rng, 5_000, w_true=w_true)
    m = FtrlModel(20, FtrlHyperparams(epochs=3, shuffle_seed=9))
    m.fit(batch, y)
    got = auc(m.predict_batch(held), hy)
    oracle = auc(sigmoid(hx @ w_true), hy)
    assert got > 0.95
    assert got <= oracle + 0.01


# --- regularisation -------------------------------------------------------

def test_l1_sparsity_monotone():
    rng = np.random.default_rng(5)
    batch, y = sparse_data(rng)
    counts = []
    for l1 in (0.01, 0.1, 1.0, 10.0):
        m = FtrlModel(batch.dim, FtrlHyperparams(lambda1=l1))
        m.fit(batch, y)
        counts.append(m.nonzero_weights())
    assert all(b <= a for a, b in zip(counts, counts[1:])), counts
    assert counts[0] > counts[-1]


@pytest.mark.parametrize("l1", [0.01, 0.1, 1.0, 10.0])
def test_dead_zone_after_training(l1):
    rng = np.random.default_rng(6)
    batch, y = sparse_data(rng, n=1500)
    m = FtrlModel(batch.dim, FtrlHyperparams(lambda1=l1))
    m.fit(batch, y)
    w = m.weights()
    dead = np.abs(m.z) <= l1
    assert np.all(w[dead] == 0.0)
    assert np.all(w[~dead] != 0.0)


def test_l2_shrinks_weights(rng):
    batch, y = sparse_data(rng, n=1500)
    a = FtrlModel(batch.dim)
    b = FtrlModel(batch.dim, FtrlHyperparams(lambda2=5.0))
    a.fit(batch, y)
    b.fit(batch, y)
    assert np.abs(b.weights()).sum() < np.abs(a.weights()).sum()


# --- fit() behaviour --------------------------------------------------------

def test_fit_validates_inputs():
    batch = FeatureBatch.from_vectors([one(0), one(1)], 4)
    m = FtrlModel(4)
    with pytest.raises(ValueError):
        m.fit(batch, [0, 2])
    with pytest.raises(ValueError):
        m.fit(batch, [0, 1], [1.0, 0.0])
    with pytest.raises(ValueError):
        m.fit(batch, [0])


def test_fit_is_deterministic(rng):
    batch, y = sparse_data(rng, n=1000)
    hyper = FtrlHyperparams(epochs=3, shuffle_seed=42, lambda1=0.1)
    a, b = FtrlModel(batch.dim, hyper), FtrlModel(batch.dim, hyper)
    la, lb = a.fit(batch, y), b.fit(batch, y)
    assert la == lb
    assert np.array_equal(a.z, b.z) and np.array_equal(a.n, b.n)


def test_shuffle_seed_changes_model(rng):
    batch, y = sparse_data(rng, n=500)
    a = FtrlModel(batch.dim, FtrlHyperparams(epochs=2, shuffle_seed=1))
    b = FtrlModel(batch.dim, FtrlHyperparams(epochs=2, shuffle_seed=2))
    a.fit(batch, y)
    b.fit(batch, y)
    assert not np.array_equal(a.z, b.z)


def test_predictions_within_bounds(rng):
    batch, y = sparse_data(rng, n=800)
    m = FtrlModel(batch.dim, FtrlHyperparams(lr_alpha=5.0, epochs=3))
    m.fit(batch, y)
    p = m.predict_batch(batch)
    assert np.all((p >= EPS) & (p <= 1 - EPS))


def test_hyper_validation():
    for bad in [dict(lr_alpha=0), dict(lr_beta=-1), dict(lambda1=-0.1), dict(epochs=0)]:
        with pytest.raises(ValueError):
            FtrlHyperparams(**bad)


# --- serialization --------------------------------------------------------

def test_round_trip_bit_identical(tmp_path, rng):
    batch, y = sparse_data(rng, n=10_000, dim=3000)
    m = FtrlModel(batch.dim, FtrlHyperparams(lambda1=0.05, lambda2=0.01))
    m.fit(batch, y)
    path = tmp_path / "model.json"
    m.save(path)
    r = FtrlModel.load(path)
    assert r.hyper == m.hyper
    assert np.array_equal(r.weights(), m.weights())
    assert np.array_equal(r.predict_batch(batch), m.predict_batch(batch))


def test_load_rejects_foreign_records():
    d = FtrlModel(4).to_dict()
    with pytest.raises(ValueError):
        FtrlModel.from_dict({**d, "format": "other"})
    with pytest.raises(ValueError):
        FtrlModel.from_dict({**d, "version": 99})


# --- backends -------------------------------------------------------------

@pytest.mark.skipif(not kernels._accel.HAVE_NUMBA, reason="numba not installed")
def test_numba_and_numpy_kernels_agree(small_log):
    from ctrstack import batches
    from ctrstack.features import ContentConfig, HashConfig
    log = small_log.take(np.arange(min(len(small_log), 5000)))
    batch = batches.content_rows(log, ContentConfig(hash=HashConfig(dimension_bits=14)))
    y = log.labels.astype(np.float64)
    w = np.ones(len(batch))
    order = np.arange(len(batch), dtype=np.int64)
    h = FtrlHyperparams(lambda1=0.01)
    out = {}
    for flag in (True, False):
        z, n = np.zeros(batch.dim), np.zeros(batch.dim)
        loss, _, bad = kernels.fit_rows(z, n, batch.indptr, batch.indices, batch.values,
                                        batch.row_block, batch.dense, batch.row_dense,
                                        batch.dense_offset, y, w, order, h.lr_alpha, h.lr_beta,
                                        h.lambda1, h.lambda2, EPS, use_numba=flag)
        assert bad == -1
        wt = kernels.closed_form_weights(z, n, h.lr_alpha, h.lr_beta, h.lambda1, h.lambda2,
                                         use_numba=flag)
        p = kernels.predict_rows(wt, batch.indptr, batch.indices, batch.values, batch.row_block,
                                 batch.dense, batch.row_dense, batch.dense_offset, EPS,
                                 use_numba=flag)
        out[flag] = (loss, z, n, p)
    a, b = out[True], out[False]
    assert a[0] == pytest.approx(b[0], rel=1e-9)
    assert np.allclose(a[1], b[1], rtol=1e-9, atol=1e-12)
    assert np.allclose(a[2], b[2], rtol=1e-9, atol=1e-12)
    assert np.allclose(a[3], b[3], rtol=1e-9, atol=1e-12)
