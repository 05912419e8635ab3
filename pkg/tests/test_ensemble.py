import datetime as dt
import math

import numpy as np
import pytest

from ctrstack import ensemble
from ctrstack.ensemble import (STACK_CONTENT, STACK_HISTORICAL, STACK_IMPRESSIONS, PartitionConfig,
                               build_ensemble_row, fold_of, logit, partition, predict_ensemble,
                               row_folds, stack_batch, stack_vector, train_stacker)
from ctrstack.errors import DataError
from ctrstack.features import ListingRecord
from ctrstack.learner import FtrlHyperparams, FtrlModel, sigmoid
from ctrstack.metrics import auc
from ctrstack.variants import VariantSpec, train_variant


def rec(imps):
    return ListingRecord("L", "q", "t", [], 1.0, imps, 0, 0, dt.date(2017, 6, 1))


# --- partition --------------------------------------------------------------

def test_partition_boundary():
    parts = partition([rec(30), rec(29), rec(31), rec(0)], PartitionConfig(30))
    assert [r.impressions for r in parts["warm"]] == [30, 31]
    assert [r.impressions for r in parts["cold"]] == [29, 0]


def test_partition_k_one():
    parts = partition([rec(0), rec(1), rec(5)], PartitionConfig(1))
    assert [r.impressions for r in parts["cold"]] == [0]
    assert len(parts["warm"]) == 2


@pytest.mark.parametrize("k", [1, 2, 7, 30, 1000])
def test_partition_exhaustive_and_disjoint(k, rng):
    records = [rec(int(i)) for i in rng.integers(0, 200, size=300)]
    parts = partition(records, PartitionConfig(k))
    assert len(parts["cold"]) + len(parts["warm"]) == len(records)
    assert not {id(r) for r in parts["cold"]} & {id(r) for r in parts["warm"]}


def test_partition_config_validation():
    with pytest.raises(ValueError):
        PartitionConfig(0)


# --- stacker inputs -----------------------------------------------------------

def test_stack_vector_examples():
    d = stack_vector(0.5, 0.5, 0).to_dict()
    assert d.get(STACK_HISTORICAL, 0.0) == 0.0 and d.get(STACK_CONTENT, 0.0) == 0.0
    assert d.get(STACK_IMPRESSIONS, 0.0) == 0.0
    d = stack_vector(0.75, 0.5, 30).to_dict()
    assert abs(d[STACK_HISTORICAL] - math.log(3)) < 1e-12
    assert d[STACK_IMPRESSIONS] == 3


def test_logit_inverts_sigmoid():
    a = np.linspace(-20, 20, 81)
    assert np.allclose(logit(sigmoid(a)), a, atol=1e-9)


def test_build_ensemble_row_matches_batch(small_ensemble, small_training):
    ts, valid = small_training
    b = small_ensemble
    log = valid.take(np.arange(0, len(valid), 61))
    want = b.score(log)
    for r in range(len(log)):
        x, y = build_ensemble_row(log.record(r), b.models["historical"], b.models["content"],
                                  b.priors, b.spec.content)
        assert y == log.labels[r]
        assert b.models["stacker"].predict(x) == pytest.approx(want[r], rel=1e-12)


def test_build_ensemble_row_dimension_mismatch(small_ensemble, small_training):
    b = small_ensemble
    r = small_training[1].record(0)
    with pytest.raises(ValueError):
        build_ensemble_row(r, FtrlModel(8), b.models["content"], b.priors, b.spec.content)


# --- stacker behaviour ----------------------------------------------------------

def _stacker_data(rng, n=50_000, informative="historical"):
    u = rng.normal(-3, 1.5, size=n)
    y = (rng.random(n) < sigmoid(u)).astype(np.float64)
    good = sigmoid(u)
    noise = sigmoid(rng.normal(-3, 1.5, size=n))
    imps = rng.integers(0, 200, size=n)
    if informative == "historical":
        return good, noise, imps, y
    return noise, good, imps, y


@pytest.mark.parametrize("which", ["historical", "content"])
def test_stacker_weights_follow_the_informative_model(which, rng):
    hs, cs, imps, y = _stacker_data(rng, informative=which)
    w = train_stacker(hs, cs, imps, y).weights()
    strong, weak = (STACK_HISTORICAL, STACK_CONTENT) if which == "historical" else (STACK_CONTENT,
                                                                                   STACK_HISTORICAL)
    assert w[strong] > 0.5
    assert abs(w[weak]) < 0.1 * w[strong]


def test_stacker_dominance_on_regional_signal():
    rng = np.random.default_rng(7)
    n = 60_000
    u = rng.normal(-3, 1.2, size=n)
    y = (rng.random(n) < sigmoid(u)).astype(np.float64)
    imps = np.where(rng.random(n) < 0.4, rng.integers(30, 400, size=n), rng.integers(0, 30, size=n))
    warm = imps >= 30
    # historical: sharp on warm, the uninformative prior mean on cold
    hs = np.where(warm, sigmoid(u + rng.normal(0, 0.3, size=n)), 0.05)
    cs = sigmoid(u + rng.normal(0, 1.0, size=n))
    half = n // 2
    stacker = train_stacker(hs[:half], cs[:half], imps[:half], y[:half],
                            hyper=FtrlHyperparams(epochs=2, shuffle_seed=1))
    ens = stacker.predict_batch(stack_batch(hs[half:], cs[half:], imps[half:]))
    yt, wt = y[half:], warm[half:]
    res = {}
    for name, m in {"mixed": np.ones(n - half, bool), "cold": ~wt, "warm": wt}.items():
        res[name] = {k: auc(s[m], yt[m]) for k, s in
                     {"ens": ens, "hist": hs[half:], "cont": cs[half:]}.items()}
    assert res["mixed"]["ens"] >= max(res["mixed"]["hist"], res["mixed"]["cont"]) - 0.005
    assert (res["cold"]["ens"] > max(res["cold"]["hist"], res["cold"]["cont"])
            or res["warm"]["ens"] > max(res["warm"]["hist"], res["warm"]["cont"]))


# --- predict_ensemble ---------------------------------------------------------------

def _with_stacker(bundle, z):
    models = dict(bundle.models)
    s = FtrlModel(ensemble.STACK_DIM, FtrlHyperparams(lr_alpha=1.0, lr_beta=1.0))
    s.z[:len(z)] = z
    models["stacker"] = s
    return models


def test_zero_stacker_gives_half(small_ensemble, small_training):
    b = small_ensemble
    models = _with_stacker(b, [])
    p = predict_ensemble(models, small_training[1], b.priors, b.spec.content)
    assert np.all(p == 0.5)


@pytest.mark.parametrize("role,slot", [("historical", STACK_HISTORICAL), ("content", STACK_CONTENT)])
def test_identity_stacker_reproduces_base(small_ensemble, small_training, role, slot):
    b = small_ensemble
    z = np.zeros(4)
    z[slot] = -1.0  # weight 1 with lr_alpha = lr_beta = 1 and n = 0
    models = _with_stacker(b, z)
    valid = small_training[1]
    p = predict_ensemble(models, valid, b.priors, b.spec.content)
    from ctrstack import batches
    x = (batches.historical_rows(valid, b.priors, "logit") if role == "historical"
         else batches.content_rows(valid, b.spec.content))
    base = models[role].predict_batch(x)
    assert np.max(np.abs(p - base)) < 1e-12


def test_predict_ensemble_deterministic(small_ensemble, small_training):
    b = small_ensemble
    valid = small_training[1]
    a = b.score(valid)
    assert np.array_equal(a, b.score(valid))
    assert np.all((a > 0) & (a < 1))


# --- training ------------------------------------------------------------------

def test_empty_partition_rejected(small_training):
    ts, _ = small_training
    spec = VariantSpec("ens", "ensemble")
    with pytest.raises(DataError, match="historical"):
        train_variant(spec, ts, PartitionConfig(10**9))


def test_in_sample_and_listing_folds_train(small_training):
    ts, valid = small_training
    from ctrstack.features import ContentConfig, HashConfig
    cfg = ContentConfig(hash=HashConfig(dimension_bits=12))
    for kw in (dict(stacking="in_sample"), dict(fold_by="listing"), dict(n_folds=3)):
        b = train_variant(VariantSpec("e", "ensemble", content=cfg, **kw), ts, PartitionConfig())
        assert auc(b.score(valid), valid.labels) > 0.5


def test_training_is_thread_invariant(small_training):
    ts, _ = small_training
    from ctrstack.features import ContentConfig, HashConfig
    spec = VariantSpec("e", "ensemble", content=ContentConfig(hash=HashConfig(dimension_bits=12)))
    a = train_variant(spec, ts, PartitionConfig(), threads=1)
    b = train_variant(spec, ts, PartitionConfig(), threads=4)
    assert a.dumps() == b.dumps()


def test_folds_are_balanced_and_salted():
    ids = np.arange(100_000)
    f = row_folds(ids, 2, 0)
    assert abs(f.mean() - 0.5) < 0.01
    assert not np.array_equal(f, row_folds(ids, 2, 1))
    assert set(np.unique(row_folds(ids, 5, 3))) == set(range(5))
    lf = fold_of([f"L{i}" for i in range(2000)], 3, 0)
    assert set(np.unique(lf)) == {0, 1, 2}
