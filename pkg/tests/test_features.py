import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctrstack import batches
from ctrstack.features import (BIAS_INDEX, CTR_INDEX, FAVORITE_INDEX, IMAGE_DIM, PURCHASE_INDEX,
                               RESERVED_DIM, ContentConfig, HashConfig, ListingRecord,
                               build_content_features, build_historical_features,
                               ensemble_impression_feature, hash_text, hash_token, price_bucket,
                               tokenize)
from ctrstack.smoothing import SmoothingPrior
from ctrstack.sparse import FeatureBatch, SparseVector


def record(**kw):
    base = dict(listing_id="L1", query="silver ring", title="Layering necklace", tags=["gold", "boho chic"],
                price=24.0, impressions=10, clicks=1, label=0, date=dt.date(2017, 6, 1))
    base.update(kw)
    return ListingRecord(**base)


# --- tokenize -------------------------------------------------------------

def test_tokenize_empty():
    assert tokenize("", []) == []


def test_tokenize_title_example():
    assert set(tokenize("layering necklace", [])) == {
        "title-uni:layering", "title-uni:necklace", "title-bi:layering necklace"}


def test_tokenize_counts_per_field():
    toks = tokenize("a b c", ["x"])
    assert len(toks) == 6
    assert sum(t.startswith("title-uni:") for t in toks) == 3
    assert sum(t.startswith("title-bi:") for t in toks) == 2
    assert toks[-1] == "tag-uni:x"


def test_tokenize_no_cross_field_bigrams():
    toks = tokenize("red", ["blue", "green tea"])
    assert "title-bi:red blue" not in toks
    assert "tag-bi:blue green" not in toks
    assert "tag-bi:green tea" in toks


def test_tokenize_namespaces_distinct():
    toks = tokenize("ring", ["ring"])
    assert "title-uni:ring" in toks and "tag-uni:ring" in toks


def test_tokenize_lowercases():
    assert tokenize("Boho RING", []) == ["title-uni:boho", "title-uni:ring", "title-bi:boho ring"]


# --- hashing ----------------------------------------------------------------

def test_hash_empty():
    v = hash_text([], HashConfig())
    assert len(v) == 0 and v.dim == 1 << 18


def test_hash_deterministic():
    cfg = HashConfig(dimension_bits=12, seed=5)
    toks = tokenize("layering necklace", ["gold"])
    assert hash_text(toks, cfg) == hash_text(list(toks), cfg)


def test_repeated_token_sums_to_two():
    cfg = HashConfig(dimension_bits=16)
    v = hash_text(["tag-uni:gold", "tag-uni:gold"], cfg)
    h = hash_token("tag-uni:gold", 0)
    sign = -1.0 if h >> 63 else 1.0
    assert v.to_dict() == {h & (cfg.dimension - 1): 2 * sign}


def test_unsigned_hash_all_positive():
    v = hash_text(tokenize("a b c d e f", ["x y"]), HashConfig(dimension_bits=10, use_sign_hash=False))
    assert np.all(v.values > 0)


def test_seed_changes_indices():
    toks = tokenize("layering necklace gold chain", [])
    a = hash_text(toks, HashConfig(seed=1))
    b = hash_text(toks, HashConfig(seed=2))
    assert not np.array_equal(a.indices, b.indices)


def test_hash_config_bounds():
    with pytest.raises(ValueError):
        HashConfig(dimension_bits=7)
    with pytest.raises(ValueError):
        HashConfig(dimension_bits=29)


words = st.lists(st.text(alphabet="abcdefg", min_size=1, max_size=4), max_size=8)


@settings(max_examples=200, deadline=None)
@given(words, words)
def test_hash_linearity(a, b):
    cfg = HashConfig(dimension_bits=8)
    ta = [f"title-uni:{w}" for w in a]
    tb = [f"tag-uni:{w}" for w in b]
    assert hash_text(ta + tb, cfg) == hash_text(ta, cfg) + hash_text(tb, cfg)


@settings(max_examples=100, deadline=None)
@given(words)
def test_hashed_vectors_are_valid(a):
    hash_text(tokenize(" ".join(a), a), HashConfig(dimension_bits=8)).validate()


def test_sign_hash_unbiased():
    cfg = HashConfig(dimension_bits=8)
    rng = np.random.default_rng(0)
    dots = []
    for k in range(10_000):
        n1, n2 = rng.integers(1, 6, size=2)
        a = hash_text([f"a{k}-{i}" for i in range(n1)], cfg)
        b = hash_text([f"b{k}-{i}" for i in range(n2)], cfg)
        dots.append(a.dot(b))
    dots = np.array(dots)
    se = dots.std(ddof=1) / math.sqrt(dots.size)
    assert abs(dots.mean()) < 3 * se


# --- content features -------------------------------------------------------

def test_price_bucket_edges():
    grid = (10.0, 20.0)
    assert [price_bucket(p, grid) for p in (0.0, 9.99, 10.0, 15.0, 20.0, 99.0)] == [0, 0, 1, 1, 2, 2]


def test_content_no_image_stays_in_text_range():
    cfg = ContentConfig(hash=HashConfig(dimension_bits=12))
    emb = build_content_features(record(), cfg)
    assert emb.image is None
    assert emb.combined.dim == cfg.hash.dimension + IMAGE_DIM
    assert emb.combined.indices.max() < cfg.hash.dimension
    assert emb.text.dim == cfg.hash.dimension


def test_content_zero_image_contributes_nothing():
    cfg = ContentConfig(hash=HashConfig(dimension_bits=12))
    a = build_content_features(record(image_embedding=np.zeros(IMAGE_DIM)), cfg)
    b = build_content_features(record(), cfg)
    assert np.array_equal(a.combined.indices, b.combined.indices)


def test_content_image_offset_and_values(rng):
    cfg = ContentConfig(hash=HashConfig(dimension_bits=10))
    img = rng.normal(size=IMAGE_DIM)
    img[::7] = 0.0
    emb = build_content_features(record(image_embedding=img), cfg)
    emb.combined.validate()
    d = cfg.hash.dimension
    in_image = emb.combined.indices >= d
    assert np.array_equal(emb.combined.indices[in_image] - d, np.flatnonzero(img))
    assert np.array_equal(emb.combined.values[in_image], img[img != 0])
    assert np.array_equal(emb.combined.indices[~in_image], emb.text.indices)


def test_content_includes_price_and_id_tokens():
    cfg = ContentConfig(hash=HashConfig(dimension_bits=16, use_sign_hash=False))
    with_id = build_content_features(record(), cfg).text
    no_id = build_content_features(record(), ContentConfig(hash=cfg.hash, include_listing_id=False)).text
    h = hash_token("id:L1", 0) & (cfg.hash.dimension - 1)
    assert with_id.to_dict().get(h, 0) >= 1
    assert len(with_id) == len(no_id) + 1 or with_id.to_dict()[h] > no_id.to_dict().get(h, 0)


def test_content_rejects_bad_images():
    with pytest.raises(ValueError):
        record(image_embedding=np.zeros(10))
    bad = np.zeros(IMAGE_DIM)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        record(image_embedding=bad)


def test_content_deterministic(rng):
    rec = record(image_embedding=rng.normal(size=IMAGE_DIM))
    cfg = ContentConfig(hash=HashConfig(dimension_bits=12))
    assert build_content_features(rec, cfg).combined == build_content_features(rec, cfg).combined


def test_content_accepts_hash_config():
    emb = build_content_features(record(), HashConfig(dimension_bits=9))
    assert emb.combined.dim == (1 << 9) + IMAGE_DIM


def test_content_batch_matches_per_record(small_log):
    cfg = ContentConfig(hash=HashConfig(dimension_bits=14))
    log = small_log.take(np.arange(0, len(small_log), 97))
    batch = batches.content_rows(log, cfg)
    for r in range(0, len(log), 5):
        assert batch.row(r) == build_content_features(log.record(r), cfg).combined


def test_content_batch_with_query(small_log):
    cfg = ContentConfig(hash=HashConfig(dimension_bits=14), include_query=True)
    log = small_log.take(np.arange(0, len(small_log), 331))
    batch = batches.content_rows(log, cfg)
    for r in range(len(log)):
        assert batch.row(r) == build_content_features(log.record(r), cfg).combined


# --- historical features ----------------------------------------------------

def test_historical_zero_counts_is_prior_mean():
    v = build_historical_features(record(impressions=0, clicks=0), {"clicks": SmoothingPrior(2, 98)})
    assert v.to_dict() == {BIAS_INDEX: 1.0, CTR_INDEX: pytest.approx(0.02, abs=1e-15)}


def test_historical_substitution():
    v = build_historical_features(record(impressions=90, clicks=10), {"clicks": SmoothingPrior(2, 38)})
    assert abs(v.to_dict()[CTR_INDEX] - 12 / 130) < 1e-12


def test_historical_only_clicks_structure():
    v = build_historical_features(record(), {"clicks": SmoothingPrior(1, 19)})
    assert v.indices.tolist() == [BIAS_INDEX, CTR_INDEX]


def test_historical_all_families():
    priors = {f: SmoothingPrior(1, 19, family=f) for f in ("clicks", "favorites", "purchases")}
    v = build_historical_features(record(favorites=2, purchases=1), priors)
    d = v.to_dict()
    assert set(d) == {BIAS_INDEX, CTR_INDEX, FAVORITE_INDEX, PURCHASE_INDEX}
    assert d[FAVORITE_INDEX] == pytest.approx(3 / 30, abs=1e-15)
    assert d[PURCHASE_INDEX] == pytest.approx(2 / 30, abs=1e-15)
    assert v.dim == RESERVED_DIM


def test_historical_logit_transform():
    v = build_historical_features(record(impressions=0, clicks=0), {"clicks": SmoothingPrior(1, 3)},
                                  transform="logit")
    assert v.to_dict()[CTR_INDEX] == pytest.approx(math.log(1 / 3), abs=1e-15)


def test_historical_requires_clicks_prior():
    with pytest.raises(KeyError):
        build_historical_features(record(), {"favorites": SmoothingPrior(1, 2, family="favorites")})


def test_historical_batch_matches_per_record(small_log):
    priors = batches.fit_priors(small_log, ("clicks", "favorites", "purchases"))
    log = small_log.take(np.arange(0, len(small_log), 53))
    for transform in ("rate", "logit"):
        batch = batches.historical_rows(log, priors, transform)
        for r in range(len(log)):
            assert batch.row(r) == build_historical_features(log.record(r), priors, transform)


# --- ensemble impression feature -------------------------------------------

@pytest.mark.parametrize("imps,expected", [(0, 0), (1, 0), (2, 1), (30, 3), (1000, 6)])
def test_impression_feature(imps, expected):
    assert ensemble_impression_feature(imps) == expected


def test_impression_feature_negative():
    with pytest.raises(ValueError):
        ensemble_impression_feature(-1)


# --- records and sparse containers ----------------------------------------

def test_record_validation():
    with pytest.raises(ValueError):
        record(clicks=11, impressions=10)
    with pytest.raises(ValueError):
        record(price=-1.0)
    with pytest.raises(ValueError):
        record(label=2)


def test_sparse_from_entries_sums_and_prunes():
    v = SparseVector.from_entries([5, 1, 5, 3, 3], [1.0, 2.0, -1.0, 0.5, 0.25], 8)
    assert v.to_dict() == {1: 2.0, 3: 0.75}
    v.validate()


def test_sparse_rejects_out_of_range():
    with pytest.raises(ValueError):
        SparseVector.from_entries([8], [1.0], 8)


def test_sparse_validate_catches_bad_vectors():
    with pytest.raises(ValueError):
        SparseVector(np.array([2, 1]), np.array([1.0, 1.0]), 4).validate()
    with pytest.raises(ValueError):
        SparseVector(np.array([1]), np.array([0.0]), 4).validate()
    with pytest.raises(ValueError):
        SparseVector(np.array([1]), np.array([np.inf]), 4).validate()


def test_feature_batch_take_and_row():
    vs = [SparseVector.from_entries([0, 2], [1.0, 2.0], 4), SparseVector.from_entries([3], [5.0], 4)]
    b = FeatureBatch.from_vectors(vs)
    t = b.take([1, 0, 1])
    assert [t.row(i) for i in range(3)] == [vs[1], vs[0], vs[1]]


def test_feature_batch_dense_block():
    dense = np.array([[0.0, 1.5], [2.0, 0.0]], dtype=np.float32)
    b = FeatureBatch(np.array([0, 1]), np.array([0]), np.array([1.0]), np.array([0, 0, 0]), 4,
                     dense, np.array([1, -1, 0]), 2)
    assert b.row(0).to_dict() == {0: 1.0, 2: 2.0}
    assert b.row(1).to_dict() == {0: 1.0}
    assert b.row(2).to_dict() == {0: 1.0, 3: 1.5}
    with pytest.raises(ValueError):
        FeatureBatch(np.array([0, 0]), np.zeros(0), np.zeros(0), np.array([0]), 3, dense, np.array([0]), 2)
