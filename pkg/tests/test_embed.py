import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cellpheno.embed import (TsneConfig, concat_member_embeddings, conditional_affinities, effective_perplexity,
                             kl_divergence, pairwise_affinities, read_embeddings_csv, silhouette, tsne, tsne_svg,
                             write_embeddings_csv, write_tsne_csv)
from cellpheno.jsonio import read_csv


def two_clusters(seed=0, n=50, dim=10, sigma=0.1, gap=10.0):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, sigma, (n, dim))
    b = rng.normal(0.0, sigma, (n, dim))
    b[:, 0] += gap
    return np.vstack([a, b]), np.repeat([0, 1], n)


def test_concat_embeddings():
    members = [np.full((4, 128), k, float) for k in range(3)]
    out = concat_member_embeddings(members)
    assert out.shape == (4, 384)
    assert np.array_equal(out[2], np.concatenate([m[2] for m in members]))
    assert np.array_equal(concat_member_embeddings(members[:1]), members[0])
    with pytest.raises(ValueError):
        concat_member_embeddings([np.zeros((3, 2)), np.zeros((4, 2))])


@given(st.integers(0, 10_000), st.integers(8, 30), st.floats(2.0, 6.0))
def test_affinity_invariants(seed, n, perplexity):
    x = np.random.default_rng(seed).normal(size=(n, 4))
    p_cond, h = conditional_affinities(x, perplexity)
    assert np.allclose(2.0 ** h, perplexity, atol=1e-3)
    assert np.allclose(p_cond.sum(axis=1), 1.0)
    p = pairwise_affinities(x, perplexity)
    assert np.allclose(p, p.T)
    assert np.all(p >= 0) and np.all(np.diag(p) == 0)
    assert p.sum() == pytest.approx(1.0, abs=1e-9)


def test_equidistant_points_equal_affinities():
    x = np.eye(3)  # pairwise squared distances exactly 2
    p = pairwise_affinities(x, 1.5)
    off = p[~np.eye(3, dtype=bool)]
    assert np.allclose(off, off[0])


def test_duplicate_points_do_not_break_calibration():
    x = np.zeros((10, 3))
    x[5:] = 1.0
    p = pairwise_affinities(x, 3.0)
    assert np.all(np.isfinite(p))
    assert p.sum() == pytest.approx(1.0)


def test_perplexity_auto_clamp(caplog):
    assert effective_perplexity(10, 30.0) == pytest.approx(3.0)
    assert effective_perplexity(1000, 30.0) == 30.0


def test_tsne_separates_clusters_and_reduces_kl():
    x, y = two_clusters()
    res = tsne(x, TsneConfig(seed=1))
    assert res.kl < res.initial_kl
    assert silhouette(res.embedding, y) >= 0.5
    again = tsne(x, TsneConfig(seed=1))
    assert np.array_equal(res.embedding, again.embedding)


def test_tsne_kl_drops_on_random_data():
    x = np.random.default_rng(4).normal(size=(40, 6))
    res = tsne(x, TsneConfig(iterations=400, seed=2))
    assert res.kl < res.initial_kl and res.kl >= 0


def test_tsne_input_checks():
    with pytest.raises(ValueError):
        tsne(np.zeros((4, 2)))
    bad = np.zeros((6, 2))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        tsne(bad)


def test_kl_non_negative():
    rng = np.random.default_rng(0)
    p, q = rng.dirichlet(np.ones(20)), rng.dirichlet(np.ones(20))
    assert kl_divergence(p, q) >= 0
    assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-15)


def test_silhouette_examples():
    x, y = two_clusters(sigma=0.01)
    assert silhouette(x, y) > 0.9
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(400, 2))
    assert abs(silhouette(pts, rng.integers(0, 2, 400))) < 0.05
    with pytest.raises(ValueError):
        silhouette(pts, np.zeros(400))


@given(st.integers(0, 10_000), st.integers(2, 4))
def test_silhouette_matches_sklearn(seed, k):
    from sklearn.metrics import silhouette_score
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(30, 2))
    labels = np.arange(30) % k
    rng.shuffle(labels)
    ours = silhouette(pts, labels)
    assert -1.0 <= ours <= 1.0
    assert ours == pytest.approx(silhouette_score(pts, labels), abs=1e-12)


def test_csv_and_svg_outputs(tmp_path):
    emb = np.random.default_rng(0).normal(size=(5, 3))
    ids = [f"p{i}" for i in range(5)]
    labels = ["CYT", "FIB", "HOF", "SYN", "VAS"]
    write_embeddings_csv(tmp_path / "e.csv", ids, emb, labels)
    r_ids, r_emb, r_lab = read_embeddings_csv(tmp_path / "e.csv")
    assert r_ids == ids and r_lab == labels and np.array_equal(r_emb, emb)
    write_embeddings_csv(tmp_path / "n.csv", ids, emb)
    assert read_embeddings_csv(tmp_path / "n.csv")[2] is None
    write_tsne_csv(tmp_path / "t.csv", ids, emb[:, :2], labels)
    header, rows = read_csv(tmp_path / "t.csv")
    assert header == ["id", "x", "y", "label"] and len(rows) == 5
    svg = tsne_svg(emb[:, :2], labels, labels)
    assert svg.startswith("<svg") and svg.count("<circle") == 10
