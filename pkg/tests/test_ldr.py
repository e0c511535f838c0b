import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from candies.errors import InvalidParameterError
from candies.ldr import NOISE, LdrConfig, SuspicionBuffer, is_suspicious, nu_2snd, region_radius_sq
from candies.mixture import MixtureModel


def oracle_partition(samples, eps):
    """Offline epsilon-graph components; singletons are noise."""
    if len(samples) == 0:
        return []
    adj = cdist(samples, samples) <= eps
    _, comp = connected_components(adj, directed=False)
    sizes = np.bincount(comp)
    return [NOISE if sizes[c] == 1 else int(c) for c in comp]


def same_partition(a, b):
    # equal up to renaming of non-noise ids
    if len(a) != len(b):
        return False
    fwd, back = {}, {}
    for x, y in zip(a, b):
        if (x == NOISE) != (y == NOISE):
            return False
        if x == NOISE:
            continue
        if fwd.setdefault(x, y) != y or back.setdefault(y, x) != x:
            return False
    return True


def check_registry(buf):
    counts = {}
    for lab in buf.labels():
        if lab != NOISE:
            counts[lab] = counts.get(lab, 0) + 1
    assert counts == buf.registry


def test_config_validation():
    for kw in ({"alpha": 1.0}, {"epsilon": 0.0}, {"min_pts": 1}, {"buffer_capacity": 5}):
        with pytest.raises(InvalidParameterError):
            LdrConfig(**kw)


def test_suspicion_examples():
    m = MixtureModel.from_gaussians([[0.0, 0.0], [100.0, 0.0]], [np.eye(2), np.eye(2)])
    assert not is_suspicious(m, [0.0, 0.0], 0.9)[0]
    assert not is_suspicious(m, [100.5, 0.0], 0.9)[0]
    flag, rho = is_suspicious(m, [2.16, 0.0], 0.9)
    assert flag and math.sqrt(rho) == pytest.approx(2.15, abs=0.01)
    assert not is_suspicious(m, [2.14, 0.0], 0.9)[0]


def test_suspicion_boundary_ties_resolve_to_covered():
    m = MixtureModel.from_gaussians([[0.0]], [[[1.0]]])
    rho = region_radius_sq(1, 0.95)
    assert not is_suspicious(m, [math.sqrt(rho) * (1 - 1e-12)], 0.95)[0]


def test_insert_examples():
    buf = SuspicionBuffer(LdrConfig(epsilon=1.0, min_pts=3, buffer_capacity=10))
    r = buf.insert([0.0, 0.0])
    assert r.cluster == NOISE and r.detected is None
    r = buf.insert([0.8, 0.0])
    assert r.cluster != NOISE and buf.registry[r.cluster] == 2
    cid = r.cluster
    r = buf.insert([1.6, 0.0])  # chain: not within epsilon of the first point
    assert r.cluster == cid and r.detected == cid
    assert buf.labels() == [cid, cid, cid]


def test_chain_bridging_two_clusters_merges_them():
    buf = SuspicionBuffer(LdrConfig(epsilon=1.0, min_pts=10, buffer_capacity=20))
    for x in ([0, 0], [0.5, 0], [3, 0], [3.5, 0]):
        buf.insert(x)
    assert buf.n_clusters == 2
    buf.insert([1.4, 0])
    buf.insert([2.2, 0])
    assert buf.n_clusters == 1 and buf.n_noise == 0


def test_tenth_point_signals_detection():
    buf = SuspicionBuffer(LdrConfig(epsilon=2.0, min_pts=10))
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 0.5, (10, 3))
    results = [buf.insert(p) for p in pts]
    assert all(r.detected is None for r in results[:9])
    assert results[9].detected is not None
    assert buf.registry[results[9].detected] == 10


def test_eviction_removes_oldest_and_splits_cluster():
    buf = SuspicionBuffer(LdrConfig(epsilon=1.0, min_pts=9, buffer_capacity=10))
    # a bridge point inserted first joins two groups; evicting it splits them
    buf.insert([0.0, 0.0])
    for x in ([-0.9, 0], [-1.7, 0], [0.9, 0], [1.7, 0]):
        buf.insert(x)
    assert buf.n_clusters == 1
    for k in range(5):
        buf.insert([50.0 + 5 * k, 50.0])
    r = buf.insert([100.0, 100.0])
    assert r.evicted == pytest.approx([0.0, 0.0])
    assert len(buf) == 10
    assert buf.n_clusters == 2
    check_registry(buf)
    assert same_partition(buf.labels(), oracle_partition(buf.samples(), 1.0))


def test_eviction_turns_lonely_partner_into_noise():
    buf = SuspicionBuffer(LdrConfig(epsilon=1.0, min_pts=2, buffer_capacity=2))
    buf.insert([0.0, 0.0])
    buf.insert([0.5, 0.0])
    buf.insert([30.0, 0.0])
    assert buf.labels() == [NOISE, NOISE]
    assert buf.registry == {}


def test_extract_cluster():
    buf = SuspicionBuffer(LdrConfig(epsilon=1.0, min_pts=50, buffer_capacity=100))
    buf.insert([100.0, 100.0])
    a = [np.array([0.1 * i, 0.0]) for i in range(10)]
    b = [np.array([0.1 * i, 20.0]) for i in range(5)]
    for p, q in zip(a, b):
        buf.insert(p)
        buf.insert(q)
    for p in a[5:]:
        buf.insert(p)
    cid_a = buf.labels()[1]
    cid_b = buf.labels()[2]
    out = buf.extract_cluster(cid_a)
    assert out.shape == (10, 2)
    assert out == pytest.approx(np.array(a))
    assert len(buf) == 6 and buf.labels()[0] == NOISE
    assert buf.registry == {cid_b: 5}
    assert same_partition(buf.labels(), oracle_partition(buf.samples(), 1.0))
    with pytest.raises(KeyError):
        buf.extract_cluster(cid_a)


def test_nu_examples():
    buf = SuspicionBuffer(LdrConfig(epsilon=0.5, min_pts=100, buffer_capacity=100))
    assert buf.nu_2snd() == 0.0
    for i in range(10):
        buf.insert([100.0 * (i + 1), 0.0])
    assert nu_2snd(buf) == 0.0
    for i in range(90):
        buf.insert([0.0, 0.01 * i])
    assert (len(buf), buf.n_clusters, buf.n_noise) == (100, 1, 10)
    assert buf.nu_2snd() == pytest.approx(0.89, abs=1e-15)


def test_nu_increases_when_noise_joins_cluster():
    buf = SuspicionBuffer(LdrConfig(epsilon=1.0, min_pts=6, buffer_capacity=6))
    for x in ([0, 0], [0.5, 0], [10, 0], [20, 0], [30, 0]):
        buf.insert(x)
    before = buf.nu_2snd()
    buf.insert([10.5, 0])  # buffer now full at 6; the noise at 10 joins a new cluster
    assert buf.nu_2snd() > before


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 100_000), cap=st.integers(10, 60), eps=st.floats(0.3, 1.5))
def test_incremental_clustering_matches_oracle(seed, cap, eps):
    rng = np.random.default_rng(seed)
    buf = SuspicionBuffer(LdrConfig(epsilon=eps, min_pts=10, buffer_capacity=cap))
    centers = rng.uniform(0, 8, (4, 2))
    for _ in range(150):
        x = centers[rng.integers(4)] + rng.normal(0, 0.6, 2) if rng.random() < 0.7 else rng.uniform(0, 8, 2)
        r = buf.insert(x)
        assert len(buf) <= cap
        check_registry(buf)
        assert same_partition(buf.labels(), oracle_partition(buf.samples(), eps))
        if r.detected is not None and rng.random() < 0.5:
            buf.extract_cluster(r.detected)
            assert same_partition(buf.labels(), oracle_partition(buf.samples(), eps))
        assert 0.0 <= buf.nu_2snd() < 1.0


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_smaller_min_pts_never_delays_detection(seed):
    rng = np.random.default_rng(seed)
    stream = np.vstack([rng.uniform(0, 30, (40, 2)), rng.normal([15, 15], 0.4, (30, 2))])
    rng.shuffle(stream)

    def first_detection(min_pts):
        buf = SuspicionBuffer(LdrConfig(epsilon=1.0, min_pts=min_pts, buffer_capacity=100))
        for i, x in enumerate(stream):
            if buf.insert(x).detected is not None:
                return i
        return len(stream)

    idx = [first_detection(k) for k in (12, 10, 6, 3)]
    assert idx == sorted(idx, reverse=True)
