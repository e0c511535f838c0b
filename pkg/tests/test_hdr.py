import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sst

from candies.errors import DataError, InvalidParameterError
from candies.hdr import (
    ADJUSTED,
    STANDALONE,
    CellLayout,
    HdrConfig,
    HdrDetector,
    avg_novelty,
    build_cells_learned,
    build_cells_theoretical,
    cell_index,
    cell_masses,
    compressor,
    novelty_from_ratios,
    sample_winner,
    t_value,
    winner_probabilities,
)
from candies.mixture import DegenerateInputWarning, MixtureModel
from candies.stats import chi2_cdf, critical_value


def recount_t(det):
    counts = Counter(det.window)
    lam = det.layout.n_cells
    fill = len(det.window)
    if fill == 0:
        return 0.0
    if det.mode == STANDALONE:
        cells, e = range(1, lam + 1), fill / lam
    else:
        cells, e = range(1, lam), fill / (lam - 1)
    return float(sum((counts.get(i, 0) - e) ** 2 / e for i in cells))


def test_theoretical_cells():
    lay = build_cells_theoretical(2, 2)
    assert lay.left_edges()[0] == 0.0
    assert lay.boundaries[0] == pytest.approx(2 * math.log(2), abs=1e-12)
    for d, lam in ((1, 12), (2, 20), (6, 20), (20, 7)):
        lay = build_cells_theoretical(d, lam)
        assert len(lay.boundaries) == lam - 1
        masses = cell_masses(lay, d)
        assert masses == pytest.approx([1 / lam] * lam, abs=1e-8)


def test_layout_validation():
    with pytest.raises(InvalidParameterError):
        CellLayout((1.0, 1.0), 3, "learned")
    with pytest.raises(InvalidParameterError):
        CellLayout((1.0,), 3, "learned")
    with pytest.raises(InvalidParameterError):
        build_cells_theoretical(2, 1)


def test_learned_cells_order_statistics():
    lay = build_cells_learned(np.arange(1, 101, dtype=float)[::-1], 10)
    assert lay.boundaries == tuple(float(10 * i) for i in range(1, 10))
    hits = Counter(cell_index(lay, d) for d in range(1, 101))
    assert all(abs(c - 10) <= 1 for c in hits.values())


def test_learned_cells_errors():
    with pytest.raises(DataError):
        build_cells_learned([3.0] * 50, 10)
    with pytest.raises(DataError):
        build_cells_learned([1.0, 2.0], 10)
    with pytest.raises(DataError):
        build_cells_learned([-1.0] + list(range(1, 30)), 10)


def test_cell_index_conventions():
    lay = build_cells_theoretical(2, 12)
    assert cell_index(lay, 0.0) == 1
    assert cell_index(lay, lay.boundaries[0]) == 2
    assert cell_index(lay, lay.boundaries[-1] + 1e3) == 12


def test_config_defaults():
    cfg = HdrConfig.for_alpha(0.95)
    assert (cfg.n_cells, cfg.window, cfg.span, cfg.fill_required) == (20, 100, 200, 50)
    with pytest.raises(InvalidParameterError):
        HdrConfig(n_cells=20, omega=10)
    with pytest.raises(InvalidParameterError):
        HdrConfig(significance=1.0)


def test_perfect_fit_gives_zero():
    assert t_value(np.array([5, 5, 5, 5]), 20, STANDALONE) == 0.0
    assert t_value(np.array([5, 5, 5, 0]), 15, ADJUSTED) == 0.0


def test_single_cell_window_statistic():
    lay = build_cells_theoretical(2, 12)
    det = HdrDetector(lay, HdrConfig(n_cells=12, omega=50))
    for _ in range(50):
        r = det.update(0.0)
    assert r.t == pytest.approx(550.0)
    assert 50 / 12 == pytest.approx(4.1667, abs=1e-4)
    assert det.dof == 11 and det.critical == pytest.approx(critical_value(11, 0.01))


def test_adjusted_mode_degrees_of_freedom():
    det = HdrDetector(build_cells_theoretical(2, 20), HdrConfig(), mode=ADJUSTED)
    assert det.dof == 18
    assert det.critical == pytest.approx(34.805305734705065, rel=1e-9)


def test_no_alarm_before_min_fill():
    det = HdrDetector(build_cells_theoretical(2, 12), HdrConfig(n_cells=12, omega=50))
    readings = [det.update(0.0) for _ in range(50)]
    assert not any(r.alarm for r in readings[:24])
    assert readings[-1].alarm


def test_reset_clears_state():
    det = HdrDetector(build_cells_theoretical(2, 12), HdrConfig(n_cells=12, omega=50))
    for _ in range(30):
        det.update(0.1)
    det.reset()
    assert det.fill == 0 and det.counts.sum() == 0 and len(det.t_history) == 0
    assert det.last.t == 0.0


@pytest.mark.parametrize("mode", [STANDALONE, ADJUSTED])
def test_incremental_counts_and_t_match_recount(mode):
    rng = np.random.default_rng(11)
    lam = 20 if mode == ADJUSTED else 12
    det = HdrDetector(build_cells_theoretical(3, lam), HdrConfig(n_cells=lam, omega=60, ma_span=40), mode=mode)
    hist = []
    for k, d in enumerate(rng.chisquare(3, 10_000) * rng.choice([1.0, 1.5], 10_000)):
        r = det.update(float(d))
        hist.append(r.t)
        assert int(det.counts.sum()) == det.fill <= 60
        if k % 97 == 0:
            assert np.array_equal(det.counts, np.bincount(np.array(det.window) - 1, minlength=lam))
        assert r.t == recount_t(det)
        assert r.t_ma == pytest.approx(np.mean(hist[-40:]), rel=1e-12)


def test_stationary_false_alarm_rate():
    rng = np.random.default_rng(5)
    det = HdrDetector(build_cells_theoretical(2, 20), HdrConfig(n_cells=20, alarm_on="raw"))
    alarms = 0
    steps = 0
    for d in rng.chisquare(2, 20_000):
        r = det.update(float(d))
        if det.ready:
            steps += 1
            alarms += r.alarm
    assert alarms / steps <= 3 * 0.01


def test_theoretical_cells_uniform_for_own_gaussian():
    passes = 0
    lam = 20
    for seed in range(40):
        rng = np.random.default_rng(seed)
        d = 4
        cov = np.diag(rng.uniform(0.5, 3, d))
        m = MixtureModel.from_gaussians([np.zeros(d)], [cov])
        X = rng.multivariate_normal(np.zeros(d), cov, 10_000)
        lay = build_cells_theoretical(d, lam)
        hits = np.bincount([cell_index(lay, v) - 1 for v in m.mahalanobis_sq(X)[:, 0]], minlength=lam)
        passes += sst.chisquare(hits).pvalue > 0.01
    assert passes >= 38


def test_winner_examples():
    one = MixtureModel.from_gaussians([[0, 0]], [np.eye(2)])
    rng = np.random.default_rng(0)
    assert {sample_winner(one, [5, 5], rng) for _ in range(50)} == {0}
    sym = MixtureModel.from_gaussians([[-1, 0], [1, 0]], [np.eye(2)] * 2, weights=[0.9, 0.1])
    assert winner_probabilities(sym.component_log_densities([0, 2])) == pytest.approx([0.5, 0.5])


def test_winner_ignores_mixing_weights_and_matches_frequencies():
    m = MixtureModel.from_gaussians([[0, 0], [2, 0], [0, 3]], [np.eye(2), 2 * np.eye(2), np.eye(2)],
                                    weights=[0.7, 0.2, 0.1])
    x = np.array([0.8, 1.0])
    dens = np.array([sst.multivariate_normal(c.params.mean, c.params.covariance).pdf(x) for c in m.components])
    expected = dens / dens.sum()
    rng = np.random.default_rng(1)
    draws = np.bincount([sample_winner(m, x, rng) for _ in range(100_000)], minlength=3) / 100_000
    assert np.max(np.abs(draws - expected)) <= 0.01


def test_winner_deterministic_given_rng():
    m = MixtureModel.from_gaussians([[0, 0], [1, 0]], [np.eye(2)] * 2)
    a = [sample_winner(m, [0.5, 0.2], np.random.default_rng(7)) for _ in range(5)]
    assert len(set(a)) == 1
    r1, r2 = np.random.default_rng(3), np.random.default_rng(3)
    assert [sample_winner(m, [0.5, 0], r1) for _ in range(30)] == [sample_winner(m, [0.5, 0], r2) for _ in range(30)]


def test_winner_underflow_uniform():
    with pytest.warns(DegenerateInputWarning):
        p = winner_probabilities([-np.inf, -np.inf, -np.inf])
    assert p == pytest.approx([1 / 3] * 3)


def test_compressor_examples():
    assert compressor(0.0) == 0.0
    assert compressor(1.0) == 2.0
    assert compressor(1.7) == 2.0
    grid = np.linspace(0, 1, 10_001)
    w = np.array([compressor(v) for v in grid])
    assert np.all(np.diff(w) > 0)
    assert np.all(w >= grid - 1e-15) and np.all(w <= 2 * grid + 1e-15)


def _ready_detector():
    # near-uniform fill over the 19 tested cells
    det = HdrDetector(build_cells_theoretical(2, 20), HdrConfig(), mode=ADJUSTED)
    for i in range(100):
        det.update(float(det.layout.left_edges()[i % 19]))
    return det


def test_avg_novelty_identities():
    assert novelty_from_ratios([1.0, 1.0, 1.0]) == 2.0
    assert novelty_from_ratios([0.0, 0.0]) == 0.0
    assert novelty_from_ratios([0.37]) == pytest.approx(compressor(0.37))
    det = _ready_detector()
    assert det.last.t < 1.0
    assert avg_novelty([det]) == pytest.approx(compressor(det.normalized()))


def test_avg_novelty_unready_handling():
    ready = _ready_detector()
    fresh = HdrDetector(build_cells_theoretical(2, 20), HdrConfig(), mode=ADJUSTED)
    assert avg_novelty([ready, fresh]) == pytest.approx(avg_novelty([ready]))
    assert avg_novelty([ready, fresh], unready="zero") == 0.0
    assert avg_novelty([fresh]) == 0.0
    with pytest.raises(InvalidParameterError):
        avg_novelty([])


@settings(max_examples=200, deadline=None)
@given(x=st.floats(0, 1), mu=st.floats(1, 1e5))
def test_compressor_bounds(x, mu):
    w = compressor(x, mu)
    assert x - 1e-12 <= w <= 2 * x + 1e-12
