"""
High-density-region novelty detection with online chi-squared tests.

Each mixture component owns a detector. The squared Mahalanobis distance of
every sample routed to a component is mapped to one of ``lambda`` cells that
are equally likely under the component, and a sliding window of the last
``omega`` cell hits is tested against the uniform distribution.
"""

from __future__ import annotations

import math
import warnings
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from candies.errors import DataError, InvalidParameterError
from candies.mixture import DegenerateInputWarning, MixtureModel
from candies.stats import chi2_cdf, chi2_inverse_cdf, critical_value

STANDALONE = "standalone"
ADJUSTED = "candies-adjusted"


@dataclass(frozen=True)
class CellLayout:
    """Interior cell boundaries on the squared-distance axis.

    ``boundaries`` holds ``lambda - 1`` strictly increasing break points; cell
    1 starts at 0 and cell ``lambda`` is unbounded on the right.
    """

    boundaries: tuple[float, ...]
    n_cells: int
    mode: str

    def __post_init__(self):
        b = self.boundaries
        if len(b) != self.n_cells - 1:
            raise InvalidParameterError("a layout with lambda cells needs lambda - 1 boundaries")
        if any(v <= 0 for v in b) or any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise InvalidParameterError("cell boundaries must be positive and strictly increasing")

    def left_edges(self) -> tuple[float, ...]:
        return (0.0,) + self.boundaries


def build_cells_theoretical(dim: int, n_cells: int) -> CellLayout:
    """Equiprobable cells under the chi-squared distribution with ``dim`` dof."""
    if n_cells < 2:
        raise InvalidParameterError("need at least two cells")
    edges = tuple(chi2_inverse_cdf(dim, i / n_cells) for i in range(1, n_cells))
    return CellLayout(edges, n_cells, "theoretical")


def build_cells_learned(train_distances: Sequence[float], n_cells: int) -> CellLayout:
    """
    Cell boundaries from order statistics of training distances.

    With ``w`` sorted training distances, the left edge of cell ``i + 1`` is
    the ``ceil(i * w / lambda)``-th smallest distance (1-based).
    """
    d = np.sort(np.asarray(train_distances, dtype=float))
    w = len(d)
    if n_cells < 2:
        raise InvalidParameterError("need at least two cells")
    if w < n_cells:
        raise DataError(f"need at least {n_cells} training distances, got {w}")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise DataError("training distances must be finite and non-negative")
    edges = tuple(float(d[math.ceil(i * w / n_cells) - 1]) for i in range(1, n_cells))
    try:
        return CellLayout(edges, n_cells, "learned")
    except InvalidParameterError as exc:
        raise DataError("degenerate training distances: learned boundaries are not increasing") from exc


def cell_index(layout: CellLayout, distance: float) -> int:
    """1-based index of the cell containing ``distance`` (left-inclusive)."""
    return bisect_right(layout.boundaries, distance) + 1


@dataclass(frozen=True)
class HdrConfig:
    """Detector settings. ``None`` fields take their derived defaults."""

    n_cells: int = 20
    omega: int | None = None
    ma_span: int | None = None
    significance: float = 0.01
    min_fill: int | None = None
    alarm_on: str = "ma"

    def __post_init__(self):
        if self.n_cells < 2:
            raise InvalidParameterError("n_cells must be at least 2")
        if not 0.0 < self.significance < 1.0:
            raise InvalidParameterError("significance must lie in (0, 1)")
        if self.window < self.n_cells:
            raise InvalidParameterError("omega must be at least lambda")
        if self.alarm_on not in ("ma", "raw"):
            raise InvalidParameterError("alarm_on must be 'ma' or 'raw'")

    @classmethod
    def for_alpha(cls, alpha: float, **kw) -> "HdrConfig":
        return cls(n_cells=int(round(1.0 / (1.0 - alpha))), **kw)

    @property
    def window(self) -> int:
        return self.omega if self.omega is not None else 5 * self.n_cells

    @property
    def span(self) -> int:
        return self.ma_span if self.ma_span is not None else 2 * self.window

    @property
    def fill_required(self) -> int:
        return self.min_fill if self.min_fill is not None else math.ceil(self.window / 2)


@dataclass
class DetectorReading:
    t: float
    t_ma: float
    alarm: bool


class HdrDetector:
    """Sliding-window chi-squared goodness-of-fit detector for one component."""

    def __init__(self, layout: CellLayout, config: HdrConfig | None = None, mode: str = STANDALONE):
        if mode not in (STANDALONE, ADJUSTED):
            raise InvalidParameterError(f"unknown detector mode {mode!r}")
        self.layout = layout
        self.config = config or HdrConfig(n_cells=layout.n_cells)
        if self.config.n_cells != layout.n_cells:
            raise InvalidParameterError("config and layout disagree on the number of cells")
        self.mode = mode
        self.window: deque[int] = deque()
        self.counts = np.zeros(layout.n_cells, dtype=np.int64)
        self.t_history: deque[float] = deque(maxlen=self.config.span)
        self.last = DetectorReading(0.0, 0.0, False)
        lam = layout.n_cells
        self.dof = lam - 1 if mode == STANDALONE else lam - 2
        if self.dof < 1:
            raise InvalidParameterError("too few cells for the chosen mode")
        self.critical = critical_value(self.dof, self.config.significance)

    @property
    def fill(self) -> int:
        return len(self.window)

    @property
    def ready(self) -> bool:
        return self.fill >= self.config.fill_required

    def statistic(self) -> float:
        """Chi-squared statistic of the current window counts."""
        return t_value(self.counts, self.fill, self.mode)

    def update(self, distance: float) -> DetectorReading:
        if len(self.window) >= self.config.window:
            old = self.window.popleft()
            self.counts[old - 1] -= 1
        cell = cell_index(self.layout, distance)
        self.window.append(cell)
        self.counts[cell - 1] += 1
        t = self.statistic()
        self.t_history.append(t)
        t_ma = sum(self.t_history) / len(self.t_history)
        signal = t_ma if self.config.alarm_on == "ma" else t
        alarm = self.ready and signal > self.critical
        self.last = DetectorReading(t, t_ma, alarm)
        return self.last

    def reset(self) -> None:
        self.window.clear()
        self.counts[:] = 0
        self.t_history.clear()
        self.last = DetectorReading(0.0, 0.0, False)

    def normalized(self) -> float:
        """Current statistic divided by the critical value."""
        return self.last.t / self.critical


def t_value(counts, fill: int, mode: str = STANDALONE) -> float:
    """
    Pearson statistic of ``counts`` against a uniform expectation.

    In adjusted mode the last cell is left out and the expectation is spread
    over the remaining ``lambda - 1`` cells.
    """
    lam = len(counts)
    if fill == 0:
        return 0.0
    if mode == STANDALONE:
        tested = counts
        e = fill / lam
    else:
        tested = counts[: lam - 1]
        e = fill / (lam - 1)
    return float(sum((int(b) - e) ** 2 / e for b in tested))


def sample_winner(model: MixtureModel, x, rng: np.random.Generator, log_dens=None) -> int:
    """
    Draw the component that ``x`` is affiliated with.

    The unit interval is partitioned proportionally to the component
    densities without mixing weights; the part covering a uniform draw wins.
    """
    if log_dens is None:
        log_dens = model.component_log_densities(x)
    probs = winner_probabilities(log_dens)
    r = rng.random()
    edges = np.cumsum(probs)
    j = int(np.searchsorted(edges, r, side="right"))
    return min(j, len(probs) - 1)


def winner_probabilities(log_dens) -> np.ndarray:
    log_dens = np.asarray(log_dens, dtype=float)
    top = np.max(log_dens)
    if not np.isfinite(top):
        warnings.warn("all component densities underflow; sampling the winner uniformly",
                      DegenerateInputWarning, stacklevel=3)
        return np.full(len(log_dens), 1.0 / len(log_dens))
    p = np.exp(log_dens - top)
    return p / p.sum()


def compressor(x: float, mu: float = 1000.0) -> float:
    """Boost values near one: ``x * (2 - log(1 + mu(1-x)) / log(1 + mu))``."""
    x = min(max(x, 0.0), 1.0)
    comp = math.log1p(mu * (1.0 - x)) / math.log1p(mu)
    return x * (2.0 - comp)


def avg_novelty(detectors: Sequence[HdrDetector], mu: float = 1000.0, unready: str = "exclude") -> float:
    """
    Geometric mean of the compressed normalized statistics of all detectors.

    Detectors below their minimum fill are left out (``unready="exclude"``)
    or count as zero (``unready="zero"``, which pins the mean at 0). With no
    ready detector the measure is 0.
    """
    if not detectors:
        raise InvalidParameterError("need at least one detector")
    if unready not in ("exclude", "zero"):
        raise InvalidParameterError("unready must be 'exclude' or 'zero'")
    if unready == "zero" and not all(d.ready for d in detectors):
        return 0.0
    values = [compressor(min(d.normalized(), 1.0), mu) for d in detectors if d.ready]
    if not values:
        return 0.0
    if min(values) <= 0.0:
        return 0.0
    return float(math.exp(sum(math.log(v) for v in values) / len(values)))


def novelty_from_ratios(ratios: Sequence[float], mu: float = 1000.0) -> float:
    """Average novelty for explicit normalized statistics (all treated as ready)."""
    values = [compressor(min(r, 1.0), mu) for r in ratios]
    if not values or min(values) <= 0.0:
        return 0.0
    return float(math.exp(sum(math.log(v) for v in values) / len(values)))


def cell_masses(layout: CellLayout, dim: int) -> list[float]:
    edges = layout.left_edges()
    cdf = [chi2_cdf(dim, e) for e in edges] + [1.0]
    return [cdf[i + 1] - cdf[i] for i in range(layout.n_cells)]
