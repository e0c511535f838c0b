"""
Stream detectors built on a classifier-enabled mixture model.

:class:`Candies` routes every sample either to the HDR goodness-of-fit
detector of a sampled winner component, or to the LDR suspicion buffer, and
adapts the model whenever a buffered cluster is large enough. :class:`Csnd`
is the state-variable baseline that retrains on a window of recent samples
once its state underflows a threshold. :class:`Static` never adapts.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from candies.errors import CandiesError, DataError
from candies.hdr import (
    ADJUSTED,
    HdrConfig,
    HdrDetector,
    avg_novelty,
    build_cells_learned,
    build_cells_theoretical,
    sample_winner,
)
from candies.ldr import LdrConfig, SuspicionBuffer, region_radius_sq
from candies.mixture import MixtureModel, TrainConfig, fuse_detailed, train

log = logging.getLogger(__name__)

HDR = "HDR"
LDR = "LDR"

LDR_NOVEL = "ldr-novel-process"
HDR_NOVEL = "hdr-novel-process"
ADAPTATION = "adaptation"
ADAPTATION_FAILED = "adaptation-failed"


@dataclass
class DetectionEvent:
    step: int
    kind: str
    component: int | None = None
    cluster: int | None = None
    nu_2snd: float = 0.0
    nu_avg: float = 0.0
    t_ma: list[float] = field(default_factory=list)
    inserted: int = 0
    label: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepResult:
    label: str
    posterior: np.ndarray
    events: list[DetectionEvent]
    record: dict


def _cluster_train_config() -> TrainConfig:
    return TrainConfig(j_max=3)


class Candies:
    """
    Combined HDR/LDR novelty detector.

    Parameters
    ----------
    model: MixtureModel
        Classifier-enabled initial model.
    ldr: LdrConfig
        Suspicion test and buffer settings.
    hdr: HdrConfig, optional
        Detector settings; by default ``lambda = 1 / (1 - alpha)``.
    seed: int
        Seed of the winner-sampling generator; also offsets the seeds used
        to train novel components.
    cluster_training: TrainConfig, optional
        Settings for training the model of a detected cluster.
    fuse_threshold: float
        Hellinger distance below which a novel component is merged.
    reset_on_alarm: bool
        Clear a detector's window after it raises an HDR alarm.
    train_samples: array, optional
        When given, each initial component gets learned cells fitted on the
        distances of the training samples it is most responsible for.
    novelty_unready: str
        How detectors below their minimum fill enter the average novelty:
        ``"exclude"`` or ``"zero"``.
    """

    def __init__(self, model: MixtureModel, ldr: LdrConfig | None = None,
                 hdr: HdrConfig | None = None, seed: int = 0,
                 cluster_training: TrainConfig | None = None, fuse_threshold: float = 0.5,
                 reset_on_alarm: bool = True, mu: float = 1000.0, train_samples=None,
                 novelty_unready: str = "exclude"):
        if not model.is_classifier:
            raise CandiesError("Candies needs a classifier-enabled model")
        self.model = model
        self.ldr = ldr or LdrConfig()
        self.hdr = hdr or HdrConfig.for_alpha(self.ldr.alpha)
        self.buffer = SuspicionBuffer(self.ldr)
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.cluster_training = cluster_training or _cluster_train_config()
        self.fuse_threshold = fuse_threshold
        self.reset_on_alarm = reset_on_alarm
        self.mu = mu
        self.novelty_unready = novelty_unready
        self.rho = region_radius_sq(model.dim, self.ldr.alpha)
        self.events: list[DetectionEvent] = []
        self.n_steps = 0
        self.n_adaptations = 0
        self.detectors = [self._new_detector() for _ in model.components]
        if train_samples is not None:
            self._learn_cells(np.asarray(train_samples, dtype=float))

    def _new_detector(self, layout=None) -> HdrDetector:
        if layout is None:
            layout = build_cells_theoretical(self.model.dim, self.hdr.n_cells)
        return HdrDetector(layout, self.hdr, mode=ADJUSTED)

    def _learn_cells(self, X: np.ndarray) -> None:
        owner = np.argmax(self.model.responsibilities(X), axis=1)
        d2 = self.model.mahalanobis_sq(X)
        for j in range(self.model.n_components):
            dist = d2[owner == j, j]
            dist = dist[dist <= self.rho]
            if len(dist) >= 5 * self.hdr.n_cells:
                try:
                    self.detectors[j] = self._new_detector(build_cells_learned(dist, self.hdr.n_cells))
                except DataError:
                    log.warning("component %d keeps theoretical cells (degenerate distances)", j)

    # ------------------------------------------------------------------

    def nu_avg(self) -> float:
        return avg_novelty(self.detectors, self.mu, self.novelty_unready)

    def _snapshot(self, step: int, kind: str, **kw) -> DetectionEvent:
        return DetectionEvent(
            step=step, kind=kind, nu_2snd=self.buffer.nu_2snd(), nu_avg=self.nu_avg(),
            t_ma=[d.last.t_ma for d in self.detectors], **kw)

    def step(self, x) -> StepResult:
        """Process one sample; returns the classification and any events."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.model.dim:
            raise DataError(f"sample dimension {x.shape[0]} does not match model dimension {self.model.dim}")
        if not np.all(np.isfinite(x)):
            raise DataError("sample contains non-finite values")

        step = self.n_steps
        d2 = self.model.mahalanobis_sq(x)
        log_dens = self.model.component_log_densities(x, d2)
        events: list[DetectionEvent] = []
        record = {"step": step, "component": None, "cluster": None, "t": None, "t_ma": None,
                  "critical": None, "nu_j": None, "hdr_alarm": False, "adaptation": False,
                  "inserted": 0, "adapted_label": None}

        if np.any(d2 <= self.rho):
            record["region"] = HDR
            j = sample_winner(self.model, x, self.rng, log_dens)
            det = self.detectors[j]
            reading = det.update(float(d2[j]))
            record.update(component=j, t=reading.t, t_ma=reading.t_ma, critical=det.critical,
                          nu_j=det.normalized())
            if reading.alarm:
                record["hdr_alarm"] = True
                events.append(self._snapshot(step, HDR_NOVEL, component=j))
                if self.reset_on_alarm:
                    det.reset()
            label, post = self.model.classify(x, log_dens)
        else:
            record["region"] = LDR
            res = self.buffer.insert(x)
            record["cluster"] = None if res.cluster < 0 else res.cluster
            if res.detected is not None:
                events.append(self._snapshot(step, LDR_NOVEL, cluster=res.detected))
                samples = self.buffer.extract_cluster(res.detected)
                ev = self.adapt(samples, step=step, cluster=res.detected)
                events.append(ev)
                if ev.kind == ADAPTATION:
                    record.update(adaptation=True, inserted=ev.inserted, adapted_label=ev.label)
            label, post = self.model.classify(x)

        record["nu_2snd"] = self.buffer.nu_2snd()
        record["nu_avg"] = self.nu_avg()
        record["predicted"] = label
        self.events.extend(events)
        self.n_steps += 1
        return StepResult(label, post, events, record)

    def adapt(self, samples, step: int | None = None, cluster: int | None = None) -> DetectionEvent:
        """Train a model of ``samples``, fuse it into the current model and log the event."""
        step = self.n_steps if step is None else step
        cfg = replace(self.cluster_training, seed=self.cluster_training.seed + self.seed + self.n_adaptations)
        try:
            novel = train(samples, cfg)
            result = fuse_detailed(self.model, novel, self.fuse_threshold)
        except (CandiesError, np.linalg.LinAlgError) as exc:
            log.warning("adaptation at step %d failed: %s", step, exc)
            return self._snapshot(step, ADAPTATION_FAILED, cluster=cluster)
        self.n_adaptations += 1
        self.model = result.model
        for _ in result.inserted:
            self.detectors.append(self._new_detector())
        label = result.model.components[result.inserted[0]].label if result.inserted else None
        return self._snapshot(step, ADAPTATION, cluster=cluster, inserted=len(result.inserted), label=label)


@dataclass
class CsndStepResult:
    label: str
    posterior: np.ndarray
    state: float
    delta: float
    adapted: bool
    events: list[DetectionEvent]
    record: dict


class Csnd:
    """
    Baseline detector driven by a scalar state variable.

    Each sample rewards (inside an alpha-region) or penalizes (outside) the
    state in proportion to the component responsibilities. When the state
    drops below ``threshold`` the model is retrained on the most recent
    ``window`` samples with the existing components kept fixed, and the
    state is reset to 1.
    """

    def __init__(self, model: MixtureModel, alpha: float = 0.95, eta: float = 0.001,
                 threshold: float = 0.2, window: int = 500, seed: int = 0,
                 retraining: TrainConfig | None = None, fuse_threshold: float = 0.5):
        if not model.is_classifier:
            raise CandiesError("Csnd needs a classifier-enabled model")
        self.model = model
        self.alpha = alpha
        self.eta = eta
        self.threshold = threshold
        self.state = 1.0
        self.recent: deque[np.ndarray] = deque(maxlen=window)
        self.seed = seed
        self.retraining = retraining or TrainConfig()
        self.fuse_threshold = fuse_threshold
        self.rho = region_radius_sq(model.dim, alpha)
        self.events: list[DetectionEvent] = []
        self.n_steps = 0
        self.n_adaptations = 0

    def delta(self, x, d2=None, log_dens=None) -> float:
        if d2 is None:
            d2 = self.model.mahalanobis_sq(x)
        gamma = self.model.responsibilities(x, self.model.component_log_densities(x, d2)
                                            if log_dens is None else log_dens)
        inside = (d2 <= self.rho).astype(float)
        ratio = self.alpha / (1.0 - self.alpha)
        return float(self.eta * np.sum(gamma * (inside - ratio * (1.0 - inside))))

    def step(self, x) -> CsndStepResult:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.model.dim:
            raise DataError(f"sample dimension {x.shape[0]} does not match model dimension {self.model.dim}")
        if not np.all(np.isfinite(x)):
            raise DataError("sample contains non-finite values")
        step = self.n_steps
        d2 = self.model.mahalanobis_sq(x)
        log_dens = self.model.component_log_densities(x, d2)
        delta = self.delta(x, d2, log_dens)
        self.state += delta
        self.recent.append(x)
        events = []
        adapted = False
        inserted = 0
        adapted_label = None
        if self.state < self.threshold:
            ev = self._retrain(step)
            events.append(ev)
            adapted = ev.kind == ADAPTATION
            inserted, adapted_label = ev.inserted, ev.label
            self.state = 1.0
        label, post = self.model.classify(x)
        region = HDR if np.any(d2 <= self.rho) else LDR
        record = {"step": step, "region": region, "component": None, "cluster": None,
                  "t": None, "t_ma": None, "critical": None, "nu_j": None, "hdr_alarm": False,
                  "nu_2snd": None, "nu_avg": None, "state": self.state, "predicted": label,
                  "adaptation": adapted, "inserted": inserted, "adapted_label": adapted_label}
        self.events.extend(events)
        self.n_steps += 1
        return CsndStepResult(label, post, self.state, delta, adapted, events, record)

    def _retrain(self, step: int) -> DetectionEvent:
        cfg = replace(self.retraining, seed=self.retraining.seed + self.seed + self.n_adaptations)
        try:
            novel = train(np.vstack(self.recent), cfg)
            result = fuse_detailed(self.model, novel, self.fuse_threshold, fixed_base=True)
        except (CandiesError, np.linalg.LinAlgError) as exc:
            log.warning("CSND retraining at step %d failed: %s", step, exc)
            return DetectionEvent(step=step, kind=ADAPTATION_FAILED)
        self.n_adaptations += 1
        self.model = result.model
        label = result.model.components[result.inserted[0]].label if result.inserted else None
        return DetectionEvent(step=step, kind=ADAPTATION, inserted=len(result.inserted), label=label)


class Static:
    """Non-adaptive classifier; emits telemetry but never detection events."""

    def __init__(self, model: MixtureModel):
        if not model.is_classifier:
            raise CandiesError("Static needs a classifier-enabled model")
        self.model = model
        self.events: list[DetectionEvent] = []
        self.n_steps = 0

    def step(self, x) -> StepResult:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.model.dim:
            raise DataError(f"sample dimension {x.shape[0]} does not match model dimension {self.model.dim}")
        label, post = self.model.classify(x)
        record = {"step": self.n_steps, "region": None, "component": None, "cluster": None,
                  "t": None, "t_ma": None, "critical": None, "nu_j": None, "hdr_alarm": False,
                  "nu_2snd": None, "nu_avg": None, "predicted": label, "adaptation": False,
                  "inserted": 0, "adapted_label": None}
        self.n_steps += 1
        return StepResult(label, post, [], record)
