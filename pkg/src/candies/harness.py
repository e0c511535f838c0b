"""
Scenario generation, stream I/O, experiment execution and evaluation.

A :class:`Scenario` holds a labeled training slice, a labeled test stream
and the ground truth of every novel process injected into the stream. All
step indices in the ground truth and in telemetry refer to positions in the
test stream.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.metrics import f1_score
from sklearn.model_selection import StratifiedKFold

from candies.detector import ADAPTATION, Candies, Csnd, Static
from candies.errors import DataError, InvalidParameterError
from candies.hdr import HdrConfig
from candies.ldr import LdrConfig
from candies.mixture import MixtureModel, TrainConfig, fit_conclusions, train

NOISE_LABEL = "noise"
BACKGROUND_LABEL = "background"
DETECTORS = ("candies", "csnd", "static")

# Column choice for KDD-style connection records. Not taken from any
# published reduction; six continuous-ish attributes with broad support.
DEFAULT_KDD_COLUMNS = (
    "duration", "src_bytes", "dst_bytes", "count", "srv_count", "dst_host_srv_count",
)


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass
class GroundTruth:
    label: str
    onset: int
    members: list[int]


@dataclass
class Scenario:
    train_X: np.ndarray
    train_y: list[str]
    X: np.ndarray
    y: list[str]
    novel: list[GroundTruth]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.novel.sort(key=lambda g: g.onset)
        n = len(self.X)
        for g in self.novel:
            if any(i < 0 or i >= n for i in g.members):
                raise DataError(f"ground-truth members of {g.label!r} fall outside the stream")

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def truth_dict(self) -> dict:
        return {"novel": [asdict(g) for g in self.novel], "metadata": self.metadata}


@dataclass
class Blob:
    mean: Sequence[float]
    covariance: Sequence[Sequence[float]]
    weight: float = 1.0
    label: str | None = None


@dataclass
class NovelSpec:
    mean: Sequence[float]
    covariance: Sequence[Sequence[float]]
    count: int
    onset: int
    span: int | None = None
    label: str | None = None


@dataclass
class NoiseSpec:
    count: int
    low: Sequence[float]
    high: Sequence[float]
    label: str = NOISE_LABEL


@dataclass
class CloudsConfig:
    """
    Gaussian blobs for training and background, plus novel processes and
    uniform noise for the test stream.

    A novel process's samples are scattered uniformly over the background
    positions ``[onset, onset + span)`` (to the end when ``span`` is None).
    """

    blobs: list[Blob]
    n_train: int
    n_test: int
    novel: list[NovelSpec] = field(default_factory=list)
    noise: NoiseSpec | None = None

    @classmethod
    def from_dict(cls, doc: Mapping) -> "CloudsConfig":
        try:
            blobs = [Blob(**b) for b in doc["blobs"]]
            novel = [NovelSpec(**p) for p in doc.get("novel", [])]
            noise = NoiseSpec(**doc["noise"]) if doc.get("noise") else None
            return cls(blobs, int(doc["n_train"]), int(doc["n_test"]), novel, noise)
        except (KeyError, TypeError) as exc:
            raise InvalidParameterError(f"malformed scenario config: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


def _draw_blobs(blobs: list[Blob], n: int, rng: np.random.Generator) -> tuple[np.ndarray, list[str]]:
    w = np.array([b.weight for b in blobs], dtype=float)
    which = rng.choice(len(blobs), size=n, p=w / w.sum())
    dim = len(blobs[0].mean)
    X = np.empty((n, dim))
    for k, b in enumerate(blobs):
        idx = np.flatnonzero(which == k)
        X[idx] = rng.multivariate_normal(np.asarray(b.mean, float), np.asarray(b.covariance, float), size=len(idx))
    labels = [blobs[k].label or f"c{k}" for k in which]
    return X, labels


def generate_clouds_like(config: CloudsConfig | Mapping, seed: int = 0) -> Scenario:
    """Build a labeled scenario from blob, novel-process and noise settings."""
    if not isinstance(config, CloudsConfig):
        config = CloudsConfig.from_dict(config)
    if not config.blobs:
        raise InvalidParameterError("at least one blob is required")
    if config.n_train <= 0 or config.n_test <= 0:
        raise InvalidParameterError("n_train and n_test must be positive")
    for p in config.novel:
        if p.count <= 0:
            raise InvalidParameterError("novel process counts must be positive")
        if not 0 <= p.onset < config.n_test:
            raise InvalidParameterError(f"novel onset {p.onset} is beyond the end of the test stream")
    rng = np.random.default_rng(seed)
    train_X, train_y = _draw_blobs(config.blobs, config.n_train, rng)
    bg_X, bg_y = _draw_blobs(config.blobs, config.n_test, rng)

    # every sample gets a sort key on the background axis; ties keep insertion order
    keys = [np.arange(config.n_test, dtype=float)]
    parts_X = [bg_X]
    parts_y: list[str] = list(bg_y)
    tags = [np.full(config.n_test, -1)]
    for k, p in enumerate(config.novel):
        end = config.n_test if p.span is None else min(config.n_test, p.onset + p.span)
        keys.append(np.sort(rng.uniform(p.onset, end, size=p.count)))
        parts_X.append(rng.multivariate_normal(np.asarray(p.mean, float), np.asarray(p.covariance, float), size=p.count))
        parts_y += [p.label or f"n{k}"] * p.count
        tags.append(np.full(p.count, k))
    if config.noise is not None and config.noise.count > 0:
        nz = config.noise
        keys.append(rng.uniform(0, config.n_test, size=nz.count))
        parts_X.append(rng.uniform(np.asarray(nz.low, float), np.asarray(nz.high, float),
                                   size=(nz.count, len(nz.low))))
        parts_y += [nz.label] * nz.count
        tags.append(np.full(nz.count, -2))

    key = np.concatenate(keys)
    order = np.argsort(key, kind="stable")
    X = np.vstack(parts_X)[order]
    y = [parts_y[i] for i in order]
    tag = np.concatenate(tags)[order]
    truth = []
    for k, p in enumerate(config.novel):
        members = np.flatnonzero(tag == k).tolist()
        truth.append(GroundTruth(p.label or f"n{k}", members[0], members))
    meta = {"generator": "clouds", "seed": seed, "dim": X.shape[1], "config": config.to_dict()}
    return Scenario(train_X, train_y, X, y, truth, meta)


def generate_kdd_style(background, attacks, seed: int = 0, *, attack_label: str = "attack",
                       background_label: str = BACKGROUND_LABEL,
                       parts: tuple[int, int, int] = (10000, 10000, 5000),
                       train_size: int = 5000, mix_ratio: float = 3.0,
                       allow_replacement: bool = False) -> Scenario:
    """
    Three-part stream: background only, background and attacks mixed at
    ``mix_ratio`` to one, background only. The first ``train_size``
    samples of part one form the training slice.
    """
    background = np.asarray(background, dtype=float)
    attacks = np.asarray(attacks, dtype=float)
    if background.ndim != 2 or attacks.ndim != 2 or background.shape[1] != attacks.shape[1]:
        raise DataError("pools must be 2-D arrays with the same number of columns")
    p1, p2, p3 = parts
    if not 0 < train_size <= p1:
        raise InvalidParameterError("train_size must lie in (0, first part size]")
    n_attack = int(round(p2 / (mix_ratio + 1.0)))
    n_bg = p1 + (p2 - n_attack) + p3
    replaced = False
    if len(background) < n_bg or len(attacks) < n_attack:
        if not allow_replacement:
            raise DataError(f"pools too small: need {n_bg} background and {n_attack} attack samples, "
                            f"have {len(background)} and {len(attacks)}")
        replaced = True
    rng = np.random.default_rng(seed)
    bg = background[rng.choice(len(background), size=n_bg, replace=replaced)]
    at = attacks[rng.choice(len(attacks), size=n_attack, replace=replaced)]

    part2_is_attack = np.zeros(p2, dtype=bool)
    part2_is_attack[rng.choice(p2, size=n_attack, replace=False)] = True
    part2 = np.empty((p2, background.shape[1]))
    part2[part2_is_attack] = at
    part2[~part2_is_attack] = bg[p1:p1 + p2 - n_attack]
    full = np.vstack([bg[:p1], part2, bg[p1 + p2 - n_attack:]])
    is_attack = np.concatenate([np.zeros(p1, bool), part2_is_attack, np.zeros(p3, bool)])
    labels = [attack_label if a else background_label for a in is_attack]

    X = full[train_size:]
    y = labels[train_size:]
    members = np.flatnonzero(is_attack[train_size:]).tolist()
    truth = [GroundTruth(attack_label, members[0], members)] if members else []
    meta = {"generator": "kdd-style", "seed": seed, "dim": X.shape[1], "parts": list(parts),
            "train_size": train_size, "attack_count": n_attack, "with_replacement": replaced}
    return Scenario(full[:train_size], labels[:train_size], X, y, truth, meta)


# ---------------------------------------------------------------------------
# CSV and JSON I/O
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def write_stream_csv(path_or_buf, X, labels=None) -> None:
    X = np.asarray(X, dtype=float)
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", encoding="utf-8", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        header = [f"f{i}" for i in range(X.shape[1])]
        w.writerow(header + (["label"] if labels is not None else []))
        for i, row in enumerate(X):
            vals = [_fmt(v) for v in row]
            w.writerow(vals + ([labels[i]] if labels is not None else []))
    finally:
        if own:
            fh.close()


def read_stream_csv(path_or_buf, columns: Sequence[str] | None = None,
                    label_column: str = "label") -> tuple[np.ndarray, list[str] | None]:
    """
    Read samples (and labels, when a label column exists).

    Without ``columns`` every ``f<i>`` column is used in index order;
    otherwise the named columns are selected in the given order.
    """
    own = isinstance(path_or_buf, (str, Path))
    try:
        fh = open(path_or_buf, encoding="utf-8", newline="") if own else path_or_buf
    except OSError as exc:
        raise DataError(f"cannot read {path_or_buf}: {exc}") from exc
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty CSV input") from None
        if columns is None:
            feat = sorted((h for h in header if h.startswith("f") and h[1:].isdigit()), key=lambda h: int(h[1:]))
            if not feat:
                raise DataError("no feature columns named f0..f{D-1} in header")
        else:
            feat = list(columns)
        try:
            idx = [header.index(h) for h in feat]
        except ValueError as exc:
            raise DataError(f"missing column: {exc}") from exc
        lab = header.index(label_column) if label_column in header else None
        rows, labels = [], []
        for n, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[i]) for i in idx])
            except (ValueError, IndexError) as exc:
                raise DataError(f"line {n}: {exc}") from exc
            if lab is not None:
                labels.append(row[lab])
    finally:
        if own:
            fh.close()
    if not rows:
        raise DataError("CSV input has no samples")
    X = np.array(rows, dtype=float)
    if not np.all(np.isfinite(X)):
        raise DataError("CSV input contains non-finite values")
    return X, (labels if lab is not None else None)


def save_scenario(scenario: Scenario, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"train": out / "train.csv", "stream": out / "stream.csv", "truth": out / "truth.json"}
    write_stream_csv(paths["train"], scenario.train_X, scenario.train_y)
    write_stream_csv(paths["stream"], scenario.X, scenario.y)
    paths["truth"].write_text(json.dumps(scenario.truth_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def load_truth(path) -> list[GroundTruth]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return [GroundTruth(g["label"], int(g["onset"]), [int(i) for i in g["members"]]) for g in doc["novel"]]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot read ground truth {path}: {exc}") from exc


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class Standardizer:
    """Per-dimension z-scoring; constant dimensions keep unit scale."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        sd = X.std(axis=0)
        sd[~(sd > 0)] = 1.0
        return cls(X.mean(axis=0), sd)

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Standardizer":
        return cls(np.array(doc["mean"], dtype=float), np.array(doc["scale"], dtype=float))


@dataclass
class ExperimentConfig:
    """
    Flat experiment settings. Keys mirror the usual parameter names; a
    ``None`` value means the derived default (omega = 5 lambda,
    lambda = 1 / (1 - alpha_region), ma = 2 omega).
    """

    alpha_region: float = 0.95
    epsilon: float = 2.0
    min_pts: int = 10
    buffer_capacity: int = 100
    omega: int | None = None
    lambda_: int | None = None
    ma: int | None = None
    significance_p: float = 0.01
    min_fill: int | None = None
    alarm_on: str = "ma"
    seed: int = 0
    model_seed: int = 0
    j_max: int = 10
    cluster_j_max: int = 3
    fuse_threshold: float = 0.5
    cells: str = "theoretical"
    standardize: bool = True
    csnd_eta: float = 0.001
    csnd_threshold: float = 0.2
    csnd_window: int = 500
    mu: float = 1000.0
    novelty_unready: str = "exclude"

    _ALIASES = {"lambda": "lambda_"}

    def __post_init__(self):
        if self.cells not in ("theoretical", "learned"):
            raise InvalidParameterError("cells must be 'theoretical' or 'learned'")
        if self.novelty_unready not in ("exclude", "zero"):
            raise InvalidParameterError("novelty_unready must be 'exclude' or 'zero'")

    @classmethod
    def keys(cls) -> list[str]:
        return ["lambda" if f.name == "lambda_" else f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "ExperimentConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            name = cls._ALIASES.get(key, key)
            if name not in kinds:
                raise InvalidParameterError(f"unknown configuration key {key!r}")
            kw[name] = _coerce(name, str(kinds[name]), raw)
        return cls(**kw)

    def ldr_config(self) -> LdrConfig:
        return LdrConfig(self.alpha_region, self.epsilon, self.min_pts, self.buffer_capacity)

    def hdr_config(self) -> HdrConfig:
        lam = self.lambda_ if self.lambda_ is not None else int(round(1.0 / (1.0 - self.alpha_region)))
        return HdrConfig(n_cells=lam, omega=self.omega, ma_span=self.ma,
                         significance=self.significance_p, min_fill=self.min_fill, alarm_on=self.alarm_on)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        return d


def _coerce(name: str, kind: str, raw):
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none", "default")):
        if "None" not in kind:
            raise InvalidParameterError(f"{name} needs a value")
        return None
    try:
        if kind.startswith("bool"):
            if isinstance(raw, bool):
                return raw
            s = str(raw).strip().lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind.startswith("int"):
            f = float(raw)
            if f != int(f):
                raise ValueError(f"not an integer: {raw!r}")
            return int(f)
        if kind.startswith("float"):
            return float(raw)
        return str(raw).strip()
    except ValueError as exc:
        raise InvalidParameterError(f"bad value for {name}: {exc}") from exc


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameterError(f"config line {n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise InvalidParameterError(f"config line {n}: empty key")
        out[key] = value
    return out


def load_config(path=None, overrides: Mapping[str, object] | None = None) -> ExperimentConfig:
    values: dict[str, object] = {}
    if path is not None:
        try:
            values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
        except OSError as exc:
            raise InvalidParameterError(f"cannot read config {path}: {exc}") from exc
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_mapping(values)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def train_initial_model(X, labels, config: ExperimentConfig, seed: int | None = None) -> MixtureModel:
    """Fit a mixture on ``X`` and attach class conclusions from ``labels``."""
    X = np.asarray(X, dtype=float)
    labels = list(labels) if labels is not None else [BACKGROUND_LABEL] * len(X)
    cfg = TrainConfig(j_max=config.j_max, seed=config.model_seed if seed is None else seed)
    model = train(X, cfg)
    return fit_conclusions(model, X, labels)


def build_detector(kind: str, model: MixtureModel, config: ExperimentConfig, seed: int | None = None,
                   train_samples=None):
    seed = config.seed if seed is None else seed
    if kind == "candies":
        return Candies(model, config.ldr_config(), config.hdr_config(), seed=seed,
                       cluster_training=TrainConfig(j_max=config.cluster_j_max),
                       fuse_threshold=config.fuse_threshold, mu=config.mu,
                       train_samples=train_samples if config.cells == "learned" else None,
                       novelty_unready=config.novelty_unready)
    if kind == "csnd":
        return Csnd(model, alpha=config.alpha_region, eta=config.csnd_eta, threshold=config.csnd_threshold,
                    window=config.csnd_window, seed=seed, retraining=TrainConfig(j_max=config.j_max),
                    fuse_threshold=config.fuse_threshold)
    if kind == "static":
        return Static(model)
    raise InvalidParameterError(f"unknown detector {kind!r}; choose from {', '.join(DETECTORS)}")


def replay(detector, X, labels=None) -> tuple[list[dict], list[dict]]:
    """Feed a stream through ``detector``; returns telemetry records and events."""
    telemetry = []
    for i, x in enumerate(np.asarray(X, dtype=float)):
        rec = dict(detector.step(x).record)
        rec["label"] = None if labels is None else labels[i]
        telemetry.append(rec)
    return telemetry, [e.to_dict() for e in detector.events]


@dataclass
class FoldResult:
    telemetry: list[dict]
    events: list[dict]
    metrics: dict


@dataclass
class ExperimentReport:
    detector: str
    folds: list[FoldResult]
    summary: dict


def run_experiment(scenario: Scenario, detector: str = "candies", config: ExperimentConfig | None = None,
                   folds: int = 1) -> ExperimentReport:
    """
    Adaptive detectors start from a model of the training slice and replay
    the test stream; each fold uses seeds offset by the fold index. The
    static baseline is trained on all classes with stratified folds over
    the test stream (``folds == 1`` trains on the whole stream).
    """
    config = config or ExperimentConfig()
    if detector not in DETECTORS:
        raise InvalidParameterError(f"unknown detector {detector!r}")
    if folds < 1:
        raise InvalidParameterError("folds must be at least 1")
    if scenario.train_X.shape[1] != scenario.dim:
        raise DataError("training slice and stream dimensionality differ")
    results = []
    if detector == "static":
        results = _run_static(scenario, config, folds)
    else:
        for k in range(folds):
            tf = Standardizer.fit(scenario.train_X) if config.standardize else Standardizer.identity(scenario.dim)
            Xtr = tf.transform(scenario.train_X)
            model = train_initial_model(Xtr, scenario.train_y, config, seed=config.model_seed + k)
            det = build_detector(detector, model, config, seed=config.seed + k, train_samples=Xtr)
            tel, ev = replay(det, tf.transform(scenario.X), scenario.y)
            results.append(FoldResult(tel, ev, evaluate(tel, scenario.novel)))
    return ExperimentReport(detector, results, summarize([r.metrics for r in results]))


def _run_static(scenario: Scenario, config: ExperimentConfig, folds: int) -> list[FoldResult]:
    y = np.array(scenario.y, dtype=object)
    n = len(y)
    if folds == 1:
        splits = [(np.arange(n), np.arange(n))]
    else:
        skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=config.seed)
        splits = list(skf.split(np.zeros(n), y))
    results = []
    for k, (tr, te) in enumerate(splits):
        Xall = np.vstack([scenario.train_X, scenario.X[tr]])
        yall = list(scenario.train_y) + [scenario.y[i] for i in tr]
        tf = Standardizer.fit(Xall) if config.standardize else Standardizer.identity(scenario.dim)
        model = train_initial_model(tf.transform(Xall), yall, config, seed=config.model_seed + k)
        det = Static(model)
        te = np.sort(te)
        tel, ev = replay(det, tf.transform(scenario.X[te]), [scenario.y[i] for i in te])
        for rec, i in zip(tel, te):
            rec["step"] = int(i)
        keep = set(te.tolist())
        truth = [GroundTruth(g.label, g.onset, [m for m in g.members if m in keep]) for g in scenario.novel]
        results.append(FoldResult(tel, ev, evaluate(tel, truth)))
    return results


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def label_mapping(telemetry: Sequence[dict], novel_labels: Sequence[str]) -> dict[str, str]:
    """
    Map every auto-generated label to the novel process it overlaps most.

    Auto labels are the ones announced by adaptation records. A label that
    never co-occurs with a novel process stays unmapped.
    """
    auto = {r["adapted_label"] for r in telemetry if r.get("adapted_label")}
    novel = set(novel_labels)
    mapping = {}
    for a in sorted(auto):
        counts: dict[str, int] = {}
        for r in telemetry:
            if r["predicted"] == a and r.get("label") in novel:
                counts[r["label"]] = counts.get(r["label"], 0) + 1
        if counts:
            mapping[a] = max(sorted(counts), key=lambda k: counts[k])
    return mapping


def evaluate(telemetry: Sequence[dict], truth: Sequence[GroundTruth], noise_label: str = NOISE_LABEL) -> dict:
    """
    Metrics recomputable from telemetry and ground truth alone.

    Accuracy ignores samples whose true label is ``noise_label``. The delay
    of a novel process is the number of its samples seen up to and
    including the first adaptation at or after its onset that inserted a
    label mapped to that process.
    """
    novel_labels = [g.label for g in truth]
    mapping = label_mapping(telemetry, novel_labels)
    y_true = [r.get("label") for r in telemetry]
    y_pred = [mapping.get(r["predicted"], r["predicted"]) for r in telemetry]
    scored = [i for i, t in enumerate(y_true) if t is not None and t != noise_label]
    accuracy = (sum(y_true[i] == y_pred[i] for i in scored) / len(scored)) if scored else None

    f1 = {}
    for lab in novel_labels:
        t = [y_true[i] == lab for i in scored]
        p = [y_pred[i] == lab for i in scored]
        f1[lab] = float(f1_score(t, p, zero_division=0.0)) if any(t) else None

    adapt_steps = [r["step"] for r in telemetry if r.get("adaptation")]
    delays = {}
    for g in truth:
        hits = [r["step"] for r in telemetry
                if r.get("adaptation") and r["step"] >= g.onset
                and mapping.get(r.get("adapted_label")) == g.label]
        delays[g.label] = sum(1 for m in g.members if m <= hits[0]) if hits else None
    f1_vals = [v for v in f1.values() if v is not None]
    return {
        "n_samples": len(telemetry),
        "accuracy": accuracy,
        "f1_novel": (sum(f1_vals) / len(f1_vals)) if f1_vals else None,
        "f1_per_process": f1,
        "adaptations": len(adapt_steps),
        "inserted_components": int(sum(r.get("inserted") or 0 for r in telemetry)),
        "hdr_alarms": int(sum(1 for r in telemetry if r.get("hdr_alarm"))),
        "delays": delays,
        "label_mapping": mapping,
    }


def summarize(metrics: Sequence[dict]) -> dict:
    """Average scalar metrics over folds; delays are averaged over the folds that detected."""
    out: dict = {"folds": len(metrics)}
    for key in ("accuracy", "f1_novel", "adaptations", "inserted_components", "hdr_alarms"):
        vals = [m[key] for m in metrics if m.get(key) is not None]
        out[key] = (sum(vals) / len(vals)) if vals else None
    delays = [d for m in metrics for d in m["delays"].values() if d is not None]
    out["mean_delay"] = (sum(delays) / len(delays)) if delays else None
    out["undetected"] = sum(1 for m in metrics for d in m["delays"].values() if d is None)
    return out


def plot_rows(telemetry: Sequence[dict]) -> list[dict]:
    """Tidy rows (step, series, component, value) for external plotting."""
    rows = []
    for r in telemetry:
        s = r["step"]
        if r.get("component") is not None:
            j = r["component"]
            for series in ("t", "t_ma", "critical", "nu_j"):
                if r.get(series) is not None:
                    rows.append({"step": s, "series": series, "component": j, "value": r[series]})
        for series in ("nu_2snd", "nu_avg", "state"):
            if r.get(series) is not None:
                rows.append({"step": s, "series": series, "component": "", "value": r[series]})
    return rows


def write_plot_csv(path_or_buf, rows: Sequence[dict]) -> None:
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", encoding="utf-8", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "series", "component", "value"])
        for r in rows:
            w.writerow([r["step"], r["series"], r["component"], _fmt(r["value"])])
    finally:
        if own:
            fh.close()


def scenario_bytes(scenario: Scenario) -> bytes:
    """Canonical serialization used to compare scenarios."""
    buf = io.StringIO()
    write_stream_csv(buf, scenario.train_X, scenario.train_y)
    write_stream_csv(buf, scenario.X, scenario.y)
    buf.write(json.dumps(scenario.truth_dict(), sort_keys=True))
    return buf.getvalue().encode("utf-8")


def default_clouds_config() -> CloudsConfig:
    """
    Three overlapping blobs on a triangle; two compact novel processes sit
    between blob pairs and appear at test steps of about 1000 and 2000.
    """
    cov = [[9.0, 0.0], [0.0, 9.0]]
    h = 6.0 * math.sqrt(3.0)
    blobs = [
        Blob([0.0, 0.0], cov, 1.0, "c0"),
        Blob([12.0, 0.0], cov, 1.0, "c1"),
        Blob([6.0, h], cov, 1.0, "c2"),
    ]
    tight = [[0.25, 0.0], [0.0, 0.25]]
    novel = [
        NovelSpec([6.0, 0.0], tight, 200, 1000, 500, "n0"),
        NovelSpec([9.0, h / 2.0], tight, 200, 2000, 500, "n1"),
    ]
    return CloudsConfig(blobs, 2000, 3000, novel)
