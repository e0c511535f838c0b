"""
Gaussian mixture models with conjugate hyperparameters.

Training uses variational Bayesian EM with a Dirichlet prior over the mixing
coefficients and a Normal-Wishart prior per component. The posterior
hyperparameters are kept on every component; they are what makes it possible
to fuse a freshly trained mixture into an existing one.

A model becomes a classifier once class conclusions (per-component class
probabilities) have been attached with :func:`fit_conclusions`.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.special import digamma

from candies.errors import DataError, InvalidParameterError
from candies.stats import (
    GaussianParams,
    hellinger_distance,
    regularize_covariance,
)

_LOG_2PI = math.log(2.0 * math.pi)
FORMAT_NAME = "candies-mixture"
FORMAT_VERSION = 1
NOVEL_PREFIX = "novel-"


class DegenerateInputWarning(UserWarning):
    """Raised (as a warning) when every component density underflows."""


@dataclass(frozen=True, eq=False)
class Hyper:
    """Posterior hyperparameters of one component.

    ``scale`` is the inverse Wishart scale matrix (the inverse of the Wishart
    ``W``); the expected covariance is ``scale / (dof - D - 1)``.
    """

    count: float
    beta: float
    mean: np.ndarray
    scale: np.ndarray
    dof: float
    alpha: float

    @classmethod
    def from_moments(cls, mean, covariance, count: float) -> "Hyper":
        mean = np.asarray(mean, dtype=float)
        d = mean.shape[0]
        dof = count + d + 2.0
        return cls(
            count=float(count),
            beta=float(count),
            mean=mean.copy(),
            scale=np.asarray(covariance, dtype=float) * (dof - d - 1.0),
            dof=float(dof),
            alpha=float(count),
        )

    def expected_covariance(self) -> np.ndarray:
        d = self.mean.shape[0]
        return self.scale / (self.dof - d - 1.0)


@dataclass(frozen=True, eq=False)
class Component:
    params: GaussianParams
    weight: float
    hyper: Hyper
    conclusion: np.ndarray | None = None
    label: str | None = None


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """Immutable weighted collection of Gaussian components."""

    components: tuple[Component, ...]
    class_labels: tuple[str, ...] = ()
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "class_labels", tuple(self.class_labels))
        dims = {c.params.dim for c in self.components}
        if len(dims) > 1:
            raise DataError(f"components disagree on dimensionality: {sorted(dims)}")

    @classmethod
    def from_gaussians(cls, means, covariances, weights=None, counts=None,
                       n_eff: float = 1000.0, conclusions=None, labels=None,
                       class_labels=()) -> "MixtureModel":
        """Build a model directly from component moments (hyperparameters are synthesized)."""
        means = [np.asarray(m, dtype=float) for m in means]
        j = len(means)
        weights = np.full(j, 1.0 / j) if weights is None else np.asarray(weights, dtype=float)
        weights = weights / weights.sum()
        counts = weights * n_eff if counts is None else np.asarray(counts, dtype=float)
        comps = []
        for i in range(j):
            params = GaussianParams(means[i], covariances[i])
            hyper = Hyper.from_moments(params.mean, params.covariance, counts[i])
            concl = None if conclusions is None else np.asarray(conclusions[i], dtype=float)
            lab = None if labels is None else labels[i]
            comps.append(Component(params, float(weights[i]), hyper, concl, lab))
        return cls(tuple(comps), tuple(class_labels))

    # -- basic properties --------------------------------------------------

    @property
    def dim(self) -> int:
        if not self.components:
            raise InvalidParameterError("empty mixture has no dimensionality")
        return self.components[0].params.dim

    @property
    def n_components(self) -> int:
        return len(self.components)

    def __len__(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def is_classifier(self) -> bool:
        return bool(self.class_labels) and all(c.conclusion is not None for c in self.components)

    @property
    def conclusions(self) -> np.ndarray:
        if not self.is_classifier:
            raise InvalidParameterError("model has no class conclusions")
        return np.vstack([c.conclusion for c in self.components])

    def _stacked(self):
        # (J, D) means, (J, D, D) lower Cholesky factors, (J,) logdets
        if "stacked" not in self._cache:
            means = np.vstack([c.params.mean for c in self.components])
            chols = np.stack([c.params.chol for c in self.components])
            logdets = np.array([c.params.logdet for c in self.components])
            self._cache["stacked"] = (means, chols, logdets)
        return self._cache["stacked"]

    # -- densities ---------------------------------------------------------

    def _check(self, x) -> np.ndarray:
        if not self.components:
            raise InvalidParameterError("empty mixture")
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DataError(f"sample dimension {x.shape[-1]} does not match model dimension {self.dim}")
        return x

    def mahalanobis_sq(self, x) -> np.ndarray:
        """Squared Mahalanobis distance of ``x`` to every component, shape ``(J,)`` or ``(n, J)``."""
        x = self._check(x)
        means, chols, _ = self._stacked()
        diff = x[..., None, :] - means  # (..., J, D)
        if x.ndim == 1:
            z = np.linalg.solve(chols, diff[..., None])[..., 0]
        else:
            z = np.linalg.solve(chols[None], diff[..., None])[..., 0]
        return np.einsum("...d,...d->...", z, z)

    def component_log_densities(self, x, d2=None) -> np.ndarray:
        """Log ``N(x | mu_j, Sigma_j)`` for every component, without mixing weights."""
        if d2 is None:
            d2 = self.mahalanobis_sq(x)
        _, _, logdets = self._stacked()
        return -0.5 * (self.dim * _LOG_2PI + logdets + d2)

    def log_density(self, x) -> float | np.ndarray:
        """Mixture log density, evaluated with log-sum-exp."""
        lw = self.component_log_densities(x) + np.log(self.weights)
        top = np.max(lw, axis=-1, keepdims=True)
        out = np.squeeze(top, -1) + np.log(np.sum(np.exp(lw - top), axis=-1))
        return float(out) if np.ndim(out) == 0 else out

    def responsibilities(self, x, log_dens=None) -> np.ndarray:
        """Posterior probability of each component having generated ``x``."""
        if log_dens is None:
            log_dens = self.component_log_densities(x)
        return _normalize_log(log_dens + np.log(self.weights))

    def classify(self, x, log_dens=None) -> tuple[str, np.ndarray]:
        """Return the MAP class label and the class posterior vector."""
        if not self.is_classifier:
            raise InvalidParameterError("model is not classifier-enabled; call fit_conclusions first")
        gamma = self.responsibilities(x, log_dens)
        post = gamma @ self.conclusions
        post = post / post.sum(axis=-1, keepdims=True)
        idx = np.argmax(post, axis=-1)
        if post.ndim == 1:
            return self.class_labels[int(idx)], post
        return [self.class_labels[int(i)] for i in idx], post

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        comps = []
        for c in self.components:
            h = c.hyper
            comps.append({
                "weight": c.weight,
                "mean": c.params.mean.tolist(),
                "covariance": c.params.covariance.reshape(-1).tolist(),
                "label": c.label,
                "conclusion": None if c.conclusion is None else c.conclusion.tolist(),
                "hyper": {
                    "count": h.count,
                    "beta": h.beta,
                    "mean": h.mean.tolist(),
                    "scale": h.scale.reshape(-1).tolist(),
                    "dof": h.dof,
                    "alpha": h.alpha,
                },
            })
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "dim": self.dim if self.components else None,
            "class_labels": list(self.class_labels),
            "components": comps,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MixtureModel":
        if doc.get("format") != FORMAT_NAME:
            raise DataError("not a mixture model document")
        if doc.get("version") != FORMAT_VERSION:
            raise DataError(f"unsupported model version {doc.get('version')}")
        d = doc["dim"]
        comps = []
        for c in doc["components"]:
            h = c["hyper"]
            hyper = Hyper(
                count=float(h["count"]),
                beta=float(h["beta"]),
                mean=np.array(h["mean"], dtype=float),
                scale=np.array(h["scale"], dtype=float).reshape(d, d),
                dof=float(h["dof"]),
                alpha=float(h["alpha"]),
            )
            params = GaussianParams(np.array(c["mean"]), np.array(c["covariance"]).reshape(d, d))
            concl = None if c["conclusion"] is None else np.array(c["conclusion"], dtype=float)
            comps.append(Component(params, float(c["weight"]), hyper, concl, c["label"]))
        return cls(tuple(comps), tuple(doc["class_labels"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MixtureModel":
        return cls.from_dict(json.loads(text))


def _normalize_log(lw: np.ndarray) -> np.ndarray:
    lw = np.asarray(lw, dtype=float)
    top = np.max(lw, axis=-1, keepdims=True)
    bad = ~np.isfinite(top)
    if np.any(bad):
        warnings.warn("all component densities underflow; using uniform responsibilities",
                      DegenerateInputWarning, stacklevel=3)
        top = np.where(bad, 0.0, top)
    p = np.exp(lw - top)
    total = p.sum(axis=-1, keepdims=True)
    uniform = np.full_like(p, 1.0 / p.shape[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where((total > 0) & np.isfinite(total), p / total, uniform)
    return p


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    """Settings for :func:`train`.

    ``prior_strength`` is the Normal-Wishart mean-precision prior (``beta_0``),
    ``weight_concentration`` the symmetric Dirichlet parameter, and
    ``covariance_prior_scale`` scales the per-dimension data variance to form
    the prior expected covariance. The number of initial components is capped
    so that each starts with at least ``2 * (D + 2)`` samples.
    """

    j_max: int = 10
    prior_strength: float = 1e-3
    weight_concentration: float = 1e-3
    covariance_prior_scale: float = 1.0
    max_iter: int = 1000
    tol: float = 1e-8
    seed: int = 0
    prune_floor: float | None = None
    kmeans_iter: int = 10
    min_samples_per_component: int | None = None

    @property
    def floor(self) -> float:
        return self.prune_floor if self.prune_floor is not None else 1.0 / (10.0 * self.j_max)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator, n_iter: int) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    centers = np.array(centers)
    assign = np.zeros(n, dtype=int)
    for _ in range(n_iter):
        dist = ((X[:, None, :] - centers[None]) ** 2).sum(-1)
        assign = np.argmin(dist, axis=1)
        for j in range(k):
            members = X[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return assign


def train(samples, config: TrainConfig | None = None, **overrides) -> MixtureModel:
    """
    Fit a Gaussian mixture with variational Bayesian EM.

    Components whose expected mixing weight falls below the prune floor are
    removed during the iterations; the surviving weights are renormalized.

    Parameters
    ----------
    samples: array-like, shape (n, D)
        Training data; at least ``D + 2`` finite samples.
    config: TrainConfig, optional
        Training settings; keyword overrides are applied on top.

    Returns
    -------
    MixtureModel
        Unlabeled model (no conclusions) carrying posterior hyperparameters.
    """
    cfg = replace(config or TrainConfig(), **overrides)
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2:
        raise DataError("training samples must form a 2-D array")
    n, d = X.shape
    if n < d + 2:
        raise DataError(f"need at least {d + 2} samples for D={d}, got {n}")
    if not np.all(np.isfinite(X)):
        raise DataError("training samples contain non-finite values")
    if cfg.j_max < 1:
        raise InvalidParameterError("j_max must be at least 1")

    rng = np.random.default_rng(cfg.seed)
    per_comp = cfg.min_samples_per_component or 2 * (d + 2)
    k = max(1, min(cfg.j_max, n // per_comp))
    resp = np.zeros((n, k))
    resp[np.arange(n), _kmeans_pp(X, k, rng, cfg.kmeans_iter)] = 1.0

    m0 = X.mean(axis=0)
    var = X.var(axis=0)
    var = np.where(var > 0, var, max(float(var.max()), 1.0))
    nu0 = d + 2.0
    beta0 = cfg.prior_strength
    alpha0 = cfg.weight_concentration
    psi0 = np.diag(var) * cfg.covariance_prior_scale * (nu0 - d - 1.0)

    def m_step(resp):
        nk = resp.sum(axis=0) + 1e-10
        xbar = (resp.T @ X) / nk[:, None]
        scatter = np.empty((len(nk), d, d))
        for j in range(len(nk)):
            diff = X - xbar[j]
            scatter[j] = (resp[:, j, None] * diff).T @ diff
        beta = beta0 + nk
        mean = (beta0 * m0 + nk[:, None] * xbar) / beta[:, None]
        dm = xbar - m0
        scale = psi0 + scatter + (beta0 * nk / beta)[:, None, None] * np.einsum("ji,jk->jik", dm, dm)
        scale = 0.5 * (scale + np.transpose(scale, (0, 2, 1)))
        return nk, beta, mean, scale, nu0 + nk, alpha0 + nk

    prev = None
    for _ in range(cfg.max_iter):
        nk, beta, mean, scale, nu, alpha = m_step(resp)
        keep = alpha / alpha.sum() >= cfg.floor
        if not np.any(keep):
            keep[np.argmax(alpha)] = True
        if not np.all(keep):
            resp = resp[:, keep]
            resp /= np.maximum(resp.sum(axis=1, keepdims=True), 1e-300)
            prev = None
            continue

        # E-step
        e_log_pi = digamma(alpha) - digamma(alpha.sum())
        log_rho = np.empty((n, len(nk)))
        for j in range(len(nk)):
            chol = np.linalg.cholesky(scale[j])
            logdet_scale = 2.0 * np.sum(np.log(np.diag(chol)))
            e_logdet_prec = (np.sum(digamma(0.5 * (nu[j] + 1.0 - np.arange(1, d + 1))))
                             + d * math.log(2.0) - logdet_scale)
            z = np.linalg.solve(chol, (X - mean[j]).T)
            quad = d / beta[j] + nu[j] * np.einsum("ij,ij->j", z, z)
            log_rho[:, j] = e_log_pi[j] + 0.5 * e_logdet_prec - 0.5 * d * _LOG_2PI - 0.5 * quad
        resp = _normalize_log(log_rho)
        if prev is not None and prev.shape == resp.shape and np.max(np.abs(resp - prev)) < cfg.tol:
            break
        prev = resp

    nk, beta, mean, scale, nu, alpha = m_step(resp)
    keep = alpha / alpha.sum() >= cfg.floor
    if not np.any(keep):
        keep[np.argmax(alpha)] = True
    idx = np.flatnonzero(keep)
    total_alpha = alpha[idx].sum()
    comps = []
    for j in idx:
        cov = regularize_covariance(scale[j] / (nu[j] - d - 1.0))
        hyper = Hyper(float(nk[j]), float(beta[j]), mean[j].copy(), scale[j].copy(),
                      float(nu[j]), float(alpha[j]))
        comps.append(Component(GaussianParams(mean[j], cov), float(alpha[j] / total_alpha), hyper))
    return MixtureModel(tuple(comps))


# ---------------------------------------------------------------------------
# classifier
# ---------------------------------------------------------------------------

def fit_conclusions(model: MixtureModel, samples, labels: Sequence,
                    class_labels: Sequence[str] | None = None) -> MixtureModel:
    """
    Attach class conclusions: ``xi[j, c]`` is the share of component ``j``'s
    responsibility mass that falls on samples labeled ``c``.
    """
    X = np.asarray(samples, dtype=float)
    labels = [str(lab) for lab in labels]
    if len(labels) != len(X):
        raise DataError("labels and samples differ in length")
    if class_labels is None:
        class_labels = sorted(set(labels))
    class_labels = tuple(str(c) for c in class_labels)
    lookup = {c: i for i, c in enumerate(class_labels)}
    unknown = set(labels) - set(lookup)
    if unknown:
        raise DataError(f"labels not in class_labels: {sorted(unknown)}")
    onehot = np.zeros((len(X), len(class_labels)))
    onehot[np.arange(len(X)), [lookup[lab] for lab in labels]] = 1.0

    gamma = model.responsibilities(X)
    nj = gamma.sum(axis=0)
    mass = gamma.T @ onehot
    comps = []
    for j, c in enumerate(model.components):
        if nj[j] <= 0:
            warnings.warn(f"component {j} has no responsibility mass; using a uniform conclusion",
                          stacklevel=2)
            concl = np.full(len(class_labels), 1.0 / len(class_labels))
        else:
            concl = mass[j] / nj[j]
            concl = concl / concl.sum()
        label = c.label if c.label is not None else class_labels[int(np.argmax(concl))]
        comps.append(replace(c, conclusion=concl, label=label))
    return MixtureModel(tuple(comps), class_labels)


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------

def next_novel_label(existing: Iterable[str]) -> str:
    taken = set(existing)
    k = 1
    while f"{NOVEL_PREFIX}{k}" in taken:
        k += 1
    return f"{NOVEL_PREFIX}{k}"


def merge_hyper(a: Hyper, b: Hyper) -> Hyper:
    """Combine two components' hyperparameters by effective-count weighting."""
    beta = a.beta + b.beta
    mean = (a.beta * a.mean + b.beta * b.mean) / beta
    dm = a.mean - b.mean
    scale = a.scale + b.scale + (a.beta * b.beta / beta) * np.outer(dm, dm)
    return Hyper(
        count=a.count + b.count,
        beta=beta,
        mean=mean,
        scale=0.5 * (scale + scale.T),
        dof=a.dof + b.dof,
        alpha=a.alpha + b.alpha,
    )


@dataclass
class FusionResult:
    model: MixtureModel
    inserted: list[int]
    merged: list[int]
    dropped: int = 0


def fuse_detailed(base: MixtureModel, novel: MixtureModel, fuse_threshold: float = 0.5,
                  *, label: str | None = None, fixed_base: bool = False) -> FusionResult:
    """:func:`fuse` that also reports which components were inserted or merged.

    With ``fixed_base`` the base components are never modified: novel
    components that overlap a base component are discarded instead of merged.
    """
    if not novel.components:
        return FusionResult(base, [], [])
    if base.components and base.dim != novel.dim:
        raise DataError(f"dimension mismatch: {base.dim} vs {novel.dim}")

    comps = list(base.components)
    n_base = len(comps)
    merged: list[int] = []
    to_insert: list[Component] = []
    dropped = 0
    for nc in novel.components:
        if n_base:
            dists = [hellinger_distance(comps[i].params, nc.params) for i in range(n_base)]
            best = int(np.argmin(dists))
        if n_base and dists[best] < fuse_threshold:
            if fixed_base:
                dropped += 1
                continue
            target = comps[best]
            hyper = merge_hyper(target.hyper, nc.hyper)
            params = GaussianParams(hyper.mean, regularize_covariance(hyper.expected_covariance()))
            comps[best] = replace(target, params=params, hyper=hyper)
            merged.append(best)
        else:
            to_insert.append(nc)

    class_labels = list(base.class_labels)
    classifier = base.is_classifier
    new_label = None
    if to_insert:
        new_label = label or next_novel_label(class_labels + [c.label for c in comps if c.label])
        if classifier and new_label not in class_labels:
            class_labels.append(new_label)
    n_classes = len(class_labels)

    out = []
    for c in comps:
        concl = c.conclusion
        if classifier and concl is not None and len(concl) < n_classes:
            concl = np.concatenate([concl, np.zeros(n_classes - len(concl))])
        out.append((c, concl))
    inserted = []
    for nc in to_insert:
        concl = None
        if classifier:
            concl = np.zeros(n_classes)
            concl[class_labels.index(new_label)] = 1.0
        inserted.append(len(out))
        out.append((replace(nc, label=new_label), concl))

    alphas = np.array([c.hyper.alpha for c, _ in out])
    weights = alphas / alphas.sum()
    final = tuple(replace(c, weight=float(w), conclusion=concl)
                  for (c, concl), w in zip(out, weights))
    return FusionResult(MixtureModel(final, tuple(class_labels)), inserted, merged, dropped)


def fuse(base: MixtureModel, novel: MixtureModel, fuse_threshold: float = 0.5, **kwargs) -> MixtureModel:
    """
    Fuse ``novel`` into ``base``.

    Each novel component is compared with the base component at the smallest
    Hellinger distance. Below ``fuse_threshold`` the two are merged
    (hyperparameters combined), otherwise the novel component is inserted
    under a fresh auto-generated label. Mixing coefficients are recomputed
    from the Dirichlet parameters so that they sum to one.
    """
    return fuse_detailed(base, novel, fuse_threshold, **kwargs).model
