"""Road-surface class probabilities to a friction prior, and the peak warm start.

The image backbone is an external concern: this module ingests logits or
probability vectors (one per camera frame) and maps them onto a basis of
nominal friction coefficients.  ``stub_classify`` is a nearest-centroid
stand-in that lets the logit -> probability -> friction chain run end to end.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import D_BOUNDS
from .errors import ConfigError, ContractError, DomainError

SOURCES = ("ingested", "stub", "manual")


@dataclass(frozen=True)
class FrictionBasis:
    labels: tuple[str, ...]
    mu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).ravel()
        labels = tuple(self.labels)
        if len(labels) != mu.size:
            raise ContractError("basis labels and coefficients differ in length")
        if mu.size < 2:
            raise ConfigError("friction basis needs at least two classes")
        if len(set(labels)) != len(labels):
            raise ConfigError("friction basis labels must be unique")
        if not np.all((mu > 0) & (mu <= D_BOUNDS[1])):
            raise ConfigError("basis friction coefficients must lie in (0, 1.6]")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "mu", mu)

    def __len__(self):
        return self.mu.size

    @classmethod
    def default(cls) -> "FrictionBasis":
        return cls(("ice", "wet", "dry-asphalt", "high-grip"), np.array([0.2, 0.5, 0.8, 1.0]))

    def to_json(self) -> str:
        return json.dumps([{"label": l, "mu": float(m)} for l, m in zip(self.labels, self.mu)])

    @classmethod
    def from_json(cls, text: str) -> "FrictionBasis":
        entries = json.loads(text)
        if not isinstance(entries, list):
            raise ContractError("basis sidecar must be a JSON list of {label, mu} objects")
        return cls(tuple(str(e["label"]) for e in entries), np.array([float(e["mu"]) for e in entries]))


@dataclass(frozen=True)
class FrictionPrior:
    mu_hat: float
    source: str = "ingested"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigError(f"prior source must be one of {SOURCES}")
        if not np.isfinite(self.mu_hat) or self.mu_hat <= 0:
            raise DomainError(f"mu_hat must be positive and finite, got {self.mu_hat!r}")


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("logits must be finite")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def expected_friction(p, basis: FrictionBasis, source: str = "ingested") -> FrictionPrior:
    """Probability-weighted mean of the basis coefficients."""
    p = np.asarray(p, dtype=float).ravel()
    if p.size != len(basis):
        raise ContractError(f"probability vector has {p.size} entries, basis has {len(basis)}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise DomainError("probabilities must be non-negative and sum to 1")
    mu_hat = float(p @ basis.mu)
    # rounding can push a one-hot-ish expectation a hair outside the hull
    mu_hat = min(max(mu_hat, float(basis.mu.min())), float(basis.mu.max()))
    return FrictionPrior(mu_hat, source)


def aggregate_priors(priors) -> FrictionPrior:
    """Median over a stream of per-frame priors."""
    priors = list(priors)
    if not priors:
        raise ContractError("no priors to aggregate")
    return FrictionPrior(float(np.median([q.mu_hat for q in priors])), priors[0].source)


def warm_start_D(prior: FrictionPrior) -> float:
    """Initial Magic Formula peak factor, clamped into the valid D range."""
    lo = np.nextafter(D_BOUNDS[0], 1.0)
    return float(min(max(prior.mu_hat, lo), D_BOUNDS[1]))


def stub_classify(texture, centroids, beta: float = 10.0) -> np.ndarray:
    """Nearest-centroid logits ``-beta * L1(texture, centroid_i)``."""
    texture = np.asarray(texture, dtype=float).ravel()
    centroids = np.atleast_2d(np.asarray(centroids, dtype=float))
    if centroids.shape[1] != texture.size:
        raise ContractError("texture histogram and centroids differ in bin count")
    return -beta * np.abs(centroids - texture).sum(axis=1)


def read_prior_file(csv_path, basis_path=None) -> tuple[list[FrictionPrior], FrictionBasis]:
    """Per-frame priors from a ``p_1,...,p_N`` CSV plus its JSON basis sidecar.

    Without a sidecar the four-class default basis is assumed.
    """
    if basis_path is None:
        basis = FrictionBasis.default()
    else:
        basis = FrictionBasis.from_json(Path(basis_path).read_text())
    reader = csv.reader(io.StringIO(Path(csv_path).read_text()))
    header = [h.strip() for h in next(reader)]
    expected = [f"p_{i + 1}" for i in range(len(basis))]
    if header != expected:
        raise ContractError(f"prior header must be {','.join(expected)}")
    priors = [expected_friction(np.array([float(v) for v in row]), basis) for row in reader if row]
    if not priors:
        raise ContractError("prior file has no frames")
    return priors, basis


def write_prior_file(csv_path, basis_path, probabilities, basis: FrictionBasis) -> None:
    probabilities = np.atleast_2d(probabilities)
    lines = [",".join(f"p_{i + 1}" for i in range(len(basis)))]
    lines += [",".join(repr(float(v)) for v in row) for row in probabilities]
    Path(csv_path).write_text("\n".join(lines) + "\n")
    Path(basis_path).write_text(basis.to_json() + "\n")
