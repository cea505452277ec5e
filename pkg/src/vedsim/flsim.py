"""Synthetic federated learning on quadratic losses with known L, mu and G.

Every vehicle owns ``f_m(w) = 0.5 (w - w_m)^T A_m (w - w_m)``; the global
loss is the dataset-size weighted mixture over the whole vehicle pool, so its
minimiser and gradient are available in closed form. Local optima are drawn
close together so that the client spread never eats more than a small share
of the gradient-variance budget G^2.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ParameterError


@dataclass(frozen=True)
class SyntheticProblem:
    dimension: int
    local_optima: Mapping[int, np.ndarray]
    curvatures: Mapping[int, np.ndarray]
    dataset_sizes: Mapping[int, int]
    noise_std: float
    mu: float
    L_smooth: float
    G_bound: float

    def __post_init__(self):
        if not 0 < self.mu <= self.L_smooth:
            raise ConfigurationError("need 0 < mu <= L")
        if set(self.local_optima) != set(self.curvatures) or set(self.local_optima) != set(self.dataset_sizes):
            raise ConfigurationError("optima, curvatures and dataset sizes must share ids")
        if not self.local_optima:
            raise ConfigurationError("empty vehicle pool")

    @property
    def ids(self):
        return sorted(self.local_optima)

    def _weights(self):
        ids = self.ids
        d = np.array([self.dataset_sizes[m] for m in ids], dtype=float)
        return ids, d / d.sum()

    def local_loss(self, m, w) -> float:
        r = np.asarray(w, dtype=float) - self.local_optima[m]
        return 0.5 * float(r @ self.curvatures[m] @ r)

    def local_grad(self, m, w) -> np.ndarray:
        return self.curvatures[m] @ (np.asarray(w, dtype=float) - self.local_optima[m])

    def loss(self, w) -> float:
        ids, p = self._weights()
        return float(sum(pi * self.local_loss(m, w) for m, pi in zip(ids, p)))

    def grad(self, w) -> np.ndarray:
        ids, p = self._weights()
        return sum(pi * self.local_grad(m, w) for m, pi in zip(ids, p))

    def optimum(self) -> np.ndarray:
        ids, p = self._weights()
        H = sum(pi * self.curvatures[m] for m, pi in zip(ids, p))
        rhs = sum(pi * self.curvatures[m] @ self.local_optima[m] for m, pi in zip(ids, p))
        return np.linalg.solve(H, rhs)

    def optimal_loss(self) -> float:
        return self.loss(self.optimum())


def random_curvature(dim: int, mu: float, L: float, rng) -> np.ndarray:
    """SPD matrix with spectrum spread evenly over [mu, L], both ends included."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eig = np.linspace(mu, L, dim) if dim > 1 else np.array([mu])
    A = (q * eig) @ q.T
    return 0.5 * (A + A.T)


def build_problem(ids: Iterable[int], rng, dimension: int = 16, mu: float = 0.2, L: float = 1.0,
                  G: float = 1.0, batch_size: int = 32, dataset_sizes: Optional[Mapping[int, int]] = None,
                  spread: float = 0.5) -> SyntheticProblem:
    """Quadratic pool sharing one curvature matrix.

    Half of G^2 goes to per-sample gradient noise. The client spread is sized
    so that E||A (w_m - mean)||^2 = spread * G^2 / (2 B), small enough that it
    averages like per-sample noise even though it does not shrink with B.
    """
    ids = sorted(ids)
    if not ids:
        raise ConfigurationError("need at least one vehicle")
    if dimension < 1 or batch_size < 1 or G < 0 or spread < 0:
        raise ConfigurationError("bad synthetic problem parameters")
    A = random_curvature(dimension, mu, L, rng)
    centre = rng.standard_normal(dimension)
    tau = np.sqrt(spread * G ** 2 / (2 * batch_size) / np.trace(A @ A))
    optima = {m: centre + tau * rng.standard_normal(dimension) for m in ids}
    sizes = dict(dataset_sizes) if dataset_sizes is not None else {m: 1250 for m in ids}
    return SyntheticProblem(
        dimension=dimension, local_optima=optima, curvatures={m: A for m in ids},
        dataset_sizes={m: int(sizes[m]) for m in ids},
        noise_std=float(np.sqrt(G ** 2 / (2 * dimension))), mu=mu, L_smooth=L, G_bound=G)


@dataclass(frozen=True)
class ModelState:
    weights: np.ndarray
    round: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.weights)):
            raise ParameterError("model weights must be finite")


@dataclass(frozen=True)
class RoundLearningRecord:
    participating: frozenset
    loss_before: float
    loss_after: float
    grad_norm_sq: float
    eta: float
    B: int

    @property
    def skipped(self) -> bool:
        return not self.participating


def local_sgd(w: ModelState, sov: int, problem: SyntheticProblem, eta: float, B: int, rng) -> np.ndarray:
    """One minibatch SGD step: w - (eta / B) * sum of B noisy sample gradients."""
    if B < 1:
        raise ParameterError("batch size must be >= 1")
    g = problem.local_grad(sov, w.weights)
    if problem.noise_std > 0:
        g = g + problem.noise_std * rng.standard_normal((B, problem.dimension)).mean(axis=0)
    return w.weights - eta * g


def aggregate(locals_: Mapping[int, np.ndarray], successes, dataset_sizes: Mapping[int, int],
              previous: Optional[ModelState] = None) -> ModelState:
    """Dataset-size weighted average over the successful uploads.

    With no success the round is skipped and ``previous`` is returned.
    """
    ok = sorted(set(successes))
    rnd = 0 if previous is None else previous.round + 1
    if not ok:
        if previous is None:
            raise ParameterError("no successful upload and no previous model")
        return ModelState(previous.weights.copy(), rnd)
    d = np.array([dataset_sizes[m] for m in ok], dtype=float)
    W = np.stack([np.asarray(locals_[m], dtype=float) for m in ok])
    return ModelState((d / d.sum()) @ W, rnd)


def training_round(w: ModelState, successes, problem: SyntheticProblem, eta: float, B: int, rng):
    """Local SGD on the successful SOVs, then aggregation. Returns (model, record)."""
    ok = frozenset(successes)
    before = problem.loss(w.weights)
    gns = float(np.sum(problem.grad(w.weights) ** 2))
    locals_ = {m: local_sgd(w, m, problem, eta, B, rng) for m in sorted(ok)}
    new = aggregate(locals_, ok, problem.dataset_sizes, previous=w)
    return new, RoundLearningRecord(ok, before, problem.loss(new.weights), gns, eta, B)


def run_training(problem: SyntheticProblem, w0, success_sets: Sequence, eta: float, B: int, rng):
    w = ModelState(np.asarray(w0, dtype=float).copy(), 0)
    history = []
    for ok in success_sets:
        w, rec = training_round(w, ok, problem, eta, B, rng)
        history.append(rec)
    return w, history


def descent_bound(record: RoundLearningRecord, problem: SyntheticProblem) -> float:
    """Upper bound on the expected one-round loss change; 0 for a skipped round."""
    n = len(record.participating)
    if n == 0:
        return 0.0
    eta, L = record.eta, problem.L_smooth
    return eta * (L * eta / 2 - 1) * record.grad_norm_sq + L * eta ** 2 / 2 * problem.G_bound ** 2 / (record.B * n)


def gap_bound(history: Sequence[RoundLearningRecord], problem: SyntheticProblem, F0_gap: float) -> float:
    """Optimality-gap bound after ``len(history)`` rounds for the realised success counts.

    Evaluated as the recursion gap <- (1 - mu*eta) gap + eta/2 * G^2/(B n),
    which expands to the usual product form. Skipped rounds leave it unchanged.
    """
    gap = float(F0_gap)
    for rec in history:
        if rec.eta > 1.0 / problem.L_smooth * (1 + 1e-12) or rec.eta <= 0:
            raise ParameterError(f"learning rate {rec.eta} must lie in (0, 1/L]")
        n = len(rec.participating)
        if n == 0:
            continue
        gap = (1 - problem.mu * rec.eta) * gap + rec.eta / 2 * problem.G_bound ** 2 / (rec.B * n)
    return gap
