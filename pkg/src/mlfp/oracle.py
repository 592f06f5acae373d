"""Exact ground truth for finite models by Picard iteration.

Expectations are exact sums over the probability rows, accumulated left to
right over next states.  Finite models carry the weight w = 1, so the
weighted sup norm is the plain sup norm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FiniteControlModel, FiniteModel, FiniteStoppingModel

MAX_ITERATIONS = 1_000_000


@dataclass(frozen=True)
class QTable:
    values: np.ndarray
    residual: float
    error_certificate: float
    iterations: int = 0


def _finite(model) -> FiniteModel:
    if isinstance(model, FiniteControlModel):
        return model.finite
    if isinstance(model, FiniteModel):
        return model
    raise TypeError(f"expected a finite model, got {type(model).__name__}")


def _expect(probs: np.ndarray, v: np.ndarray) -> np.ndarray:
    """sum_j probs[..., j] * v[j], added left to right in j."""
    out = probs[..., 0] * v[0]
    for j in range(1, v.shape[0]):
        out = out + probs[..., j] * v[j]
    return out


def bellman_step(model, q: np.ndarray) -> np.ndarray:
    fm = _finite(model)
    return fm.rewards + fm.discount * _expect(fm.transitions, np.max(q, axis=1))


def _certificate(residual: float, contraction: float) -> float:
    return residual * contraction / (1.0 - contraction)


def picard_iterate(model, n: int) -> QTable:
    """Q_0 = g and Q_k = g + delta * P[max_b Q_{k-1}(., b)]."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    fm = _finite(model)
    q = fm.rewards.copy()
    residual = np.inf
    for _ in range(n):
        nxt = bellman_step(fm, q)
        residual = float(np.max(np.abs(nxt - q)))
        q = nxt
    cert = _certificate(residual, fm.discount) if n else np.inf
    return QTable(q, residual, cert, n)


def exact_q(model, tol: float = 1e-12, lam: float = 1.0, init: np.ndarray | None = None) -> QTable:
    """Iterate until the a-posteriori Banach certificate drops to ``tol``."""
    fm = _finite(model)
    if not fm.discount < 1.0:
        raise ValueError("exact_q needs discount < 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    c = fm.discount * lam
    q = fm.rewards.copy() if init is None else np.array(init, dtype=np.float64)
    for k in range(1, MAX_ITERATIONS + 1):
        nxt = bellman_step(fm, q)
        residual = float(np.max(np.abs(nxt - q)))
        q = nxt
        cert = _certificate(residual, c)
        if cert <= tol:
            return QTable(q, residual, cert, k)
    raise RuntimeError(f"no convergence to tol={tol} in {MAX_ITERATIONS} iterations")


def bellman_residual(model, q: np.ndarray) -> float:
    return float(np.max(np.abs(bellman_step(model, q) - q)))


def stopping_step(model: FiniteStoppingModel, q: np.ndarray) -> np.ndarray:
    return model.running + model.discount * _expect(model.transitions, np.maximum(model.payoff, q))


def exact_stopping(model: FiniteStoppingModel, tol: float = 1e-12) -> QTable:
    """Continuation values Q = g + delta * E[max(G(X), Q(X))], one per state."""
    if not model.discount < 1.0:
        raise ValueError("exact_stopping needs discount < 1")
    q = model.running.copy()
    for k in range(1, MAX_ITERATIONS + 1):
        nxt = stopping_step(model, q)
        residual = float(np.max(np.abs(nxt - q)))
        q = nxt
        cert = _certificate(residual, model.discount)
        if cert <= tol:
            return QTable(q, residual, cert, k)
    raise RuntimeError(f"no convergence to tol={tol} in {MAX_ITERATIONS} iterations")


def stopping_policy_value(model: FiniteStoppingModel, stop_set) -> np.ndarray:
    """Continuation value of the stationary rule "stop on entering ``stop_set``".

    Solves the linear system Q = g + delta * P [1_stop G + 1_cont Q] directly;
    used to cross-check ``exact_stopping`` by enumerating stop sets.
    """
    S = model.n_states
    stop = np.zeros(S, dtype=bool)
    stop[list(stop_set)] = True
    P = model.transitions
    A = np.eye(S) - model.discount * P * (~stop)[None, :]
    b = model.running + model.discount * P @ np.where(stop, model.payoff, 0.0)
    return np.linalg.solve(A, b)
