"""Pairwise softmax cross-entropy over MaxSim scores, with analytic gradients.

For a triplet (q, d+, d-) with margin = MaxSim(q, d+) - MaxSim(q, d-)::

    L = -log(exp(s+) / (exp(s+) + exp(s-))) = log(1 + exp(-margin))

The gradient is taken with respect to the token embedding matrices
themselves: MaxSim is piecewise bilinear, so away from argmax ties

    dMaxSim/dq_i = d_{j*(i)}        dMaxSim/dd_j = sum of q_i with j*(i) = j

and dL/ds+ = -sigmoid(-margin), dL/ds- = +sigmoid(-margin). Rows are treated
as free vectors; the unit-sphere constraint is not projected out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Tuple

import numpy as np

from .core import check_token_matrix, maxsim_unchecked, similarity_matrix
from .errors import DegenerateMaxError, DimensionError

TIE_TOL = 1e-9


@dataclass
class TripletEmbeddings:
    query: np.ndarray
    positive: np.ndarray
    negative: np.ndarray

    def __post_init__(self):
        self.query = np.atleast_2d(np.asarray(self.query))
        self.positive = np.atleast_2d(np.asarray(self.positive))
        self.negative = np.atleast_2d(np.asarray(self.negative))
        dims = {self.query.shape[-1], self.positive.shape[-1], self.negative.shape[-1]}
        if len(dims) != 1:
            raise DimensionError(f"triplet dims disagree: {sorted(dims)}")


@dataclass(frozen=True)
class LossReport:
    loss: float
    score_pos: float
    score_neg: float
    margin: float


@dataclass
class TripletGradients:
    query: np.ndarray
    positive: np.ndarray
    negative: np.ndarray


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def softplus_loss(margin: float) -> float:
    """log(1 + exp(-margin)) without overflow for any finite margin."""
    return float(np.logaddexp(0.0, -margin))


def naive_loss(score_pos: float, score_neg: float) -> float:
    """The softmax ratio exactly as written; overflows for large scores."""
    ep, en = math.exp(score_pos), math.exp(score_neg)
    return -math.log(ep / (ep + en))


def _matrices(t: TripletEmbeddings, check_norm: bool):
    return (
        check_token_matrix(t.query, "query", check_norm).astype(np.float64),
        check_token_matrix(t.positive, "positive", check_norm).astype(np.float64),
        check_token_matrix(t.negative, "negative", check_norm).astype(np.float64),
    )


def pairwise_loss(t: TripletEmbeddings, check_norm: bool = True) -> LossReport:
    q, dp, dn = _matrices(t, check_norm)
    sp = maxsim_unchecked(q, dp)
    sn = maxsim_unchecked(q, dn)
    margin = sp - sn
    return LossReport(softplus_loss(margin), sp, sn, margin)


def _argmax_checked(sim: np.ndarray, which: str, check: bool) -> np.ndarray:
    best = sim.argmax(axis=1)
    if check and sim.shape[1] > 1:
        top2 = np.sort(sim, axis=1)[:, -2:]
        gap = top2[:, 1] - top2[:, 0]
        tied = np.flatnonzero(gap <= TIE_TOL)
        if tied.size:
            i = int(tied[0])
            raise DegenerateMaxError(
                f"query token {i} has tied maxima against the {which} document "
                f"(gap {gap[i]:.3g} <= {TIE_TOL}); gradient undefined"
            )
    return best


def _maxsim_grads(q: np.ndarray, d: np.ndarray, which: str, check: bool):
    best = _argmax_checked(similarity_matrix(q, d), which, check)
    grad_q = d[best]
    grad_d = np.zeros_like(d)
    np.add.at(grad_d, best, q)
    return grad_q, grad_d


def pairwise_loss_grad(
    t: TripletEmbeddings, check_degenerate: bool = True, check_norm: bool = True
) -> Tuple[LossReport, TripletGradients]:
    """Loss and its gradient w.r.t. the query, positive and negative matrices.

    Raises:
        DegenerateMaxError: some query token's best match is not unique
            (within 1e-9), where the loss is not differentiable. Pass
            ``check_degenerate=False`` to take the first argmax instead.
    """
    q, dp, dn = _matrices(t, check_norm)
    gq_p, gdp = _maxsim_grads(q, dp, "positive", check_degenerate)
    gq_n, gdn = _maxsim_grads(q, dn, "negative", check_degenerate)
    sp = maxsim_unchecked(q, dp)
    sn = maxsim_unchecked(q, dn)
    margin = sp - sn
    w = _sigmoid(-margin)
    # dL/ds+ = -w, dL/ds- = +w
    grads = TripletGradients(query=w * (gq_n - gq_p), positive=-w * gdp, negative=w * gdn)
    return LossReport(softplus_loss(margin), sp, sn, margin), grads


def finite_difference_grad(t: TripletEmbeddings, h: float = 1e-5) -> TripletGradients:
    """Central differences of the loss in every embedding coordinate."""
    mats = [np.array(t.query, dtype=np.float64), np.array(t.positive, dtype=np.float64),
            np.array(t.negative, dtype=np.float64)]

    def loss_of(ms):
        return softplus_loss(maxsim_unchecked(ms[0], ms[1]) - maxsim_unchecked(ms[0], ms[2]))

    out = []
    for k, m in enumerate(mats):
        g = np.zeros_like(m)
        for idx in np.ndindex(m.shape):
            orig = m[idx]
            m[idx] = orig + h
            up = loss_of(mats)
            m[idx] = orig - h
            down = loss_of(mats)
            m[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return TripletGradients(*out)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a - b| / max(max |a|, max |b|); 0 when both are zero."""
    scale = max(float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - b).max(initial=0.0)) / scale


def gradient_check(t: TripletEmbeddings, h: float = 1e-5) -> float:
    """Largest relative error between analytic and finite-difference gradients."""
    _, analytic = pairwise_loss_grad(t)
    numeric = finite_difference_grad(t, h)
    return max(
        relative_error(analytic.query, numeric.query),
        relative_error(analytic.positive, numeric.positive),
        relative_error(analytic.negative, numeric.negative),
    )


def batch_loss(triplets: Iterable[TripletEmbeddings]) -> Tuple[List[LossReport], float]:
    """Per-triplet reports and their mean loss (summed in input order)."""
    reports = [pairwise_loss(t) for t in triplets]
    mean = math.fsum(r.loss for r in reports) / len(reports) if reports else float("nan")
    return reports, mean
