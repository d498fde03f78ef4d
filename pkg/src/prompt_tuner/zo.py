"""Zeroth-order optimization: multi-point SPSA gradient estimation, pairwise
gradient surgery, and momentum updates with a Nesterov-style look-ahead.

Gradient estimates come from symmetric finite differences along random
perturbation directions whose entrywise inverse is finite by construction
(Rademacher signs, or uniform magnitudes on [0.5, 1.5] with random sign).
Conflicting estimates within one iteration are reconciled by projecting each
onto the normal plane of every other original estimate it disagrees with,
then averaged into the descent direction.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EstimationError, InvalidInputError

DISTRIBUTIONS = ("rademacher", "segmented_uniform")


@dataclass
class Schedule:
    """Gain sequences: a_t = a0/(t+1+A)^alpha, c_t = c0/(t+1)^gamma.

    The decay exponents follow long-standing SPSA practice; A is convention-
    ally set to ~10% of the planned iteration count (`for_iterations`).
    """

    a0: float = 0.05
    c0: float = 0.01
    alpha: float = 0.602
    gamma: float = 0.101
    A: float = 10.0

    def __post_init__(self):
        if self.a0 <= 0 or self.c0 <= 0:
            raise InvalidInputError("a0 and c0 must be positive")
        if not (0 < self.alpha <= 1 and 0 < self.gamma <= 1):
            raise InvalidInputError("alpha and gamma must lie in (0, 1]")
        if self.A < 0:
            raise InvalidInputError("A must be non-negative")

    @classmethod
    def for_iterations(cls, iterations, **kwargs):
        kwargs.setdefault("A", 0.1 * iterations)
        return cls(**kwargs)

    def a(self, t):
        return self.a0 / (t + 1 + self.A) ** self.alpha

    def c(self, t):
        return self.c0 / (t + 1) ** self.gamma


@dataclass
class OptimizerState:
    """Single-owner state threaded through `step`; arrays keep their dtype."""

    params: np.ndarray
    momentum: np.ndarray = None
    t: int = 0
    beta: float = 0.9
    s: int = 5
    dist: str = "segmented_uniform"

    def __post_init__(self):
        self.params = np.atleast_1d(np.asarray(self.params))
        if self.momentum is None:
            self.momentum = np.zeros_like(self.params)
        self.momentum = np.asarray(self.momentum, dtype=self.params.dtype)
        if self.momentum.shape != self.params.shape:
            raise InvalidInputError("momentum and params must have equal length")
        if not (0 <= self.beta < 1):
            raise InvalidInputError("beta must lie in [0, 1)")
        if self.s < 1:
            raise InvalidInputError("need at least one perturbation sample")
        if self.dist not in DISTRIBUTIONS:
            raise InvalidInputError(f"unknown distribution {self.dist!r}")


@dataclass
class StepReport:
    """Per-iteration diagnostics consumed by the training loop."""

    losses_plus: np.ndarray
    losses_minus: np.ndarray
    winners: list  # "plus" or "minus" per sample, the side with smaller loss
    a_t: float
    c_t: float
    grad_norm: float = 0.0
    extras: dict = field(default_factory=dict)


def sample_perturbation(dim, dist, rng):
    """One mean-zero perturbation vector with finite entrywise inverse."""
    if dist == "rademacher":
        return rng.integers(0, 2, size=dim).astype(np.float64) * 2.0 - 1.0
    if dist == "segmented_uniform":
        mag = rng.uniform(0.5, 1.5, size=dim)
        sign = rng.integers(0, 2, size=dim).astype(np.float64) * 2.0 - 1.0
        return mag * sign
    raise InvalidInputError(f"unknown distribution {dist!r}")


def spsa_gradients(loss_eval, phi, c_t, s, dist, rng):
    """Symmetric-difference gradient estimates at `phi`.

    For each of the `s` draws, evaluates loss at phi + c_t*delta and
    phi - c_t*delta (exactly 2s evaluations total, plus side first) and forms
        g_s = [L(phi + c_t d) - L(phi - c_t d)] / (2 c_t) * d^{-1}  (entrywise).

    Evaluations are issued sequentially in a fixed order, so a seeded run is
    reproducible; the evaluations are mutually independent, so a loss_eval
    that fans out to a remote service may parallelize internally.

    Returns (estimates, losses_plus, losses_minus); the smaller-loss side per
    draw feeds the prototype update downstream.
    """
    if s < 1:
        raise InvalidInputError("need s >= 1 perturbation samples")
    if c_t <= 0:
        raise InvalidInputError("perturbation scale c_t must be positive")
    phi = np.asarray(phi, dtype=np.float64)
    estimates = []
    losses_plus = np.empty(s)
    losses_minus = np.empty(s)
    for i in range(s):
        delta = sample_perturbation(phi.size, dist, rng)
        lp = float(loss_eval(phi + c_t * delta))
        if not np.isfinite(lp):
            raise EstimationError(f"non-finite loss on +side of sample {i}", side="+", sample=i)
        lm = float(loss_eval(phi - c_t * delta))
        if not np.isfinite(lm):
            raise EstimationError(f"non-finite loss on -side of sample {i}", side="-", sample=i)
        losses_plus[i] = lp
        losses_minus[i] = lm
        estimates.append((lp - lm) / (2.0 * c_t) / delta)
    return estimates, losses_plus, losses_minus


def gradient_surgery(estimates):
    """Project conflicting estimates onto each other's normal planes.

    Every ordered pair (i, j), i != j, is visited in index order: when the
    running estimate i conflicts with the ORIGINAL estimate j (negative dot
    product), the component along j is removed. Zero reference vectors are
    skipped; a single estimate passes through unchanged.
    """
    originals = [np.asarray(g, dtype=np.float64) for g in estimates]
    norms_sq = [float(g @ g) for g in originals]
    out = [g.copy() for g in originals]
    for i in range(len(out)):
        for j in range(len(originals)):
            if i == j or norms_sq[j] == 0.0:
                continue
            dot = float(out[i] @ originals[j])
            if dot < 0.0:
                out[i] = out[i] - (dot / norms_sq[j]) * originals[j]
    return out


def step(state, schedule, loss_eval, rng, surgery=True):
    """One SPSA-GC update.

    Gradients are estimated at the look-ahead point phi + beta*momentum, then
    (optionally) reconciled by surgery and averaged; the momentum update is
        m <- beta*m - a_t * g_avg,   phi <- phi + m.
    Returns (new_state, StepReport); on an estimation error the input state is
    left untouched and the error propagates.
    """
    phi = state.params.astype(np.float64)
    momentum = state.momentum.astype(np.float64)
    a_t = schedule.a(state.t)
    c_t = schedule.c(state.t)

    lookahead = phi + state.beta * momentum
    estimates, losses_plus, losses_minus = spsa_gradients(
        loss_eval, lookahead, c_t, state.s, state.dist, rng
    )
    if surgery:
        estimates = gradient_surgery(estimates)
    grad = np.mean(estimates, axis=0)

    new_momentum = state.beta * momentum - a_t * grad
    new_params = phi + new_momentum
    new_state = replace(
        state,
        params=new_params.astype(state.params.dtype),
        momentum=new_momentum.astype(state.params.dtype),
        t=state.t + 1,
    )
    report = StepReport(
        losses_plus=losses_plus,
        losses_minus=losses_minus,
        winners=["plus" if lp <= lm else "minus" for lp, lm in zip(losses_plus, losses_minus)],
        a_t=a_t,
        c_t=c_t,
        grad_norm=float(np.linalg.norm(grad)),
    )
    return new_state, report
