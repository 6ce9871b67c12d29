"""Belief-mass algebra over a frame of singleton classes plus the whole frame.

A mass assignment spreads one unit of belief over T mutually exclusive
singleton classes plus the full set ("theta"), whose share doubles as the
uncertainty of the assignment.  Evidence counts map to masses via
``m_k = e_k / S`` and ``theta = T / S`` with ``S = sum(e_k + 1)``, so zero
evidence yields the vacuous assignment and strong evidence drives theta
toward zero.

Combination follows Dempster's rule restricted to this frame: products of
equal singletons reinforce that singleton, singleton-theta products back the
singleton, theta-theta products stay on theta, and only differing singleton
pairs conflict.  ``oracle_combine`` re-derives the same rule by enumerating
focal-element pairs and exists as a slow, independent cross-check of the
closed-form ``combine``.

All functions are pure and operate on immutable values; they are safe to
call concurrently.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .validation import ValidationError, as_evidence, require

__all__ = [
    "BeliefMass",
    "DirichletParams",
    "TotalConflictError",
    "MassAudit",
    "mass_audit",
    "masses_from_evidence",
    "vacuous",
    "conflict",
    "combine",
    "combine_many",
    "oracle_combine",
    "dirichlet_from_evidence",
]

NORMALIZATION_TOL = 1e-9

# Combination is undefined once the conflict coefficient reaches 1 - TOTAL_CONFLICT_EPS.
TOTAL_CONFLICT_EPS = 1e-12


class TotalConflictError(ValueError):
    """Two mass assignments conflict totally; their combination is undefined."""


@dataclass
class MassAudit:
    """Running tally of every mass assignment constructed while active."""

    count: int = 0
    max_deviation: float = 0.0

    def record(self, deviation: float) -> None:
        self.count += 1
        if deviation > self.max_deviation:
            self.max_deviation = deviation


_ACTIVE_AUDITS: list[MassAudit] = []


@contextmanager
def mass_audit() -> Iterator[MassAudit]:
    """Collect normalization statistics for every ``BeliefMass`` built inside.

    Construction already enforces normalization; the audit additionally counts
    assignments and tracks the worst observed deviation so a whole run can
    assert that the invariant held everywhere.
    """
    audit = MassAudit()
    _ACTIVE_AUDITS.append(audit)
    try:
        yield audit
    finally:
        _ACTIVE_AUDITS.remove(audit)


@dataclass(frozen=True)
class BeliefMass:
    """Normalized belief over T singleton classes plus the whole frame.

    ``singletons[k]`` is the mass on class k; ``theta`` is the mass on the
    full set and equals the uncertainty of the assignment.  The entries are
    non-negative and sum to one.
    """

    singletons: np.ndarray
    theta: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.singletons, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise ValidationError(
                f"singleton masses must form a non-empty vector, got shape {arr.shape}")
        theta = float(self.theta)
        total = float(arr.sum()) + theta
        if not np.isfinite(total):
            raise ValidationError("mass entries must be finite")
        if float(arr.min()) < 0 or theta < 0:
            raise ValidationError("mass entries must be non-negative")
        deviation = abs(total - 1.0)
        if deviation > NORMALIZATION_TOL:
            raise ValidationError(
                f"masses must sum to 1 within {NORMALIZATION_TOL}, off by {deviation:.3e}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "singletons", arr)
        object.__setattr__(self, "theta", theta)
        for audit in _ACTIVE_AUDITS:
            audit.record(deviation)

    @property
    def size(self) -> int:
        return int(self.singletons.size)

    def as_array(self) -> np.ndarray:
        """Masses as a length T+1 vector with theta in the last slot."""
        return np.concatenate([self.singletons, [self.theta]])


def masses_from_evidence(evidence) -> BeliefMass:
    """Convert non-negative evidence counts to a normalized mass assignment.

    With ``S = sum(e_k + 1)`` each class receives ``e_k / S`` and theta
    receives ``T / S``, so the uncertainty shrinks as total evidence grows.
    """
    e = as_evidence(evidence)
    t = e.size
    strength = float(e.sum()) + t
    return BeliefMass(singletons=e / strength, theta=t / strength)


def vacuous(t: int) -> BeliefMass:
    """The totally ignorant assignment: all mass on theta.

    Acts as the identity element of ``combine``.
    """
    require(t >= 1, f"frame size must be at least 1, got {t}")
    return BeliefMass(singletons=np.zeros(int(t)), theta=1.0)


def _check_compatible(m1: BeliefMass, m2: BeliefMass) -> None:
    require(m1.size == m2.size,
            f"mass assignments disagree on frame size: {m1.size} vs {m2.size}")


def conflict(m1: BeliefMass, m2: BeliefMass) -> float:
    """Conflict coefficient: total mass product over differing singleton pairs.

    Theta intersects everything, so it never contributes.  Symmetric in its
    arguments and always in [0, 1].
    """
    _check_compatible(m1, m2)
    a, b = m1.singletons, m2.singletons
    total = float(a.sum() * b.sum() - (a * b).sum())
    # Guard tiny negative round-off from the difference form.
    return min(1.0, max(0.0, total))


def combine(m1: BeliefMass, m2: BeliefMass) -> BeliefMass:
    """Fuse two mass assignments with Dempster's rule on this frame.

    Per class: ``(m1_k*m2_k + m1_k*theta2 + theta1*m2_k) / (1 - Con)`` and
    ``theta = theta1*theta2 / (1 - Con)``, the unique assignment of the
    leftover product mass that keeps the result normalized.  Commutative and
    associative.  Raises ``TotalConflictError`` when the assignments disagree
    completely and no normalization is possible.
    """
    _check_compatible(m1, m2)
    con = conflict(m1, m2)
    if con >= 1.0 - TOTAL_CONFLICT_EPS:
        raise TotalConflictError(
            f"conflict coefficient {con!r} leaves no compatible belief to renormalize")
    scale = 1.0 / (1.0 - con)
    fused = (m1.singletons * m2.singletons
             + m1.singletons * m2.theta
             + m1.theta * m2.singletons) * scale
    return BeliefMass(singletons=fused, theta=m1.theta * m2.theta * scale)


def combine_many(masses: Sequence[BeliefMass]) -> BeliefMass:
    """Left fold of ``combine`` over a non-empty sequence.

    Associativity and commutativity make the result order-independent up to
    round-off.  A totally conflicting step raises with its position.
    """
    require(len(masses) >= 1, "combine_many needs at least one mass assignment")
    acc = masses[0]
    for step, m in enumerate(masses[1:], start=1):
        try:
            acc = combine(acc, m)
        except TotalConflictError as exc:
            raise TotalConflictError(
                f"total conflict while folding element {step}: {exc}") from exc
    return acc


# Focal elements for the enumeration oracle.  Theta is a distinct label even
# when T == 1, matching the closed form where it carries the uncertainty.
_THETA = -1


def _oracle_intersect(a: int, b: int) -> int | None:
    if a == _THETA:
        return b
    if b == _THETA:
        return a
    return a if a == b else None


def oracle_combine(m1: BeliefMass, m2: BeliefMass) -> BeliefMass:
    """Brute-force Dempster combination by enumerating focal-element pairs.

    Slow reference path, written independently of ``combine``: every focal
    pair is intersected, products are accumulated per surviving element, the
    empty-intersection mass becomes the conflict, and the rest renormalizes.
    """
    _check_compatible(m1, m2)
    t = m1.size
    labels = list(range(t)) + [_THETA]
    values1 = list(m1.singletons) + [m1.theta]
    values2 = list(m2.singletons) + [m2.theta]
    accumulated: dict[int, float] = {label: 0.0 for label in labels}
    conflict_mass = 0.0
    for a, va in zip(labels, values1):
        for b, vb in zip(labels, values2):
            meet = _oracle_intersect(a, b)
            if meet is None:
                conflict_mass += va * vb
            else:
                accumulated[meet] += va * vb
    if conflict_mass >= 1.0 - TOTAL_CONFLICT_EPS:
        raise TotalConflictError(
            f"conflict coefficient {conflict_mass!r} leaves no compatible belief to renormalize")
    scale = 1.0 / (1.0 - conflict_mass)
    singletons = np.array([accumulated[k] * scale for k in range(t)])
    return BeliefMass(singletons=singletons, theta=accumulated[_THETA] * scale)


@dataclass(frozen=True)
class DirichletParams:
    """Concentration parameters backing an evidence vector.

    ``alpha[k] = e_k + 1`` and ``strength`` is their sum, so the strength
    matches the normalizer of the mass mapping and the uncertainty satisfies
    ``theta = T / strength``.
    """

    alpha: np.ndarray
    strength: float = field(default=0.0)

    def __post_init__(self) -> None:
        arr = np.asarray(self.alpha, dtype=np.float64)
        require(arr.ndim == 1 and arr.size >= 1,
                f"alpha must be a non-empty vector, got shape {arr.shape}")
        require(bool(np.isfinite(arr).all()) and bool((arr > 0).all()),
                "alpha entries must be finite and positive")
        strength = float(self.strength)
        require(abs(strength - float(arr.sum())) <= NORMALIZATION_TOL,
                f"strength must equal sum(alpha), got {strength!r} vs {arr.sum()!r}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "alpha", arr)
        object.__setattr__(self, "strength", strength)

    @property
    def predictive_mean(self) -> np.ndarray:
        return self.alpha / self.strength


def dirichlet_from_evidence(evidence) -> DirichletParams:
    """Lift evidence counts to Dirichlet concentrations ``alpha = e + 1``."""
    e = as_evidence(evidence)
    alpha = e + 1.0
    return DirichletParams(alpha=alpha, strength=float(alpha.sum()))
