"""Error-compensation schemes for compressed communication.

Every node (worker or server) keeps a small state: the filtered error e_t
and its last two compression residuals.  Before compressing, the node adds
e_t to its outgoing message; after compressing, it records the new residual.
The schemes differ in how e_t is built from past residuals:

    none      e_t = 0 (compression error is simply dropped)
    single    e_t = (1-beta) e_{t-1} + beta * delta_{t-1}
    two_step  e_t = (1-beta) e_{t-1}
              + beta * ((a_{t-1}/a_t)(2-a_t) delta_{t-1}
                        - (a_{t-2}/a_t)(1-a_t) delta_{t-2})

with a_t the moving-average weight of the estimator being compensated, and
in WHERE the compression sits relative to that weight:

    none, single   the node transmits the already-weighted increment,
                   C[a_t A_t + e_t], and the receiver adds it as is, so the
                   compression error perturbs the estimator at full strength;
    two_step       the node transmits the raw increment, C[A_t + e_t], and
                   the receiver folds it in with weight a_t, so the error is
                   damped by a_t on entry.

The two_step filter weights are chosen so that the damped update telescopes:
all but the most recent residual cancel from the trajectory.  Both layouts
collapse to the same update when a_t = 1.

scheme_coefficients exposes the unified analysis form (eta1, eta2, c1, c2)
in which all three schemes are written at the v-update level:

    v_t = (1 - a_t) v_{t-1} + a_t A_t - eta1 delta_t + eta2 e_t,

with eta1 = eta2 = 1 for none/single (undamped error) and eta1 = eta2 = a_t
for two_step (damped error).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

KINDS = ("none", "single", "two_step")


@dataclass(frozen=True)
class SchemeSpec:
    """Compensation scheme choice plus the low-pass parameter beta.

    beta = 1 disables the filter's memory (e_t depends only on the latest
    residuals); smaller beta averages compensation over a longer history.
    """

    kind: str = "two_step"
    beta: float = 0.3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scheme kind {self.kind!r}, expected one of {KINDS}")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"beta must be in (0, 1], got {self.beta}")


@dataclass
class CompensationState:
    """Per-node filter state: e_t and the two most recent residuals."""

    e: np.ndarray
    delta_1: np.ndarray
    delta_2: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> "CompensationState":
        return cls(e=np.zeros(dim), delta_1=np.zeros(dim), delta_2=np.zeros(dim))


def scheme_coefficients(kind: str, alpha_t: float) -> tuple[float, float, float, float]:
    """Unified-form coefficients (eta1, eta2, c1, c2) for the given scheme."""
    if not 0.0 < alpha_t <= 1.0:
        raise ConfigError(f"alpha_t must be in (0, 1], got {alpha_t}")
    if kind == "none":
        return (1.0, 0.0, 0.0, 0.0)
    if kind == "single":
        return (1.0, 1.0, 1.0, 0.0)
    if kind == "two_step":
        return (alpha_t, alpha_t, 2.0 - alpha_t, 1.0 - alpha_t)
    raise ConfigError(f"unknown scheme kind {kind!r}, expected one of {KINDS}")


def transmits_weighted_increment(kind: str) -> bool:
    """Whether the scheme compresses the a_t-weighted increment.

    True for none/single: the message is a_t A_t + e_t and the receiver adds
    the compressed vector without further scaling, so the compression error
    enters the estimator undamped (eta1 = 1 in the unified form).  False for
    two_step: the message is A_t + e_t and the receiver applies the weight,
    damping the error by a_t (eta1 = a_t).
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown scheme kind {kind!r}, expected one of {KINDS}")
    return kind in ("none", "single")


def filter_update(
    state: CompensationState,
    beta: float,
    alpha_t: float,
    alpha_t1: float,
    alpha_t2: float,
    kind: str,
) -> np.ndarray:
    """Advance the low-pass filter and return the new e_t.

    The residual buffers are left untouched; they shift only after the node
    compressed its message (shift_deltas).
    """
    if alpha_t <= 0.0:
        raise ConfigError(f"alpha_t must be positive, got {alpha_t}")
    if kind == "none":
        state.e = np.zeros_like(state.e)
    elif kind == "single":
        state.e = (1.0 - beta) * state.e + beta * state.delta_1
    elif kind == "two_step":
        w1 = (alpha_t1 / alpha_t) * (2.0 - alpha_t)
        w2 = (alpha_t2 / alpha_t) * (1.0 - alpha_t)
        state.e = (1.0 - beta) * state.e + beta * (w1 * state.delta_1 - w2 * state.delta_2)
    else:
        raise ConfigError(f"unknown scheme kind {kind!r}, expected one of {KINDS}")
    return state.e


def compensate(message: np.ndarray, e_t: np.ndarray) -> np.ndarray:
    """The compensated message: what actually gets compressed."""
    if message.shape != e_t.shape:
        raise ConfigError(f"shape mismatch: message {message.shape} vs error {e_t.shape}")
    return message + e_t


def shift_deltas(state: CompensationState, new_delta: np.ndarray) -> None:
    """Record the latest residual, aging the previous one into the t-2 slot."""
    state.delta_2 = state.delta_1
    state.delta_1 = new_delta
