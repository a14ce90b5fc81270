"""Hot numeric kernels with a numba fast path and a numpy fallback.

The backend is picked once from the environment: set ``STEPSHAPE_NO_NUMBA=1``
(or install without numba) to force the numpy path. Tests and benchmarks can
pin a backend per call or via set_backend().

Both paths run their reductions in sequential left-to-right order (the numpy
side uses cumsum, whose partials are defined sequentially, rather than
pairwise-summing np.sum), and the constant-input mean short-circuits to the
constant so broadcasting a uniform advantage stays exact. fill_think_mean is
therefore bit-identical across backends. The exp-based kernels are bit-stable
run to run within a backend, but numpy's vectorized exp and libm's exp round
a few values differently at the last ulp, so across backends policy/KL sums
agree only to ~1e-12 relative. Keep the two implementations of each kernel in
lockstep when editing.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only on numba-less installs
    numba = None

HAS_NUMBA = numba is not None

_backend_override: str | None = None


def _env_disabled() -> bool:
    return os.environ.get("STEPSHAPE_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")


def active_backend() -> str:
    if _backend_override is not None:
        return _backend_override
    return "numba" if (HAS_NUMBA and not _env_disabled()) else "numpy"


def set_backend(name: str | None):
    """Pin "numba" or "numpy" for all kernel calls; None restores env selection."""
    global _backend_override
    if name not in (None, "numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise ValueError("numba backend requested but numba is not importable")
    _backend_override = name


def _pick(backend: str | None) -> str:
    if backend is None:
        return active_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend


# --- numpy implementations ---------------------------------------------------


def _seq_sum(values: np.ndarray) -> float:
    # cumsum's last partial is the left-to-right sequential sum, bit for bit.
    return float(np.cumsum(values)[-1]) if values.size else 0.0


def _np_fill_think_mean(token_adv: np.ndarray, think_mask: np.ndarray):
    response = token_adv[~think_mask]
    if response.size == 0:
        return
    if bool((response == response[0]).all()):
        mean = float(response[0])
    else:
        mean = _seq_sum(response) / response.size
    token_adv[think_mask] = mean


def _np_policy_term_sum(logp_new: np.ndarray, logp_old: np.ndarray, token_adv: np.ndarray, epsilon: float) -> float:
    if logp_new.size == 0:
        return 0.0
    ratio = np.exp(logp_new - logp_old)
    unclipped = ratio * token_adv
    clipped = np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * token_adv
    return _seq_sum(np.minimum(unclipped, clipped))


def _np_kl_term_sum(logp_new: np.ndarray, logp_old: np.ndarray) -> float:
    if logp_new.size == 0:
        return 0.0
    delta = logp_old - logp_new
    return _seq_sum(np.exp(delta) - delta - 1.0)


# --- numba implementations ---------------------------------------------------

if HAS_NUMBA:

    @numba.njit(cache=True)
    def _nb_fill_think_mean(token_adv, think_mask):
        total = 0.0
        count = 0
        first = 0.0
        all_equal = True
        for i in range(token_adv.shape[0]):
            if not think_mask[i]:
                value = token_adv[i]
                if count == 0:
                    first = value
                elif value != first:
                    all_equal = False
                total += value
                count += 1
        if count == 0:
            return
        mean = first if all_equal else total / count
        for i in range(token_adv.shape[0]):
            if think_mask[i]:
                token_adv[i] = mean

    @numba.njit(cache=True)
    def _nb_policy_term_sum(logp_new, logp_old, token_adv, epsilon):
        lo = 1.0 - epsilon
        hi = 1.0 + epsilon
        total = 0.0
        for i in range(logp_new.shape[0]):
            ratio = math.exp(logp_new[i] - logp_old[i])
            advantage = token_adv[i]
            unclipped = ratio * advantage
            bounded = lo if ratio < lo else (hi if ratio > hi else ratio)
            clipped = bounded * advantage
            total += unclipped if unclipped < clipped else clipped
        return total

    @numba.njit(cache=True)
    def _nb_kl_term_sum(logp_new, logp_old):
        total = 0.0
        for i in range(logp_new.shape[0]):
            delta = logp_old[i] - logp_new[i]
            total += math.exp(delta) - delta - 1.0
        return total


# --- dispatchers ---------------------------------------------------------------


def fill_think_mean(token_adv: np.ndarray, think_mask: np.ndarray, backend: str | None = None):
    """In place: think tokens get the mean of all non-think token advantages.

    The mean of a bitwise-constant response is the constant itself, so uniform
    broadcasts stay exact. No-op when every token is a think token.
    """
    if _pick(backend) == "numba":
        _nb_fill_think_mean(token_adv, think_mask)
    else:
        _np_fill_think_mean(token_adv, think_mask)


def policy_term_sum(
    logp_new: np.ndarray,
    logp_old: np.ndarray,
    token_adv: np.ndarray,
    epsilon: float,
    backend: str | None = None,
) -> float:
    """Sum over units of min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)."""
    if _pick(backend) == "numba":
        return _nb_policy_term_sum(logp_new, logp_old, token_adv, epsilon)
    return _np_policy_term_sum(logp_new, logp_old, token_adv, epsilon)


def kl_term_sum(logp_new: np.ndarray, logp_old: np.ndarray, backend: str | None = None) -> float:
    """Sum over tokens of exp(delta) - delta - 1 with delta = logp_old - logp_new."""
    if _pick(backend) == "numba":
        return _nb_kl_term_sum(logp_new, logp_old)
    return _np_kl_term_sum(logp_new, logp_old)
