"""Free-parameter counting and BIC for INAR mixtures."""

from __future__ import annotations

import math

from .core import Family


def n_free_params(G: int, family: Family | str) -> int:
    """G alphas + G lambdas + (G - 1) weights, plus G dispersions for NB."""
    per_component = 4 if Family.parse(family) is Family.NEGBIN else 3
    return per_component * G - 1


def bic(final_loglik: float, G: int, family: Family | str, n_obs: int) -> float:
    """``2 * loglik - rho * log(n_obs)``; larger is better.

    ``n_obs`` is the total number of time points across all series.
    """
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    return 2.0 * final_loglik - n_free_params(G, family) * math.log(n_obs)
