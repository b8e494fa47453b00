"""Testing functions linking prevalence to confirmed cases.

Each regime maps a test rate ``T`` (tests per person per day) to a
multiplier ``f(T)`` such that expected cases are ``I(t) * f(T(t))``:

========================  =====================
kind                      f(T)
========================  =====================
``adapted``               kappa
``limiting``              kappa * T
``up_saturating``         kappa * T / (T + alpha)
``down_saturating``       kappa * (alpha + T)
========================  =====================
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("adapted", "limiting", "up_saturating", "down_saturating")
SATURATING = ("up_saturating", "down_saturating")
PARAMETER_FREE = ("adapted", "limiting")

# short names accepted on the command line
ALIASES = {"up": "up_saturating", "down": "down_saturating"}

PER_MILLION = 1e6


def canonical_kind(kind: str) -> str:
    kind = ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise ValueError(f"unknown testing model kind {kind!r}; expected one of {KINDS}")
    return kind


@dataclass(frozen=True)
class TestingModel:
    """A testing regime with its parameters.

    ``alpha`` is required for the saturating kinds and forbidden otherwise.
    ``beta`` optionally records the covariate coefficients ``alpha`` was
    derived from (see :func:`alpha_from_covariates`).
    """

    __test__ = False  # not a pytest test class

    kind: str
    kappa: float = 1.0
    alpha: float | None = None
    beta: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.kind in SATURATING:
            if self.alpha is None or not self.alpha > 0:
                raise ValueError(f"{self.kind} model needs a positive alpha")
            object.__setattr__(self, "alpha", float(self.alpha))
        elif self.alpha is not None:
            raise ValueError(f"{self.kind} model takes no alpha")
        if self.beta is not None:
            object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))

    @property
    def is_parametric(self) -> bool:
        return self.kind in SATURATING

    def with_alpha(self, alpha: float) -> TestingModel:
        return TestingModel(self.kind, self.kappa, alpha, self.beta)


def eval_f(model: TestingModel, T):
    """Evaluate the testing function at test rate(s) ``T``.

    ``NaN`` entries propagate; negative rates raise ``ValueError``.
    """
    T_arr = np.asarray(T, dtype=float)
    if np.any(T_arr < 0):
        raise ValueError("test rate must be non-negative")
    k = model.kappa
    if model.kind == "adapted":
        out = np.where(np.isnan(T_arr), np.nan, k)
    elif model.kind == "limiting":
        out = k * T_arr
    elif model.kind == "up_saturating":
        out = k * T_arr / (T_arr + model.alpha)
    else:
        out = k * (model.alpha + T_arr)
    return float(out) if np.ndim(T) == 0 else out


def estimate_prevalence(Y, T, model: TestingModel):
    """Prevalence estimate ``Y / f(T)`` in units proportional to persons.

    Days where ``f(T)`` is zero (no tests under the limiting or
    up-saturating regimes) or where either input is missing give ``NaN``.
    """
    Y_arr = np.asarray(Y, dtype=float)
    if np.any(Y_arr < 0):
        raise ValueError("case counts must be non-negative")
    f = np.asarray(eval_f(model, T), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(f > 0, Y_arr / np.where(f > 0, f, 1.0), np.nan)
    return float(out) if np.ndim(out) == 0 else out


def alpha_from_covariates(beta, X) -> float:
    """Saturation threshold as a linear function of covariates.

    ``alpha = beta[0] + sum(beta[i] * X[i-1])``.
    """
    beta = np.asarray(beta, dtype=float)
    X = np.asarray(X, dtype=float)
    if beta.ndim != 1 or len(beta) != X.size + 1:
        raise ValueError(f"need {X.size + 1} coefficients for {X.size} covariates, got {beta.size}")
    alpha = float(beta[0] + beta[1:] @ X.ravel())
    if not alpha > 0:
        raise ValueError(f"covariates give a non-positive alpha ({alpha:.3g})")
    return alpha


def linearity_range(up_model: TestingModel, down_model: TestingModel) -> tuple[float, float]:
    """Test-rate interval where the limiting regime holds within a factor of two.

    The down-saturating threshold bounds it from below and the
    up-saturating threshold from above; both are in tests per person per day.
    """
    if up_model.kind != "up_saturating":
        raise ValueError(f"expected an up_saturating model, got {up_model.kind}")
    if down_model.kind != "down_saturating":
        raise ValueError(f"expected a down_saturating model, got {down_model.kind}")
    return down_model.alpha, up_model.alpha
