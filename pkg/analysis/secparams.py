"""
secparams.py — Choosing the Validators Threshold (alpha) and the Signatures Threshold (t)

Four bounds, with z = probit(1 − ε) the standard normal quantile:

    alpha ≥ (√f + √(f·z² + 4))² / (4(1 − f))              integrity, alpha part
    t     ≥ √(alpha·f(1 − f))·z + alpha·f + 1               integrity
    t     ≤ alpha(1 − f)(1 − q) / (f + (1 − f)(1 − q))      service availability
    t     ≥ 1/(1 − q) − 1, and at least 1                   replica availability

f is the adversarial fraction, q the honest failure probability, ε the
tolerated failure probability. solve() looks for the smallest alpha that
admits an integer t satisfying all of them.

Everything is double precision; ceilings and floors get a 1e-12 slack so
that values like 4.000000000001 don't round up by accident.
"""

import logging
import math

from pydantic import BaseModel, Field

from core.errors import InvalidParameterError

logger = logging.getLogger(__name__)

SLACK = 1e-12
DEFAULT_EPSILON = 2.0**-20
DEFAULT_ALPHA_CAP = 10_000

# Rational approximation coefficients for the normal quantile
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _ceil(x: float) -> int:
    return math.ceil(x - SLACK)


def _floor(x: float) -> int:
    return math.floor(x + SLACK)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _probit_rational(p: float) -> float:
    if p < _P_LOW:
        r = math.sqrt(-2.0 * math.log(p))
        num = ((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]
        den = (((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0
        return num / den
    if p > 1.0 - _P_LOW:
        return -_probit_rational(1.0 - p)
    r = p - 0.5
    s = r * r
    num = (((((_A[0] * s + _A[1]) * s + _A[2]) * s + _A[3]) * s + _A[4]) * s + _A[5]) * r
    den = ((((_B[0] * s + _B[1]) * s + _B[2]) * s + _B[3]) * s + _B[4]) * s + 1.0
    return num / den


def probit(p: float) -> float:
    """Standard normal quantile: the x with Φ(x) = p."""
    if not 0.0 < p < 1.0:
        raise InvalidParameterError(f"probit needs p in (0, 1), got {p}")
    if p > 0.5:
        return -probit(1.0 - p)
    x = _probit_rational(p)
    # one Halley step against the erfc-based CDF
    e = normal_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


def _quantile(epsilon: float) -> float:
    """probit(1 − ε), computed from the lower tail to keep precision for tiny ε."""
    if not 0.0 < epsilon < 1.0:
        raise InvalidParameterError(f"epsilon must be in (0, 1), got {epsilon}")
    return -probit(epsilon)


def _check_fraction(name: str, value: float) -> None:
    if not 0.0 <= value < 1.0:
        raise InvalidParameterError(f"{name} must be in [0, 1), got {value}")


def min_alpha(f: float, epsilon: float = DEFAULT_EPSILON) -> int:
    _check_fraction("f", f)
    z = _quantile(epsilon)
    bound = (math.sqrt(f) + math.sqrt(f * z * z + 4.0)) ** 2 / (4.0 * (1.0 - f))
    return max(1, _ceil(bound))


def min_t_integrity(alpha: int, f: float, epsilon: float = DEFAULT_EPSILON) -> int:
    if alpha < 1:
        raise InvalidParameterError(f"alpha must be ≥ 1, got {alpha}")
    _check_fraction("f", f)
    z = _quantile(epsilon)
    bound = math.sqrt(alpha * f * (1.0 - f)) * z + alpha * f + 1.0
    return max(1, _ceil(bound))


def max_t_service(alpha: int, f: float, q: float) -> int:
    if alpha < 1:
        raise InvalidParameterError(f"alpha must be ≥ 1, got {alpha}")
    _check_fraction("f", f)
    _check_fraction("q", q)
    honest_up = (1.0 - f) * (1.0 - q)
    denominator = f + honest_up
    if denominator <= 0.0:
        raise InvalidParameterError(f"Degenerate service bound for f={f}, q={q}")
    return _floor(alpha * honest_up / denominator)


def min_t_replica(q: float) -> int:
    _check_fraction("q", q)
    return max(1, _ceil(1.0 / (1.0 - q) - 1.0))


class ThresholdReport(BaseModel):
    f: float = Field(..., ge=0.0, lt=1.0)
    q: float = Field(..., ge=0.0, lt=1.0)
    epsilon: float = Field(..., gt=0.0, lt=1.0)
    alpha_min: int = Field(..., ge=1)
    t_min_integrity: int = Field(..., ge=1)
    t_max_service: int
    t_min_replica: int = Field(..., ge=1)
    feasible: bool
    chosen: tuple[int, int] | None = None
    alpha_cap: int = Field(default=DEFAULT_ALPHA_CAP, ge=1)

    def to_lines(self) -> list[str]:
        """key=value lines, stable order, for the CLI and for diffing."""
        alpha, t = self.chosen if self.chosen else ("", "")
        return [
            f"f={self.f!r}",
            f"q={self.q!r}",
            f"epsilon={self.epsilon!r}",
            f"alpha_cap={self.alpha_cap}",
            f"alpha_min={self.alpha_min}",
            f"t_min_integrity={self.t_min_integrity}",
            f"t_max_service={self.t_max_service}",
            f"t_min_replica={self.t_min_replica}",
            f"feasible={'true' if self.feasible else 'false'}",
            f"alpha={alpha}",
            f"t={t}",
        ]


def check_thresholds(alpha: int, t: int, f: float, q: float, epsilon: float) -> bool:
    """All four bounds, evaluated directly for one (alpha, t)."""
    return (
        alpha >= min_alpha(f, epsilon)
        and 1 <= t <= alpha
        and t >= min_t_integrity(alpha, f, epsilon)
        and t <= max_t_service(alpha, f, q)
        and t >= min_t_replica(q)
    )


def solve(
    f: float,
    q: float,
    epsilon: float = DEFAULT_EPSILON,
    alpha_cap: int = DEFAULT_ALPHA_CAP,
) -> ThresholdReport:
    """
    Smallest alpha in [alpha_min, alpha_cap] with a feasible integer t, and
    the smallest such t. The per-alpha bounds in the report belong to the
    chosen alpha, or to alpha_min when nothing is feasible.
    """
    _check_fraction("f", f)
    _check_fraction("q", q)
    if alpha_cap < 1:
        raise InvalidParameterError(f"alpha_cap must be ≥ 1, got {alpha_cap}")
    a_min = min_alpha(f, epsilon)
    t_rep = min_t_replica(q)

    for alpha in range(a_min, alpha_cap + 1):
        t_int = min_t_integrity(alpha, f, epsilon)
        t_srv = max_t_service(alpha, f, q)
        low = max(t_int, t_rep)
        if low <= min(t_srv, alpha):
            logger.debug(f"solve(f={f}, q={q}, ε={epsilon}) → alpha={alpha}, t={low}")
            return ThresholdReport(
                f=f, q=q, epsilon=epsilon, alpha_min=a_min, t_min_integrity=t_int,
                t_max_service=t_srv, t_min_replica=t_rep, feasible=True,
                chosen=(alpha, low), alpha_cap=alpha_cap,
            )

    logger.info(f"No feasible (alpha, t) for f={f}, q={q}, ε={epsilon} up to alpha={alpha_cap}")
    return ThresholdReport(
        f=f, q=q, epsilon=epsilon, alpha_min=a_min,
        t_min_integrity=min_t_integrity(a_min, f, epsilon),
        t_max_service=max_t_service(a_min, f, q),
        t_min_replica=t_rep, feasible=False, chosen=None, alpha_cap=alpha_cap,
    )
