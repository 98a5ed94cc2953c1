"""Agreement and correlation statistics between measured and reference values."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from .errors import InsufficientDataError, UndefinedCorrelationError, ValidationError

LOA_Z = 1.96
DEFAULT_CONDITION_ORDINAL = {"poor": 0, "fair": 1, "good": 2}


def _paired(measured, reference, minimum: int):
    x = np.asarray(measured, dtype=np.float64)
    y = np.asarray(reference, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError(f"paired series must be 1-D and equal length, got {x.shape}, {y.shape}")
    if len(x) < minimum:
        raise InsufficientDataError(f"need at least {minimum} pairs, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("paired series contain undefined entries")
    return x, y


def t_two_tailed_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom.

    Uses the identity P = I_x(df/2, 1/2) with x = df / (df + t^2).
    """
    if math.isinf(t):
        return 0.0
    return float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))


# --- correlation -------------------------------------------------------------


def _pearson_r(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = math.fsum(dx * dx)
    syy = math.fsum(dy * dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant series")
    r = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class PearsonResult:
    r: float
    p: float
    n: int

    def significant(self, alpha: float = 0.05) -> bool:
        return self.p < alpha


def pearson(measured, reference) -> PearsonResult:
    """Sample Pearson r with a two-tailed p-value from the t statistic (n - 2 df)."""
    x, y = _paired(measured, reference, 3)
    r = _pearson_r(x, y)
    df = len(x) - 2
    if abs(r) == 1.0:
        return PearsonResult(r=r, p=0.0, n=len(x))
    t = r * math.sqrt(df / (1.0 - r * r))
    return PearsonResult(r=r, p=t_two_tailed_p(t, df), n=len(x))


@dataclass(frozen=True)
class BlandAltmanResult:
    mean_diff: float
    sd_diff: float
    upper_loa: float
    lower_loa: float
    outside_count: int
    n: int


def bland_altman(measured, reference) -> BlandAltmanResult:
    """Limits of agreement on differences ``measured - reference`` (sample SD)."""
    x, y = _paired(measured, reference, 2)
    d = x - y
    mean = math.fsum(d) / len(d)
    sd = float(np.std(d, ddof=1))
    upper = mean + LOA_Z * sd
    lower = mean - LOA_Z * sd
    outside = int(np.count_nonzero((d > upper) | (d < lower)))
    return BlandAltmanResult(mean_diff=mean, sd_diff=sd, upper_loa=upper, lower_loa=lower,
                             outside_count=outside, n=len(d))


def bland_altman_points(measured, reference) -> List[Tuple[float, float]]:
    """(mean of the pair, difference) points for plotting."""
    x, y = _paired(measured, reference, 1)
    return [(float((a + b) / 2.0), float(a - b)) for a, b in zip(x, y)]


@dataclass(frozen=True)
class CorrelationMatrix:
    names: Tuple[str, ...]
    values: np.ndarray  # NaN where undefined

    def get(self, a: str, b: str) -> Optional[float]:
        v = self.values[self.names.index(a), self.names.index(b)]
        return None if math.isnan(v) else float(v)

    def to_rows(self) -> List[List[Optional[float]]]:
        return [[None if math.isnan(v) else float(v) for v in row] for row in self.values]


def correlation_matrix(columns: Mapping[str, Sequence[float]]) -> CorrelationMatrix:
    names = tuple(columns)
    data = [np.asarray(columns[n], dtype=np.float64) for n in names]
    lengths = {len(c) for c in data}
    if len(lengths) > 1:
        raise ValidationError(f"columns differ in length: {sorted(lengths)}")
    if data and len(data[0]) < 3:
        raise InsufficientDataError("correlation matrix needs columns of length >= 3")
    k = len(names)
    out = np.full((k, k), np.nan)
    constant = [bool(np.all(c == c[0])) if len(c) else True for c in data]
    for i in range(k):
        if constant[i]:
            continue
        out[i, i] = 1.0
        for j in range(i + 1, k):
            if constant[j]:
                continue
            out[i, j] = out[j, i] = _pearson_r(data[i], data[j])
    return CorrelationMatrix(names=names, values=out)


# --- group aggregates --------------------------------------------------------


@dataclass(frozen=True)
class GroupStats:
    key: Tuple[str, ...]
    n: int
    ndvi_mean: float
    ndvi_sd: Optional[float]
    ctd_mean: float
    ctd_sd: Optional[float]


def _mean_sd(values: List[float]) -> Tuple[float, Optional[float]]:
    mean = math.fsum(values) / len(values)
    if len(values) < 2:
        return mean, None
    var = math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, math.sqrt(var)


def aggregate_by(rows: Iterable[Mapping], group_keys: Sequence[str] = ("species", "condition"),
                 ndvi_key: str = "measured_ndvi", ctd_key: str = "measured_ctd") -> List[GroupStats]:
    """Mean and sample SD of NDVI and CTD per group, groups sorted by key.

    Singleton groups carry ``None`` for the SD.
    """
    groups: Dict[tuple, Tuple[list, list]] = defaultdict(lambda: ([], []))
    for row in rows:
        key = tuple(str(row[k]) for k in group_keys)
        groups[key][0].append(float(row[ndvi_key]))
        groups[key][1].append(float(row[ctd_key]))
    out = []
    for key in sorted(groups):
        ndvi, ctd_vals = groups[key]
        n_mean, n_sd = _mean_sd(ndvi)
        c_mean, c_sd = _mean_sd(ctd_vals)
        out.append(GroupStats(key=key, n=len(ndvi), ndvi_mean=n_mean, ndvi_sd=n_sd,
                              ctd_mean=c_mean, ctd_sd=c_sd))
    return out
