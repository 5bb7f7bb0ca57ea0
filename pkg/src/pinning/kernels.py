"""
Heavy-tailed inter-arrival laws K(n) = c_K L(n) n^{-(1+alpha)}.

Normalization and tail sums are returned as certified brackets: an exact
partial sum up to a cutoff plus integral bounds on the remainder. The
remainder is split into geometric blocks on which L and any monotone weight
are bounded by their endpoint values; beyond the last block a Potter-type
envelope (log(1+x)/log(1+X))^b <= (x/X)^{|b|/log(1+X)} closes the bound.
"""
import json
import logging
import math
import threading
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from src.constants import config
from src.pinning.exceptions import DivergenceError, DomainError, ToleranceError
from src.pinning.models import Interval, LawConfig, SlowlyVaryingSpec

logger = logging.getLogger(__name__)

# Relative allowance for float rounding in pairwise partial sums.
_PAIRWISE_ROUNDING = 1e-13
_TABLE_MAGIC = b"PINNING-TABLE-1\n"
_GAMMA_CACHE_SIZE = 8


def _block_edges(start: float, horizon: float, ratio: float) -> np.ndarray:
    """Integer-valued geometric edges start = e_0 < e_1 < ... <= horizon."""
    n_blocks = int(math.ceil(math.log(horizon / start) / math.log(ratio)))
    edges = np.floor(start * ratio ** np.arange(n_blocks + 1, dtype=float))
    edges[0] = start
    return np.unique(edges[edges <= horizon])


def _power_integral(a: np.ndarray, e: np.ndarray, s: float) -> np.ndarray:
    """Integral of x^-s over [a, e], accurate for e/a close to 1."""
    return -(a ** (1.0 - s)) * np.expm1((1.0 - s) * np.log(e / a)) / (s - 1.0)


def power_tail_bracket(
    b: float,
    s: float,
    start: float,
    weight: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    weight_increasing: bool = True,
    weight_sup: float = 1.0,
    ratio: Optional[float] = None,
    horizon: Optional[float] = None,
) -> tuple[float, float]:
    """
    Bracket sum_{n > start} (log(1+n))^b n^{-s} w(n) for integer start >= 1.

    ``weight`` must be monotone on [start, inf) with values in [0, weight_sup].
    """
    if s <= 1.0:
        raise DivergenceError(f"sum of n^-{s:.6g} diverges")
    ratio = ratio or config.TAIL_BLOCK_RATIO
    horizon = max(float(horizon or config.TAIL_HORIZON), float(start))

    lower = 0.0
    upper = 0.0
    X = float(start)
    if start < horizon:
        edges = _block_edges(float(start), horizon, ratio)
        if edges.size > 1:
            a, e = edges[:-1], edges[1:]
            upper_int = _power_integral(a, e, s)
            lower_int = _power_integral(a + 1.0, e + 1.0, s)
            if b == 0.0:
                l_min = l_max = np.ones_like(a)
            else:
                l_first = np.log1p(a + 1.0) ** b
                l_last = np.log1p(e) ** b
                l_min = np.minimum(l_first, l_last)
                l_max = np.maximum(l_first, l_last)
            if weight is not None:
                w_first = weight(a + 1.0)
                w_last = weight(e)
                w_min, w_max = (w_first, w_last) if weight_increasing else (w_last, w_first)
                l_min = l_min * w_min
                l_max = l_max * w_max
            lower = float(np.sum(l_min * lower_int))
            upper = float(np.sum(l_max * upper_int))
            X = float(edges[-1])

    # Remainder beyond the last block edge.
    L_X = math.log1p(X) ** b if b != 0.0 else 1.0
    if b == 0.0:
        rem_hi = X ** (1.0 - s) / (s - 1.0)
        rem_lo = (X + 1.0) ** (1.0 - s) / (s - 1.0)
    elif b > 0.0:
        delta = b / math.log1p(X)
        if delta >= s - 1.0:
            raise ToleranceError(
                f"Potter envelope exponent {delta:.4g} not below s-1={s - 1.0:.4g} at horizon {X:.3g}",
                achieved_width=math.inf,
            )
        rem_hi = L_X * X ** (1.0 - s) / (s - 1.0 - delta)
        rem_lo = L_X * (X + 1.0) ** (1.0 - s) / (s - 1.0)
    else:
        delta = -b / math.log1p(X)
        rem_hi = L_X * X ** (1.0 - s) / (s - 1.0)
        rem_lo = L_X * X ** delta * (X + 1.0) ** (1.0 - s - delta) / (s - 1.0 + delta)

    if weight is not None:
        if weight_increasing:
            rem_hi *= weight_sup
            rem_lo *= float(weight(np.array([X + 1.0]))[0])
        else:
            rem_hi *= float(weight(np.array([X]))[0])
            rem_lo = 0.0

    return lower + rem_lo, upper + rem_hi


def _log_weights(L: SlowlyVaryingSpec, s: float, n: np.ndarray) -> np.ndarray:
    """log of L(n) n^{-s}."""
    return L.log_value(n) - s * np.log(n)


class InterArrivalLaw:
    """Recurrent law K(n) = c_K L(n) n^{-(1+alpha)} with a cached table K(1..N_max)."""

    def __init__(
        self,
        law_config: LawConfig,
        c_K: float,
        norm_bracket: Interval,
        table: np.ndarray,
        weights: Optional[np.ndarray] = None,
    ):
        self.config = law_config
        self.alpha = law_config.alpha
        self.L = law_config.L
        self.c_K = c_K
        self.norm_bracket = norm_bracket
        self.table = np.asarray(table, dtype=float)
        self.table.flags.writeable = False
        self._weights = weights
        self._cdf: Optional[np.ndarray] = None
        self._gamma_cache: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    @property
    def N_max(self) -> int:
        return self.table.size

    @property
    def cutoff(self) -> int:
        return self.config.cutoff

    @property
    def s(self) -> float:
        """Decay exponent 1 + alpha."""
        return 1.0 + self.alpha

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    @property
    def weights(self) -> np.ndarray:
        """Unnormalized L(n) n^{-(1+alpha)} for n = 1..cutoff."""
        with self._lock:
            if self._weights is None:
                n = np.arange(1, self.cutoff + 1, dtype=float)
                self._weights = np.exp(_log_weights(self.L, self.s, n))
                self._weights.flags.writeable = False
            return self._weights

    @property
    def sound_shift(self) -> float:
        """
        Shift of h that absorbs the normalization uncertainty.

        The exactly normalized law is at most K / norm_bracket.lower pointwise, and a
        constant factor on K is the same as a shift of h.
        """
        return -math.log(self.norm_bracket.lower)

    @property
    def cdf(self) -> np.ndarray:
        with self._lock:
            if self._cdf is None:
                self._cdf = np.cumsum(self.table)
            return self._cdf

    def effective_L(self, x):
        """The slowly varying factor of K itself: K(n) n^{1+alpha} = c_K L(n)."""
        return self.c_K * self.L.value(x)

    def K_upto(self, N: int) -> np.ndarray:
        """K(1..N) as an array."""
        if N <= self.N_max:
            return self.table[:N]
        if N <= self.cutoff:
            return self.c_K * self.weights[:N]
        n = np.arange(self.cutoff + 1, N + 1, dtype=float)
        extra = self.c_K * np.exp(_log_weights(self.L, self.s, n))
        return np.concatenate([self.c_K * self.weights, extra])

    def log_K_upto(self, N: int) -> np.ndarray:
        """log K(1..N) from the closed form."""
        n = np.arange(1, N + 1, dtype=float)
        return math.log(self.c_K) + _log_weights(self.L, self.s, n)

    def _gamma_series(self, gamma: float) -> tuple[np.ndarray, float, float]:
        """Reverse cumulative sums of L(n)^g n^{-s g} up to the cutoff, plus the remainder bracket."""
        key = round(float(gamma), 12)
        with self._lock:
            if key in self._gamma_cache:
                self._gamma_cache.move_to_end(key)
                return self._gamma_cache[key]
        terms = self.weights ** gamma
        reverse_cumulative = np.cumsum(terms[::-1])[::-1]
        reverse_cumulative.flags.writeable = False
        rem_lo, rem_hi = power_tail_bracket(self.L.exponent * gamma, self.s * gamma, self.cutoff)
        entry = (reverse_cumulative, rem_lo, rem_hi)
        with self._lock:
            self._gamma_cache[key] = entry
            while len(self._gamma_cache) > _GAMMA_CACHE_SIZE:
                self._gamma_cache.popitem(last=False)
        return entry

    def tail_sums_gamma_upper(self, gamma: float, m_max: int) -> np.ndarray:
        """Upper brackets of sum_{n>=m} K(n)^gamma for m = 1..m_max (index m-1)."""
        _check_gamma_summable(self, gamma)
        if m_max > self.cutoff:
            raise DomainError(f"m_max={m_max} beyond the normalization cutoff {self.cutoff}")
        reverse_cumulative, _, rem_hi = self._gamma_series(gamma)
        allowance = 1.0 + 2.0 * self.cutoff * np.finfo(float).eps
        return self.c_K ** gamma * (reverse_cumulative[:m_max] * allowance + rem_hi)


def _check_gamma_summable(law: InterArrivalLaw, gamma: float) -> None:
    if not 0 < gamma <= 1:
        raise DomainError(f"gamma must lie in (0, 1], got {gamma}")
    if law.s * gamma <= 1.0:
        raise DivergenceError(
            f"sum of K(n)^gamma diverges: (1+alpha)*gamma = {law.s * gamma:.6g} <= 1"
        )


def build_law(
    alpha: float,
    L: Optional[SlowlyVaryingSpec] = None,
    N_max: Optional[int] = None,
    tol: Optional[float] = None,
    cutoff: Optional[int] = None,
) -> InterArrivalLaw:
    """
    Build a normalized law with a certified bracket on sum K(n).

    c_K = 1/S where S is the midpoint of [S_lo, S_hi]; the bracket on the
    normalized mass is [S_lo/S, S_hi/S].
    """
    L = L or SlowlyVaryingSpec()
    N_max = N_max if N_max is not None else config.TABLE_SIZE
    tol = tol if tol is not None else config.NORM_TOL
    cutoff = cutoff if cutoff is not None else max(config.NORM_CUTOFF, N_max)
    if alpha <= 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if N_max < 1000:
        raise DomainError(f"N_max must be at least 1000, got {N_max}")
    if tol <= 0:
        raise DomainError("tol must be positive")
    law_config = LawConfig(alpha=alpha, L=L, N_max=N_max, tol=tol, cutoff=cutoff)

    s = 1.0 + alpha
    n = np.arange(1, cutoff + 1, dtype=float)
    weights = np.exp(_log_weights(L, s, n))
    weights.flags.writeable = False
    partial = float(np.sum(weights))
    rem_lo, rem_hi = power_tail_bracket(L.exponent, s, cutoff)
    S_lo = partial * (1.0 - _PAIRWISE_ROUNDING) + rem_lo
    S_hi = partial * (1.0 + _PAIRWISE_ROUNDING) + rem_hi
    S = 0.5 * (S_lo + S_hi)
    width = (S_hi - S_lo) / S
    if width > tol:
        raise ToleranceError(
            f"normalization bracket width {width:.3e} exceeds tol={tol:.1e} at cutoff {cutoff}",
            achieved_width=width,
        )

    c_K = 1.0 / S
    norm_bracket = Interval(lower=S_lo / S, upper=S_hi / S)
    logger.debug(f"law alpha={alpha} L={L.kind}/{L.exponent}: c_K={c_K:.12g}, width={width:.3e}")
    return InterArrivalLaw(law_config, c_K, norm_bracket, c_K * weights[:N_max], weights)


def build_law_from_config(law_config: LawConfig) -> InterArrivalLaw:
    return build_law(law_config.alpha, law_config.L, law_config.N_max, law_config.tol, law_config.cutoff)


def K_at(law: InterArrivalLaw, n: Union[int, np.ndarray]):
    """K(n): table lookup for n <= N_max, closed form beyond."""
    n_arr = np.asarray(n)
    if np.any(n_arr < 1):
        raise DomainError("K(n) is defined for n >= 1")
    if n_arr.ndim == 0:
        n_int = int(n_arr)
        if n_int <= law.N_max:
            return float(law.table[n_int - 1])
        return float(law.c_K * np.exp(_log_weights(law.L, law.s, np.float64(n_int))))
    n_float = n_arr.astype(float)
    closed = law.c_K * np.exp(_log_weights(law.L, law.s, n_float))
    in_table = n_arr <= law.N_max
    closed[in_table] = law.table[n_arr[in_table].astype(int) - 1]
    return closed


def log_K_at(law: InterArrivalLaw, n: Union[int, np.ndarray]):
    n_arr = np.asarray(n)
    if np.any(n_arr < 1):
        raise DomainError("K(n) is defined for n >= 1")
    value = math.log(law.c_K) + _log_weights(law.L, law.s, n_arr.astype(float))
    return float(value) if n_arr.ndim == 0 else value


def tail_sum_gamma(law: InterArrivalLaw, m: int, gamma: float) -> Interval:
    """Certified bracket of sum_{n >= m} K(n)^gamma."""
    _check_gamma_summable(law, gamma)
    if m < 1:
        raise DomainError("tail sums start at m >= 1")
    scale = law.c_K ** gamma
    if m <= law.cutoff:
        reverse_cumulative, rem_lo, rem_hi = law._gamma_series(gamma)
        partial = float(reverse_cumulative[m - 1])
        slack = 2.0 * law.cutoff * np.finfo(float).eps
        lower = partial * (1.0 - slack) + rem_lo
        upper = partial * (1.0 + slack) + rem_hi
    else:
        lower, upper = power_tail_bracket(law.L.exponent * gamma, law.s * gamma, m - 1)
    return Interval(lower=scale * lower, upper=scale * upper)


def mean_inter_arrival(law: InterArrivalLaw) -> Interval:
    """Bracket of E(tau_1) = sum n K(n); finite only for alpha > 1."""
    if law.alpha <= 1:
        raise DivergenceError(f"E(tau_1) is infinite for alpha={law.alpha} <= 1")
    n = np.arange(1, law.cutoff + 1, dtype=float)
    partial = float(np.sum(n * law.weights))
    rem_lo, rem_hi = power_tail_bracket(law.L.exponent, law.alpha, law.cutoff)
    lower = partial * (1.0 - _PAIRWISE_ROUNDING) + rem_lo
    upper = partial * (1.0 + _PAIRWISE_ROUNDING) + rem_hi
    return Interval(lower=law.c_K * lower, upper=law.c_K * upper)


def slow_variation_ratio(L: SlowlyVaryingSpec, r: float, x):
    """L(r x) / L(x)."""
    x = np.asarray(x, dtype=float)
    return np.exp(L.log_value(r * x) - L.log_value(x))


def power_sum_ratio(L: SlowlyVaryingSpec, m: float, N: int) -> float:
    """
    For m > 1: sum_{n>=N} L(n) n^{-m} divided by L(N) N^{1-m}/(m-1).
    For m < 1: sum_{n<=N} L(n) n^{-m} divided by L(N) N^{1-m}/(1-m).
    """
    if m == 1:
        raise DomainError("m = 1 is the borderline case with no power-law asymptotics")
    reference = float(L.value(N)) * N ** (1.0 - m) / abs(m - 1.0)
    if m > 1:
        lower, upper = power_tail_bracket(L.exponent, m, N - 1)
        return 0.5 * (lower + upper) / reference
    n = np.arange(1, N + 1, dtype=float)
    return float(np.sum(L.value(n) * n ** (-m))) / reference


def envelope_ratio(L: SlowlyVaryingSpec, m: float, N: int, kind: str = "sup", span: int = 1000) -> float:
    """
    Envelope of L(n) n^m relative to L(N) N^m.

    sup: over n <= N for m > 0, over N <= n <= span*N for m < 0.
    inf: over n >= N (up to span*N) for m > 0, over 1 <= n <= N for m < 0.
    """
    if m == 0:
        raise DomainError("envelopes need m != 0")
    look_back = (m > 0) == (kind == "sup")
    if look_back:
        n = np.arange(1, N + 1, dtype=float)
    else:
        n = np.unique(np.floor(np.geomspace(N, span * N, 20000)))
    values = L.log_value(n) + m * np.log(n) - (float(L.log_value(N)) + m * math.log(N))
    extreme = values.max() if kind == "sup" else values.min()
    return float(math.exp(extreme))


def dump_table(law: InterArrivalLaw, cache_dir: Optional[Union[str, Path]] = None) -> Path:
    """Write the table to <cache_dir>/<config hash>.bin: magic, header length, JSON header, float64 data."""
    directory = Path(cache_dir or config.CACHE_DIR)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{law.config_hash}.bin"
    header = json.dumps({
        "law": law.config.model_dump(mode="json"),
        "c_K": law.c_K.hex(),
        "norm_bracket": [law.norm_bracket.lower.hex(), law.norm_bracket.upper.hex()],
        "size": law.N_max,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(_TABLE_MAGIC)
        handle.write(len(header).to_bytes(8, "little"))
        handle.write(header)
        handle.write(law.table.astype("<f8").tobytes())
    logger.info(f"💾 Table for law {law.config_hash[:12]} written to {path}")
    return path


def load_table(law_config: LawConfig, cache_dir: Optional[Union[str, Path]] = None) -> Optional[InterArrivalLaw]:
    """Load a cached law; None when no cache file exists for this config."""
    path = Path(cache_dir or config.CACHE_DIR) / f"{law_config.config_hash()}.bin"
    if not path.exists():
        return None
    with open(path, "rb") as handle:
        if handle.read(len(_TABLE_MAGIC)) != _TABLE_MAGIC:
            raise DomainError(f"{path} is not a table cache file")
        header_size = int.from_bytes(handle.read(8), "little")
        header = json.loads(handle.read(header_size).decode("utf-8"))
        table = np.frombuffer(handle.read(), dtype="<f8").astype(float)
    if LawConfig(**header["law"]) != law_config or table.size != header["size"]:
        raise DomainError(f"cache file {path} does not match the requested law")
    lower, upper = (float.fromhex(v) for v in header["norm_bracket"])
    return InterArrivalLaw(law_config, float.fromhex(header["c_K"]), Interval(lower=lower, upper=upper), table)


__all__ = [
    "InterArrivalLaw",
    "build_law",
    "build_law_from_config",
    "K_at",
    "log_K_at",
    "tail_sum_gamma",
    "mean_inter_arrival",
    "power_tail_bracket",
    "slow_variation_ratio",
    "power_sum_ratio",
    "envelope_ratio",
    "dump_table",
    "load_table",
]
