"""Oblivious multi-level CountMin sketch over a turnstile stream of rows.

Layout of the bucket matrix (``r`` rows in total)::

    [ level 0: N0 rows = s sub-tables of N0/s ]   weight 1/s
    [ level 1 .. h_m-1: N rows each            ]   weight b**h
    [ uniform level h_m: N_u rows              ]   weight 1/p_u

Every row index ``i`` is routed by a keyed 64-bit hash of ``(seed, level, i)``,
so the same row always lands in the same buckets. That is what makes updates
replayable (turnstile) and sketches of disjoint shards mergeable.
"""

from __future__ import annotations

import dataclasses
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (
    BadMagicError,
    ConfigError,
    IncompatibleSketchError,
    NoCompressionError,
    SketchFormatError,
    TruncatedError,
    VersionMismatchError,
)

MODES = ("theory", "budget")

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# hash stream tags
_KIND_LEVEL0 = 0
_KIND_LEVEL = 1
_KIND_UNIFORM = 2


def _mix64_int(x: int) -> int:
    x &= _MASK64
    x ^= x >> 30
    x = (x * _MIX1) & _MASK64
    x ^= x >> 27
    x = (x * _MIX2) & _MASK64
    x ^= x >> 31
    return x


def _mix64(x: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps silently, which is what splitmix64 needs
    x = x ^ (x >> np.uint64(30))
    x = x * np.uint64(_MIX1)
    x = x ^ (x >> np.uint64(27))
    x = x * np.uint64(_MIX2)
    return x ^ (x >> np.uint64(31))


def _stream_key(seed: int, kind: int, index: int) -> np.uint64:
    tag = (kind << 32) | index
    return np.uint64(_mix64_int(seed ^ _mix64_int((tag + 1) * _GOLDEN)))


def _hash_rows(seed: int, kind: int, index: int, rows: np.ndarray) -> np.ndarray:
    key = _stream_key(seed, kind, index)
    return _mix64(rows * np.uint64(_GOLDEN) + key)


def _bucket_field(h: np.ndarray, size: int) -> np.ndarray:
    # multiply-shift on the low 32 bits: uniform in [0, size)
    lo = h & np.uint64(0xFFFFFFFF)
    return ((lo * np.uint64(size)) >> np.uint64(32)).astype(np.int64)


def _inclusion_field(h: np.ndarray, p: float) -> np.ndarray:
    threshold = np.uint64(min(int(p * 2.0**32), 1 << 32))
    return (h >> np.uint64(32)) < threshold


@dataclass(frozen=True)
class SketchConfig:
    """Full parameterization of a sketch.

    ``N0`` is the drawn level-0 size when ``random_shift`` is on; two sketches
    are mergeable only if their configs compare equal.
    """

    n: int
    d: int
    h_m: int
    N: int
    N0: int
    s: int = 1
    b: float = 2.0
    N_u: int = 0
    p_u: float = 1.0
    seed: int = 0
    random_shift: bool = False
    shift_k: int = 1
    mode: str = "budget"

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.h_m < 1:
            raise ConfigError(f"h_m must be >= 1, got {self.h_m}")
        if self.s < 1:
            raise ConfigError(f"s must be >= 1, got {self.s}")
        if self.N0 < self.s or self.N0 % self.s:
            raise ConfigError(f"N0={self.N0} must be a positive multiple of s={self.s}")
        if self.h_m > 1 and self.N < 1:
            raise ConfigError("N must be >= 1 when intermediate levels exist")
        if self.N < 0 or self.N_u < 0:
            raise ConfigError("bucket counts must be non-negative")
        if not (self.b > 1.0 and math.isfinite(self.b)):
            raise ConfigError(f"b must be a finite real > 1, got {self.b}")
        if not (0.0 < self.p_u <= 1.0):
            raise ConfigError(f"p_u must lie in (0, 1], got {self.p_u}")
        if not (0 <= self.seed <= _MASK64):
            raise ConfigError("seed must fit in 64 unsigned bits")
        if self.shift_k < 1:
            raise ConfigError("shift_k must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.rows < 1:
            raise ConfigError("sketch must have at least one row")

    @property
    def rows(self) -> int:
        return self.N0 + self.N * (self.h_m - 1) + self.N_u

    @property
    def sub_table_size(self) -> int:
        return self.N0 // self.s

    def level_probability(self, h: int) -> float:
        if h == self.h_m:
            return self.p_u
        if not 0 <= h < self.h_m:
            raise ValueError(f"level {h} outside [0, {self.h_m}]")
        return float(self.b) ** (-h)

    def level_slices(self) -> list[tuple[int, slice]]:
        """(level, row slice) for every non-empty level block, in layout order."""
        out = [(0, slice(0, self.N0))]
        start = self.N0
        for h in range(1, self.h_m):
            out.append((h, slice(start, start + self.N)))
            start += self.N
        if self.N_u:
            out.append((self.h_m, slice(start, start + self.N_u)))
        return out

    def level_of_rows(self) -> np.ndarray:
        levels = np.empty(self.rows, dtype=np.int64)
        for h, sl in self.level_slices():
            levels[sl] = h
        return levels

    def weights(self) -> np.ndarray:
        w = np.empty(self.rows, dtype=np.float64)
        for h, sl in self.level_slices():
            if h == 0:
                w[sl] = 1.0 / self.s
            elif h == self.h_m:
                w[sl] = 1.0 / self.p_u
            else:
                w[sl] = float(self.b) ** h
        return w

    def replace(self, **changes) -> "SketchConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class RowAssignment:
    row_index: int
    targets: tuple[int, ...]


def _routing(config: SketchConfig, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (position in ``idx``, global bucket row) pairs for every target."""
    idx = np.asarray(idx, dtype=np.int64)
    u = idx.astype(np.uint64)
    pos_all = np.arange(idx.size, dtype=np.int64)
    positions = []
    buckets = []
    sub = config.sub_table_size
    for l in range(config.s):
        h = _hash_rows(config.seed, _KIND_LEVEL0, l, u)
        positions.append(pos_all)
        buckets.append(l * sub + _bucket_field(h, sub))
    offset = config.N0
    for lvl in range(1, config.h_m):
        h = _hash_rows(config.seed, _KIND_LEVEL, lvl, u)
        keep = _inclusion_field(h, config.level_probability(lvl))
        positions.append(pos_all[keep])
        buckets.append(offset + _bucket_field(h[keep], config.N))
        offset += config.N
    if config.N_u:
        h = _hash_rows(config.seed, _KIND_UNIFORM, 0, u)
        keep = _inclusion_field(h, config.p_u)
        positions.append(pos_all[keep])
        buckets.append(offset + _bucket_field(h[keep], config.N_u))
    return np.concatenate(positions), np.concatenate(buckets)


def assignment(config: SketchConfig, i: int) -> RowAssignment:
    """Buckets that row ``i`` contributes to, each with coefficient +1."""
    i = int(i)
    if not 0 <= i < config.n:
        raise IndexError(f"row index {i} outside [0, {config.n})")
    _, buckets = _routing(config, np.array([i]))
    return RowAssignment(i, tuple(int(b) for b in buckets))


def sketching_matrix(config: SketchConfig, start: int = 0, stop: int | None = None) -> sp.csr_matrix:
    """The 0/1 sketching matrix restricted to columns ``start:stop``."""
    stop = config.n if stop is None else stop
    idx = np.arange(start, stop, dtype=np.int64)
    pos, buckets = _routing(config, idx)
    data = np.ones(pos.size, dtype=np.float64)
    return sp.csr_matrix((data, (buckets, pos)), shape=(config.rows, idx.size))


@dataclass
class SketchState:
    """Accumulated bucket sums plus per-row weights.

    A state is single-writer; ``update`` and ``update_rows`` mutate it in place.
    """

    config: SketchConfig
    buckets: np.ndarray
    weights: np.ndarray = field(repr=False)

    @property
    def n_original(self) -> int:
        return self.config.n

    @property
    def rows(self) -> int:
        return self.config.rows

    def update(self, i: int, delta) -> "SketchState":
        """Add ``delta`` to every bucket row that row ``i`` is routed to."""
        delta = np.asarray(delta, dtype=np.float64)
        if delta.shape != (self.config.d,):
            raise ValueError(f"delta must have shape ({self.config.d},), got {delta.shape}")
        if not np.all(np.isfinite(delta)):
            raise ValueError("delta must be finite")
        targets = assignment(self.config, i).targets
        for t in targets:
            self.buckets[t] += delta
        return self

    def update_rows(self, start: int, X) -> "SketchState":
        """Add rows ``X`` as updates to row indices ``start, start+1, ...``."""
        m = X.shape[0]
        if X.ndim != 2 or X.shape[1] != self.config.d:
            raise ValueError(f"rows must have {self.config.d} columns, got shape {X.shape}")
        if start < 0 or start + m > self.config.n:
            raise IndexError(f"rows [{start}, {start + m}) outside [0, {self.config.n})")
        if sp.issparse(X):
            if not np.all(np.isfinite(X.data)):
                raise ValueError("updates must be finite")
            self.buckets += np.asarray((sketching_matrix(self.config, start, start + m) @ X).todense())
        else:
            X = np.asarray(X, dtype=np.float64)
            if not np.all(np.isfinite(X)):
                raise ValueError("updates must be finite")
            self.buckets += sketching_matrix(self.config, start, start + m) @ X
        return self

    def merge(self, other: "SketchState") -> "SketchState":
        if self.config != other.config:
            raise IncompatibleSketchError(_config_mismatch(self.config, other.config))
        return SketchState(self.config, self.buckets + other.buckets, self.weights.copy())

    def copy(self) -> "SketchState":
        return SketchState(self.config, self.buckets.copy(), self.weights.copy())

    def __eq__(self, other):
        if not isinstance(other, SketchState):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.buckets, other.buckets)
            and np.array_equal(self.weights, other.weights)
        )

    def to_bytes(self) -> bytes:
        return serialize(self)

    @classmethod
    def from_bytes(cls, payload: bytes) -> "SketchState":
        return deserialize(payload)


def _config_mismatch(a: SketchConfig, b: SketchConfig) -> str:
    diffs = [
        f.name
        for f in dataclasses.fields(SketchConfig)
        if getattr(a, f.name) != getattr(b, f.name)
    ]
    return "sketch configs differ in: " + ", ".join(diffs)


def init(config: SketchConfig) -> SketchState:
    return SketchState(config, np.zeros((config.rows, config.d)), config.weights())


def update(state: SketchState, i: int, delta) -> SketchState:
    return state.update(i, delta)


def merge(a: SketchState, b: SketchState) -> SketchState:
    return a.merge(b)


CHUNK_ROWS = 65536


def sketch_matrix(config: SketchConfig, X, chunk_rows: int = CHUNK_ROWS) -> SketchState:
    """Sketch all ``n`` rows of ``X`` in a single pass.

    ``X`` may be a dense array, a scipy sparse matrix, or any iterable of rows;
    iterables are consumed in chunks so memory stays O(r*d + chunk*d).
    """
    state = init(config)
    if isinstance(X, np.ndarray) or sp.issparse(X):
        if X.shape[0] != config.n:
            raise ValueError(f"expected {config.n} rows, got {X.shape[0]}")
        if sp.issparse(X):
            X = X.tocsr()
        for start in range(0, config.n, chunk_rows):
            state.update_rows(start, X[start : start + chunk_rows])
        return state

    start = 0
    buf: list = []
    for row in X:
        buf.append(np.asarray(row, dtype=np.float64))
        if len(buf) == chunk_rows:
            if start + len(buf) > config.n:
                raise ValueError(f"more than {config.n} rows supplied")
            state.update_rows(start, np.vstack(buf))
            start += len(buf)
            buf = []
    if buf:
        if start + len(buf) > config.n:
            raise ValueError(f"more than {config.n} rows supplied")
        state.update_rows(start, np.vstack(buf))
        start += len(buf)
    if start != config.n:
        raise ValueError(f"expected {config.n} rows, got {start}")
    return state


# --- planning -------------------------------------------------------------


def draw_shifted_n0(base: int, s: int, k: int, growth: float, seed: int) -> int:
    """Pick the level-0 size uniformly from ``base * growth**i`` for ``i < k``.

    The pick is a function of ``seed`` only, so every shard planned with the
    same seed draws the same size.
    """
    candidates = []
    for i in range(k):
        c = int(round(base * growth**i))
        candidates.append(max(s, (c // s) * s))
    pick = _mix64_int(seed ^ 0x5EED5EED) % k
    return candidates[pick]


def plan_budget(
    n: int,
    d: int,
    target_rows: int,
    s: int = 1,
    h_m: int = 5,
    b: float = 2.0,
    seed: int = 0,
    random_shift: bool = False,
    shift_k: int = 1,
    shift_growth: float = 2.0,
    level0_share: float | None = None,
) -> SketchConfig:
    """Split a row budget over the levels.

    The uniform level gets ``min(target/h_m, ceil(n b^-h_m))`` rows. By
    default levels 0..h_m-1 share the rest equally; ``level0_share`` instead
    gives that fraction of the rest to level 0 and splits the remainder over
    the intermediate levels. Level 0 is rounded down to a multiple of s.
    """
    if b <= 1:
        raise ConfigError(f"b must be > 1, got {b}")
    if h_m < 1:
        raise ConfigError(f"h_m must be >= 1, got {h_m}")
    if s < 1:
        raise ConfigError(f"s must be >= 1, got {s}")
    if s > target_rows:
        raise ConfigError(f"s={s} exceeds target_rows={target_rows}")
    if target_rows < s + h_m:
        raise ConfigError(f"target_rows={target_rows} < s + h_m = {s + h_m}")
    if target_rows >= n:
        raise NoCompressionError(f"target_rows={target_rows} >= n={n}: sketch would not compress")
    p_u = float(b) ** (-h_m)
    n_u = min(target_rows // h_m, math.ceil(n * p_u))
    rest = target_rows - n_u
    if level0_share is None:
        per_level = rest // h_m
        n0 = (per_level // s) * s
    else:
        if not 0 < level0_share < 1:
            raise ConfigError(f"level0_share must be in (0, 1), got {level0_share}")
        n0 = (int(rest * level0_share) // s) * s
        per_level = (rest - n0) // (h_m - 1) if h_m > 1 else n0
    if n0 < s:
        raise ConfigError(
            f"level 0 needs at least s={s} buckets but only {per_level} remain per level"
        )
    if h_m > 1 and per_level < 1:
        raise ConfigError("no buckets left for intermediate levels")
    if random_shift:
        n0 = draw_shifted_n0(n0, s, shift_k, 1.0 / shift_growth, seed)
    return SketchConfig(
        n=n,
        d=d,
        h_m=h_m,
        N=per_level if h_m > 1 else 0,
        N0=n0,
        s=s,
        b=float(b),
        N_u=n_u,
        p_u=p_u,
        seed=seed,
        random_shift=random_shift,
        shift_k=shift_k,
        mode="budget",
    )


@dataclass(frozen=True)
class TheoryPlan:
    """Intermediate quantities of the theory-mode planner."""

    q_m: int
    m1: int
    N: int
    b: float
    h_m: int
    p_u: float
    N_u: int
    rows: int


def theory_quantities(
    n: int,
    d: int,
    eps: float,
    delta: float,
    mu: float,
    C: float = 1.0,
    c: float = 1.0,
    max_iter: int = 50,
) -> TheoryPlan:
    """Evaluate the parameter relations without building a config.

    ``N`` depends on ``h_m`` and ``h_m`` on ``N`` through ``b``; the pair is
    found by fixed-point iteration starting from ``h_m = 1``.
    """
    _check_theory_inputs(n, d, eps, delta, mu)
    q_m = math.ceil(math.log2(n * (mu + 1) / eps))
    m1 = math.ceil(math.log(1 / delta) + C * d * math.log(n))
    h_m = 1
    for _ in range(max_iter):
        N = math.ceil(32 * m1 ** (1 + c) * q_m ** (1 + c) * h_m**c * mu / eps**6)
        b = max(N * eps**5 / (32 * m1 * q_m * mu), 18 * mu / eps)
        new_h = 1
        while (n * b ** (-new_h)) / (b * N) > 12 * math.log(n):
            new_h += 1
        if new_h == h_m:
            break
        h_m = new_h
    p_u = min(1.0, 64 * mu * m1 / (eps**2 * n))
    N_u = math.ceil(n * p_u)
    rows = N + N * (h_m - 1) + N_u
    return TheoryPlan(q_m, m1, N, b, h_m, p_u, N_u, rows)


def _check_theory_inputs(n, d, eps, delta, mu):
    if not (0 < eps <= 0.25):
        raise ConfigError(f"eps out of range (0, 1/4]: {eps}")
    if not (0 < delta < 1):
        raise ConfigError(f"delta out of range (0, 1): {delta}")
    if not mu >= 1:
        raise ConfigError(f"mu out of range [1, inf): {mu}")
    if d < 1:
        raise ConfigError(f"d out of range: {d}")
    if n < max(1 / eps, mu, d, 1 / delta):
        raise ConfigError(f"n out of range: need n >= max(1/eps, mu, d, 1/delta), got {n}")


def plan_theory(
    n: int,
    d: int,
    eps: float,
    delta: float,
    mu: float,
    C: float = 1.0,
    c: float = 1.0,
    s: int = 1,
    seed: int = 0,
    allow_no_compression: bool = False,
) -> SketchConfig:
    """Derive every sketch parameter from accuracy targets.

    With the worst-case constants the row count only drops below ``n`` for
    astronomically large ``n``. ``allow_no_compression`` clamps every level to
    at most ``n`` buckets instead of raising, which keeps the level structure
    usable at desk scale.
    """
    q = theory_quantities(n, d, eps, delta, mu, C=C, c=c)
    if q.rows >= n and not allow_no_compression:
        raise NoCompressionError(
            f"theory-mode sketch needs {q.rows} rows for n={n}: sketch would not compress"
        )
    N = min(q.N, n)
    N0 = max(s, (min(q.N, n) // s) * s)
    N_u = min(q.N_u, n)
    return SketchConfig(
        n=n,
        d=d,
        h_m=q.h_m,
        N=N if q.h_m > 1 else 0,
        N0=N0,
        s=s,
        b=float(q.b),
        N_u=N_u,
        p_u=q.p_u,
        seed=seed,
        mode="theory",
    )


# --- serialization --------------------------------------------------------

MAGIC = b"OBSK"
VERSION = 1
_HEADER = struct.Struct("<4sH")
# n, d, h_m, N, N0, s, b, N_u, p_u, seed, random_shift, shift_k, mode
_CONFIG = struct.Struct("<QQQQQQdQdQBQB")
_ROWS = struct.Struct("<Q")


def serialize(state: SketchState) -> bytes:
    c = state.config
    parts = [
        _HEADER.pack(MAGIC, VERSION),
        _CONFIG.pack(
            c.n, c.d, c.h_m, c.N, c.N0, c.s, c.b, c.N_u, c.p_u, c.seed,
            int(c.random_shift), c.shift_k, MODES.index(c.mode),
        ),
        _ROWS.pack(c.rows),
        np.ascontiguousarray(state.weights, dtype="<f8").tobytes(),
        np.ascontiguousarray(state.buckets, dtype="<f8").tobytes(),
    ]
    return b"".join(parts)


def deserialize(payload: bytes) -> SketchState:
    if len(payload) < 4:
        raise TruncatedError("payload shorter than the magic number")
    if payload[:4] != MAGIC:
        raise BadMagicError(f"bad magic {payload[:4]!r}, expected {MAGIC!r}")
    if len(payload) < _HEADER.size:
        raise TruncatedError("payload ends inside the header")
    _, version = _HEADER.unpack_from(payload, 0)
    if version != VERSION:
        raise VersionMismatchError(f"unsupported sketch version {version}, expected {VERSION}")
    off = _HEADER.size
    if len(payload) < off + _CONFIG.size + _ROWS.size:
        raise TruncatedError("payload ends inside the config block")
    f = _CONFIG.unpack_from(payload, off)
    off += _CONFIG.size
    (r,) = _ROWS.unpack_from(payload, off)
    off += _ROWS.size
    if f[12] >= len(MODES):
        raise VersionMismatchError(f"unknown mode code {f[12]}")
    config = SketchConfig(
        n=f[0], d=f[1], h_m=f[2], N=f[3], N0=f[4], s=f[5], b=f[6], N_u=f[7],
        p_u=f[8], seed=f[9], random_shift=bool(f[10]), shift_k=f[11], mode=MODES[f[12]],
    )
    if r != config.rows:
        raise SketchFormatError(f"row count {r} disagrees with config ({config.rows})")
    need = off + 8 * r + 8 * r * config.d
    if len(payload) < need:
        raise TruncatedError(f"payload has {len(payload)} bytes, expected {need}")
    weights = np.frombuffer(payload, dtype="<f8", count=r, offset=off).astype(np.float64)
    off += 8 * r
    buckets = np.frombuffer(payload, dtype="<f8", count=r * config.d, offset=off)
    buckets = buckets.astype(np.float64).reshape(r, config.d)
    return SketchState(config, buckets, weights)


def load_sketch(path) -> SketchState:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def save_sketch(state: SketchState, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(state))

