"""Approximation-ratio experiments: spec parsing, execution, CSV and SVG output.

An experiment spec is a YAML mapping::

    dataset: {kind: synthetic, n_half: 20000, d: 100}
    objective: {kind: logistic, lambdas: [0.0]}
    sizes: [1400, 2800, 5600]
    repetitions: 40          # per sketch-type method and size
    sgd_repetitions: 21
    seed: 0
    sketch: {h_m: 3, b: 8, level0_share: 0.5}
    methods:
      - {name: old, type: sketch, s: 1}
      - {name: s10, type: sketch, s: 10}
      - {name: sgd, type: sgd}
    outputs: {results: results.csv, summary: summary.csv, svg: ratios.svg}
    workers: 1

Dataset kinds: synthetic, lower_bound, l1_exact and file (path, format,
label_column, intercept). Method types: sketch (s), cauchy, uniform, sgd
(eta0, batch_size). The shorthand ``old`` is a sketch with s = 1.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import data_io
from .baselines import SGDParams, cauchy_sketch, sgd_one_pass, uniform_sample
from .errors import ConfigError, ObsketchError
from .objectives import ObjectiveSpec
from .sketch import plan_budget, sketch_matrix
from .solvers import FitResult, approx_ratio, solve_l1, solve_logistic

SCHEMA_VERSION = 1
SEED_ENV = "OBSKETCH_SEED"
METHOD_TYPES = ("sketch", "cauchy", "uniform", "sgd")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    type: str
    s: int = 1
    eta0: float = 0.1
    batch_size: int = 32


@dataclass
class ExperimentSpec:
    dataset: dict
    methods: list[MethodSpec]
    sizes: list[int] = field(default_factory=list)
    objective: str = "logistic"
    lambdas: list[float] = field(default_factory=lambda: [0.0])
    repetitions: int = 40
    sgd_repetitions: int = 21
    seed: int = 0
    sketch: dict = field(default_factory=lambda: {"h_m": 3, "b": 8.0, "level0_share": 0.5})
    outputs: dict = field(default_factory=dict)
    workers: int = 1

    def validate(self) -> None:
        if not self.methods:
            raise ConfigError("methods: at least one method is required")
        if self.repetitions < 1 or self.sgd_repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.objective not in ("logistic", "l1"):
            raise ConfigError(f"objective.kind must be logistic or l1, got {self.objective!r}")
        if any(lam < 0 for lam in self.lambdas):
            raise ConfigError("lambdas must be >= 0")
        if self.objective == "l1" and any(lam != 0 for lam in self.lambdas):
            raise ConfigError("lambda is only meaningful for the logistic objective")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate method names: {names}")
        for m in self.methods:
            if m.type not in METHOD_TYPES:
                raise ConfigError(f"method {m.name!r}: unknown type {m.type!r}")
            if m.type != "sgd" and not self.sizes:
                raise ConfigError(f"method {m.name!r} needs sizes")
            if m.type == "sgd" and self.objective != "logistic":
                raise ConfigError("sgd is only defined for the logistic objective")
            if m.type == "cauchy" and self.objective != "l1":
                raise ConfigError("the cauchy baseline is only defined for the l1 objective")
        if any(s < 1 for s in self.sizes):
            raise ConfigError("sizes must be >= 1")


def _method_from(raw) -> MethodSpec:
    if isinstance(raw, MethodSpec):
        return raw
    if isinstance(raw, str):
        raw = {"name": raw}
    raw = dict(raw)
    name = raw.get("name")
    if not name:
        raise ConfigError(f"method without a name: {raw}")
    if name == "old" and "type" not in raw:
        raw.setdefault("type", "sketch")
        raw.setdefault("s", 1)
    known = {f.name for f in fields(MethodSpec)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"method {name!r}: unknown keys {sorted(unknown)}")
    if "type" not in raw:
        raise ConfigError(f"method {name!r}: missing type")
    return MethodSpec(**raw)


def parse_spec(raw: dict) -> ExperimentSpec:
    if not isinstance(raw, dict):
        raise ConfigError("experiment spec must be a mapping")
    known = {"dataset", "objective", "methods", "sizes", "repetitions", "sgd_repetitions", "seed", "sketch", "outputs", "workers"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown spec keys: {sorted(unknown)}")
    if "dataset" not in raw:
        raise ConfigError("spec needs a dataset")
    obj = raw.get("objective", {}) or {}
    if isinstance(obj, str):
        obj = {"kind": obj}
    spec = ExperimentSpec(
        dataset=dict(raw["dataset"]),
        methods=[_method_from(m) for m in raw.get("methods") or []],
        sizes=[int(s) for s in raw.get("sizes", [])],
        objective=obj.get("kind", "logistic"),
        lambdas=[float(x) for x in obj.get("lambdas", [0.0])],
        repetitions=int(raw.get("repetitions", 40)),
        sgd_repetitions=int(raw.get("sgd_repetitions", 21)),
        seed=int(raw.get("seed", 0)),
        sketch={"h_m": 3, "b": 8.0, "level0_share": 0.5, **(raw.get("sketch") or {})},
        outputs=dict(raw.get("outputs") or {}),
        workers=int(raw.get("workers", 1)),
    )
    spec.validate()
    return spec


def load_spec(path) -> ExperimentSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    spec = parse_spec(raw)
    base = Path(path).parent
    spec.outputs = {k: str(base / v) for k, v in spec.outputs.items()}
    if spec.dataset.get("kind") == "file" and "path" in spec.dataset:
        spec.dataset["path"] = str(base / spec.dataset["path"])
    return spec


def derive_seed(base_seed: int, method: str, size: int | None, rep: int) -> int:
    """Stable 63-bit seed per record; independent of the other methods in a spec."""
    key = f"{base_seed}|{method}|{size}|{rep}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little") >> 1


@dataclass
class ExperimentRecord:
    method: str
    size: int | None
    seed: int
    lam: float
    sketch_time_s: float
    solve_time_s: float
    objective_sketch_space: float
    objective_full_data: float
    approx_ratio: float
    error: str = ""


# CSV column names; ``lam`` is written as ``lambda``
RECORD_FIELDS = [f.name for f in fields(ExperimentRecord)]
CSV_COLUMNS = ["lambda" if k == "lam" else k for k in RECORD_FIELDS]


def build_dataset(ds_spec: dict, objective: str) -> data_io.Dataset:
    """Rows for the objective: folded for logistic, augmented for l1."""
    kind = ds_spec.get("kind", "synthetic")
    if kind == "synthetic":
        ds = data_io.gen_synthetic_heavy(int(ds_spec.get("n_half", 20000)), int(ds_spec.get("d", 100)), ds_spec.get("scale"))
        if objective == "l1":
            Z, Y = data_io.synthetic_unfolded(ds)
            return data_io.augment_l1(Z, Y, name="synthetic_heavy_l1", provenance={"generator": "synthetic_heavy"})
        return ds
    if kind == "lower_bound":
        if objective != "logistic":
            raise ConfigError("the lower-bound instance is a logistic instance")
        return data_io.gen_lower_bound(int(ds_spec["n"]), float(ds_spec["mu"]))
    if kind == "l1_exact":
        if objective != "l1":
            raise ConfigError("the exact-fit instance is an l1 instance")
        return data_io.gen_l1_exact(int(ds_spec["n"]), int(ds_spec["d"]), int(ds_spec.get("seed", 0)))[0]
    if kind == "file":
        return data_io.load(
            ds_spec["path"],
            ds_spec.get("format", "dense_csv"),
            label_column=int(ds_spec.get("label_column", -1)),
            intercept=bool(ds_spec.get("intercept", True)),
            transform="l1" if objective == "l1" else "fold",
        )
    raise ConfigError(f"unknown dataset kind {kind!r}")


class _Context:
    """Dataset plus cached full-data optima, shared by all records of a run."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self.ds = build_dataset(spec.dataset, spec.objective)
        self.rows = self.ds.rows
        self.n = self.ds.n
        self._optima: dict[float, FitResult] = {}

    def objective(self, lam: float) -> ObjectiveSpec:
        if self.spec.objective == "l1":
            return ObjectiveSpec("l1", 0.0, self.n)
        return ObjectiveSpec.logistic(self.n, lam)

    def optimum(self, lam: float) -> FitResult:
        if lam not in self._optima:
            if self.spec.objective == "l1":
                self._optima[lam] = solve_l1(self.rows)
            else:
                self._optima[lam] = solve_logistic(self.rows, lam=lam)
        return self._optima[lam]

    def solve(self, rows, w, lam: float) -> FitResult:
        if self.spec.objective == "l1":
            return solve_l1(rows, w)
        return solve_logistic(rows, w, lam=lam, normalizer=self.n)


def _sketch_space_value(ctx: _Context, lam: float, rows, w, beta) -> float:
    if ctx.spec.objective == "l1":
        return float(np.dot(w, np.abs(np.asarray(rows @ beta).ravel())))
    return ObjectiveSpec.logistic(ctx.n, lam).value(rows, w, beta)


def run_record(ctx: _Context, method: MethodSpec, size: int | None, rep: int, lam: float) -> ExperimentRecord:
    seed = derive_seed(ctx.spec.seed, method.name, size, rep)
    rec = ExperimentRecord(method.name, size, seed, lam, 0.0, 0.0, math.nan, math.nan, math.nan)
    try:
        t0 = time.perf_counter()
        if method.type == "sgd":
            fit = sgd_one_pass(ctx.rows, SGDParams(method.eta0, method.batch_size), seed=seed, lam=lam)
            rec.solve_time_s = time.perf_counter() - t0
            rec.objective_sketch_space = math.nan
        else:
            if method.type == "sketch":
                sk = ctx.spec.sketch
                cfg = plan_budget(
                    ctx.n, ctx.rows.shape[1], size, s=method.s, h_m=int(sk.get("h_m", 3)), b=float(sk.get("b", 8.0)),
                    seed=seed, level0_share=sk.get("level0_share"),
                )
                state = sketch_matrix(cfg, ctx.rows)
                rows, w = state.buckets, state.weights
            elif method.type == "cauchy":
                rows, w = cauchy_sketch(ctx.rows, size, seed)
            else:
                rows, w, _ = uniform_sample(ctx.rows, size, seed)
            t1 = time.perf_counter()
            rec.sketch_time_s = t1 - t0
            fit = ctx.solve(rows, w, lam)
            rec.solve_time_s = time.perf_counter() - t1
            rec.objective_sketch_space = _sketch_space_value(ctx, lam, rows, w, fit.beta)
        spec = ctx.objective(lam)
        rec.objective_full_data = spec.value(ctx.rows, 1.0, fit.beta)
        rec.approx_ratio = approx_ratio(spec, ctx.rows, 1.0, fit.beta, ctx.optimum(lam))
    except (ObsketchError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        rec.error = f"{getattr(exc, 'category', type(exc).__name__)}: {exc}"
    return rec


def jobs(spec: ExperimentSpec):
    """All (method, size, rep, lambda) keys in deterministic order."""
    out = []
    for lam in spec.lambdas:
        for m in spec.methods:
            if m.type == "sgd":
                out.extend((m, None, rep, lam) for rep in range(spec.sgd_repetitions))
            else:
                out.extend((m, size, rep, lam) for size in spec.sizes for rep in range(spec.repetitions))
    return out


_WORKER_CTX: _Context | None = None


def _init_worker(spec: ExperimentSpec):
    global _WORKER_CTX
    _WORKER_CTX = _Context(spec)


def _run_job(job):
    m, size, rep, lam = job
    return run_record(_WORKER_CTX, m, size, rep, lam)


def run_experiment(spec: ExperimentSpec, progress=None) -> list[ExperimentRecord]:
    """Execute every record; failures are kept as records with an error."""
    spec.validate()
    todo = jobs(spec)
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers, initializer=_init_worker, initargs=(spec,)) as pool:
            records = list(pool.map(_run_job, todo, chunksize=4))
    else:
        ctx = _Context(spec)
        records = []
        for k, (m, size, rep, lam) in enumerate(todo):
            records.append(run_record(ctx, m, size, rep, lam))
            if progress:
                progress(k + 1, len(todo), records[-1])
    order = {m.name: i for i, m in enumerate(spec.methods)}
    records.sort(key=lambda r: (r.lam, order[r.method], -1 if r.size is None else r.size, r.seed))
    return records


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results(records: list[ExperimentRecord], path, include_timing: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema={SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            row = asdict(r)
            if not include_timing:
                row["sketch_time_s"] = row["solve_time_s"] = 0.0
            w.writerow([_fmt(row[k]) for k in RECORD_FIELDS])


def read_results(path) -> list[ExperimentRecord]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != f"# schema={SCHEMA_VERSION}":
            raise ConfigError(f"{path}: unsupported results schema line {header!r}")
        out = []
        for row in csv.DictReader(fh):
            out.append(ExperimentRecord(
                row["method"], int(row["size"]) if row["size"] else None, int(row["seed"]), float(row["lambda"]),
                float(row["sketch_time_s"]), float(row["solve_time_s"]), float(row["objective_sketch_space"]),
                float(row["objective_full_data"]), float(row["approx_ratio"]), row["error"],
            ))
    return out


@dataclass
class SummaryRow:
    method: str
    size: int | None
    lam: float
    median_ratio: float
    count: int
    errors: int
    median_sketch_time_s: float


def summarize(records: list[ExperimentRecord]) -> list[SummaryRow]:
    groups: dict[tuple, list[ExperimentRecord]] = {}
    for r in records:
        groups.setdefault((r.method, r.size, r.lam), []).append(r)
    out = []
    for (method, size, lam), rs in groups.items():
        ok = [r for r in rs if not r.error]
        med = float(np.median([r.approx_ratio for r in ok])) if ok else math.nan
        tmed = float(np.median([r.sketch_time_s for r in ok])) if ok else math.nan
        out.append(SummaryRow(method, size, lam, med, len(ok), len(rs) - len(ok), tmed))
    return out


def write_summary(rows: list[SummaryRow], path) -> None:
    names = [f.name for f in fields(SummaryRow)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema={SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(["lambda" if k == "lam" else k for k in names])
        for r in rows:
            d = asdict(r)
            w.writerow([_fmt(d[k]) for k in names])


_COLORS = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"]


def render_svg(rows: list[SummaryRow], lam: float | None = None, log_y: bool = True, width: int = 640, height: int = 400) -> str:
    """Median ratio against target size, one polyline per method.

    Methods without a size (sgd) are drawn as horizontal dashed lines.
    """
    if lam is not None:
        rows = [r for r in rows if r.lam == lam]
    rows = [r for r in rows if math.isfinite(r.median_ratio) and r.median_ratio > 0]
    sizes = sorted({r.size for r in rows if r.size is not None})
    ml, mr, mt, mb = 60, 150, 20, 40
    pw, ph = width - ml - mr, height - mt - mb
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">']
    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    if not rows or not sizes:
        parts.append(f'<text x="{ml + 10}" y="{mt + 20}">no data</text></svg>')
        return "\n".join(parts)
    ys = [r.median_ratio for r in rows]
    tf = (lambda v: math.log10(v)) if log_y else (lambda v: v)
    lo, hi = tf(min(ys)), tf(max(ys))
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    xlo, xhi = math.log10(sizes[0]), math.log10(sizes[-1])
    if xhi - xlo < 1e-12:
        xlo, xhi = xlo - 0.5, xhi + 0.5

    def px(size):
        return ml + (math.log10(size) - xlo) / (xhi - xlo) * pw

    def py(v):
        return mt + ph - (tf(v) - lo) / (hi - lo) * ph

    for s in sizes:
        parts.append(f'<text x="{px(s):.1f}" y="{mt + ph + 15}" text-anchor="middle">{s}</text>')
    for frac in (0.0, 0.5, 1.0):
        v = lo + frac * (hi - lo)
        label = 10**v if log_y else v
        parts.append(f'<text x="{ml - 5}" y="{mt + ph - frac * ph + 4:.1f}" text-anchor="end">{label:.3g}</text>')
    parts.append(f'<text x="{ml + pw / 2}" y="{height - 5}" text-anchor="middle">target size (rows)</text>')
    parts.append(f'<text x="12" y="{mt + ph / 2}" transform="rotate(-90 12 {mt + ph / 2})" text-anchor="middle">median approx. ratio{" (log)" if log_y else ""}</text>')
    methods = list(dict.fromkeys(r.method for r in rows))
    for k, m in enumerate(methods):
        color = _COLORS[k % len(_COLORS)]
        pts = sorted((r.size, r.median_ratio) for r in rows if r.method == m and r.size is not None)
        flat = [r.median_ratio for r in rows if r.method == m and r.size is None]
        if pts:
            coords = " ".join(f"{px(s):.1f},{py(v):.1f}" for s, v in pts)
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
            parts.extend(f'<circle cx="{px(s):.1f}" cy="{py(v):.1f}" r="3" fill="{color}"/>' for s, v in pts)
        for v in flat:
            parts.append(f'<line x1="{ml}" x2="{ml + pw}" y1="{py(v):.1f}" y2="{py(v):.1f}" stroke="{color}" stroke-dasharray="5,3"/>')
        ly = mt + 15 + 18 * k
        parts.append(f'<line x1="{ml + pw + 10}" x2="{ml + pw + 30}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw + 35}" y="{ly + 4}">{m}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def resolve_seed(spec: ExperimentSpec, override: int | None = None) -> int:
    """Precedence: explicit override, then the environment variable, then the YAML value."""
    if override is not None:
        return override
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return spec.seed
