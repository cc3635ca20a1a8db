"""Datasets: label folding, l1 augmentation, generators and file formats."""

from __future__ import annotations

import csv
import itertools
import math
import re
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DataError, ParseError

FORMATS = ("dense_csv", "svmlight")


@dataclass
class Dataset:
    rows: np.ndarray | sp.csr_matrix
    labels: np.ndarray | None = None
    folded: bool = False
    target: np.ndarray | None = None
    name: str = "dataset"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float64)
            if self.labels.shape != (self.n,):
                raise DataError(f"{self.labels.size} labels for {self.n} rows")
            if not np.all(np.abs(self.labels) == 1):
                raise DataError("labels must be -1 or +1")
        if self.target is not None:
            self.target = np.asarray(self.target, dtype=np.float64)
            if self.target.shape != (self.n,):
                raise DataError(f"{self.target.size} targets for {self.n} rows")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def dense(self) -> np.ndarray:
        return self.rows.toarray() if sp.issparse(self.rows) else np.asarray(self.rows)

    def nnz(self) -> int:
        return int(self.rows.nnz) if sp.issparse(self.rows) else int(np.count_nonzero(self.rows))


def fold_labels(Z, Y, name: str = "dataset", provenance: dict | None = None) -> Dataset:
    """Rows x_i = -y_i z_i for labels in {-1, +1}."""
    if isinstance(Z, Dataset):
        if Z.folded:
            raise DataError("dataset is already folded")
        return fold_labels(Z.rows, Z.labels if Y is None else Y, Z.name, Z.provenance)
    Y = np.asarray(Y, dtype=np.float64).ravel()
    if Y.shape[0] != Z.shape[0]:
        raise DataError(f"{Y.size} labels for {Z.shape[0]} rows")
    if not np.all(np.abs(Y) == 1):
        raise DataError("labels must be -1 or +1")
    if sp.issparse(Z):
        rows = sp.diags(-Y) @ sp.csr_matrix(Z)
        rows = sp.csr_matrix(rows)
    else:
        rows = -Y[:, None] * np.asarray(Z, dtype=np.float64)
    return Dataset(rows, Y, True, None, name, dict(provenance or {}))


def augment_l1(X, Y, name: str = "dataset", provenance: dict | None = None) -> Dataset:
    """Rows (x_i, -y_i); the l1 objective is then |row . (beta, 1)|."""
    Y = np.asarray(Y, dtype=np.float64).ravel()
    if Y.shape[0] != X.shape[0]:
        raise DataError(f"{Y.size} targets for {X.shape[0]} rows")
    if sp.issparse(X):
        rows = sp.hstack([sp.csr_matrix(X), sp.csr_matrix(-Y[:, None])], format="csr")
    else:
        rows = np.hstack([np.asarray(X, dtype=np.float64), -Y[:, None]])
    prov = dict(provenance or {})
    prov["augmented"] = True
    return Dataset(rows, None, False, Y, name, prov)


def strip_augmentation(ds: Dataset):
    return ds.rows[:, :-1]


def synthetic_counts(n_half: int, d: int) -> dict[str, int]:
    return {
        "minus_ones": n_half - n_half // 10 - 2 * d,
        "plus_ones": n_half // 10,
        "minus_n": d,
        "heavy": d,
        "zeros": n_half,
    }


def gen_synthetic_heavy(n_half: int = 20000, d: int = 100, scale: float | None = None) -> Dataset:
    """Heavy-hitter instance of 2*n_half rows, returned in folded form.

    Unfolded points (all labeled +1 except the zero rows, labeled -1):
    n-n/10-2d copies of -1, n/10 copies of +1, d copies of -scale*1,
    one scale*e_i per coordinate, and n zero rows; scale defaults to n.
    """
    if d < 1 or n_half < 10 * d:
        raise DataError(f"need n_half >= 10*d, got n_half={n_half}, d={d}")
    scale = float(n_half if scale is None else scale)
    c = synthetic_counts(n_half, d)
    Z = np.vstack([
        -np.ones((c["minus_ones"], d)),
        np.ones((c["plus_ones"], d)),
        -scale * np.ones((c["minus_n"], d)),
        scale * np.eye(d),
        np.zeros((c["zeros"], d)),
    ])
    nonzero = 2 * n_half - c["zeros"]
    Y = np.concatenate([np.ones(nonzero), -np.ones(c["zeros"])])
    prov = {"generator": "synthetic_heavy", "n_half": n_half, "d": d, "scale": scale, **c}
    ds = fold_labels(Z, Y, name="synthetic_heavy", provenance=prov)
    ds.provenance["unfolded"] = Z
    return ds


def synthetic_unfolded(ds: Dataset):
    """The raw points and labels of a generated synthetic instance."""
    return ds.provenance["unfolded"], ds.labels


def gen_lower_bound(n: int, mu: float) -> Dataset:
    """1-d instance: one row sqrt(n), n - n/mu rows of -1, n/mu rows of +1."""
    if not mu > 10:
        raise DataError(f"mu must exceed 10, got {mu}")
    k = n / mu
    if k != int(k) or k < 1:
        raise DataError(f"n/mu must be a positive integer, got {k}")
    k = int(k)
    rows = np.concatenate([[math.sqrt(n)], -np.ones(n - k), np.ones(k)])[:, None]
    prov = {"generator": "lower_bound", "n": n, "mu": mu, "perfect_square": math.isqrt(n) ** 2 == n}
    # rows are already in folded form; there are n+1 of them
    return Dataset(rows, None, True, None, "lower_bound", prov)


def gen_l1_exact(n: int, d: int, seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """Augmented l1 instance with Y = X beta0 exactly."""
    rng = np.random.default_rng(seed)
    X = rng.integers(-5, 6, size=(n, d)).astype(np.float64)
    beta0 = rng.integers(-3, 4, size=d).astype(np.float64)
    ds = augment_l1(X, X @ beta0, name="l1_exact", provenance={"generator": "l1_exact", "seed": seed})
    return ds, beta0


TRANSFORMS = ("fold", "raw", "l1", "none")


def _parse_label(text: str, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"bad label {text!r}", line) from None
    if v not in (-1.0, 0.0, 1.0):
        raise ParseError(f"label {text!r} is not one of -1, +1, 0, 1", line)
    return v


def _parse_target(text: str, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"bad target {text!r}", line) from None
    if not math.isfinite(v):
        raise ParseError("non-finite target", line)
    return v


class _LabelMapper:
    """Maps 0/1 labels to -1/+1 while rejecting files that mix 0 and -1."""

    def __init__(self):
        self.seen_zero = False
        self.seen_minus = False

    def __call__(self, text: str, line: int) -> float:
        v = _parse_label(text, line)
        self.seen_zero |= v == 0
        self.seen_minus |= v == -1
        if self.seen_zero and self.seen_minus:
            raise ParseError("labels mix 0 and -1", line)
        return -1.0 if v == 0 else v


def _csv_records(path: Path, label_column: int | None):
    """Yield (line, features, label text or None) for every data line."""
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ParseError("non-numeric field", lineno) from None
            if width is None:
                width = len(vals)
                if label_column is not None and width < 2:
                    raise ParseError("need at least one feature and a label", lineno)
            elif len(vals) != width:
                raise ParseError(f"expected {width} fields, got {len(vals)}", lineno)
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite value", lineno)
            if label_column is None:
                yield lineno, vals, None
            else:
                col = label_column % width
                yield lineno, vals[:col] + vals[col + 1:], rec[col]


def _svm_parse(numbered_lines):
    """Yield (line, 0-based columns, values, label text) for every data line."""
    for lineno, line in numbered_lines:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        cols, vals = [], []
        last = 0
        for tok in parts[1:]:
            idx, sep, val = tok.partition(":")
            if not sep:
                raise ParseError(f"expected index:value, got {tok!r}", lineno)
            try:
                j, v = int(idx), float(val)
            except ValueError:
                raise ParseError(f"bad feature {tok!r}", lineno) from None
            if j < 1 or j <= last:
                raise ParseError(f"feature indices must be 1-based and increasing, got {j}", lineno)
            if not math.isfinite(v):
                raise ParseError("non-finite value", lineno)
            last = j
            cols.append(j - 1)
            vals.append(v)
        yield lineno, cols, vals, parts[0]


_SVM_LINE = re.compile(r"\S+(?:\s+\d+:[^\s:]+)*")


@dataclass
class _SvmBlock:
    linenos: list
    labels: list
    cols: np.ndarray
    vals: np.ndarray
    indptr: np.ndarray


def _svm_fast(numbered):
    """Vectorized parse of one block; None if any line needs the exact parser."""
    linenos, labels, feats, counts = [], [], [], []
    for lineno, line in numbered:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if not _SVM_LINE.fullmatch(line):
            return None
        head = line.split(None, 1)
        lab, rest = head[0], head[1] if len(head) > 1 else ""
        linenos.append(lineno)
        labels.append(lab)
        feats.append(rest)
        counts.append(rest.count(":"))
    total = sum(counts)
    flat = np.empty(0)
    if total:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DeprecationWarning)
            flat = np.fromstring(" ".join(feats).replace(":", " "), sep=" ")
    if flat.size != 2 * total:
        return None
    idx, vals = flat[0::2], flat[1::2]
    indptr = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    if not np.all(np.isfinite(vals)) or (idx.size and (idx.min() < 1 or idx.max() >= 2**53)):
        return None
    step = np.diff(idx)
    row_start = np.zeros(idx.size, dtype=bool)
    row_start[indptr[:-1][indptr[:-1] < idx.size]] = True
    if np.any((step <= 0) & ~row_start[1:]):
        return None
    return _SvmBlock(linenos, labels, idx.astype(np.int64) - 1, vals, indptr)


def _svm_slow(numbered):
    linenos, labels, cols, vals, indptr = [], [], [], [], [0]
    for lineno, c, v, lab in _svm_parse(numbered):
        linenos.append(lineno)
        labels.append(lab)
        cols.extend(c)
        vals.extend(v)
        indptr.append(len(cols))
    return _SvmBlock(linenos, labels, np.array(cols, dtype=np.int64), np.array(vals, dtype=np.float64), np.array(indptr, dtype=np.int64))


def _svm_blocks(path: Path, block_lines: int = 8192):
    """Parse an svmlight file in blocks of lines.

    Each block is parsed with numpy when every line is well formed and falls
    back to the per-line parser otherwise, which raises the precise error.
    """
    with open(path, encoding="utf-8") as fh:
        numbered = enumerate(fh, start=1)
        while True:
            chunk = list(itertools.islice(numbered, block_lines))
            if not chunk:
                return
            block = _svm_fast(chunk)
            if block is None:
                block = _svm_slow(chunk)
            if block.labels:
                yield block


def _svm_scan(path: Path) -> tuple[int, int]:
    """Row count and largest feature index, read from the last token of each line.

    Indices increase within a valid line, so only the last one matters. A
    last token in any other form goes through the full parser.
    """
    n = d = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if "#" in line:
                line = line.split("#", 1)[0]
            tail = line.rsplit(None, 1)
            if not tail:
                continue
            n += 1
            if len(tail) == 1:
                continue  # label only
            idx, sep, _ = tail[1].partition(":")
            if sep and idx.isdigit():
                d = max(d, int(idx))
            else:
                _, cols, _, _ = next(_svm_parse([(lineno, line)]))
                d = max(d, cols[-1] + 1)
    return n, d


def scan(path, format: str = "dense_csv", label_column: int | None = -1) -> tuple[int, int]:
    """(rows, feature columns) of a file, without the label column."""
    path = Path(path)
    n = d = 0
    if format == "dense_csv":
        for _, feats, _ in _csv_records(path, label_column):
            n += 1
            d = len(feats)
    elif format == "svmlight":
        n, d = _svm_scan(path)
        d = max(d, 1)
    else:
        raise DataError(f"unknown format {format!r}; expected one of {FORMATS}")
    if n == 0:
        raise DataError(f"{path} contains no data rows")
    return n, d


def iter_chunks(
    path,
    format: str = "dense_csv",
    transform: str = "fold",
    label_column: int = -1,
    intercept: bool = True,
    chunk_rows: int = 65536,
    d: int | None = None,
    info: dict | None = None,
):
    """Stream a file as blocks of transformed rows (dense for CSV, CSR for svmlight).

    ``transform`` is one of: fold (rows -y z), raw (z only), l1 (rows (z, -y)
    with a real-valued target) and none (every column is a feature). ``d`` is
    the feature count for svmlight files; it is found by a scan if omitted.
    ``info`` receives provenance flags such as the 0/1 label remap.
    """
    if transform not in TRANSFORMS:
        raise DataError(f"unknown transform {transform!r}; expected one of {TRANSFORMS}")
    path = Path(path)
    info = {} if info is None else info
    mapper = _LabelMapper()
    lab_col = None if transform == "none" else label_column
    parse = _parse_target if transform == "l1" else mapper

    def finish(X, y):
        if intercept:
            X = _add_intercept(X, {})
        if transform == "fold":
            X = (sp.diags(-y) @ X).tocsr() if sp.issparse(X) else -y[:, None] * X
        elif transform == "l1":
            X = sp.hstack([X, sp.csr_matrix(-y[:, None])], format="csr") if sp.issparse(X) else np.hstack([X, -y[:, None]])
        info["label_remap_01"] = mapper.seen_zero
        return X

    if format == "dense_csv":
        feats, ys = [], []
        for lineno, f, lab in _csv_records(path, lab_col):
            feats.append(f)
            ys.append(0.0 if lab is None else parse(lab, lineno))
            if len(feats) == chunk_rows:
                yield finish(np.array(feats, dtype=np.float64), np.array(ys))
                feats, ys = [], []
        if feats:
            yield finish(np.array(feats, dtype=np.float64), np.array(ys))
    elif format == "svmlight":
        if transform == "none":
            raise DataError("svmlight rows always carry a label; use fold, raw or l1")
        if d is None:
            d = scan(path, format)[1]
        for b in _svm_blocks(path, chunk_rows):
            over = np.flatnonzero(b.cols >= d)
            if over.size:
                row = int(np.searchsorted(b.indptr, over[0], side="right")) - 1
                raise ParseError(f"feature index {int(b.cols[over[0]]) + 1} exceeds d={d}", b.linenos[row])
            ys = np.array([parse(lab, ln) for lab, ln in zip(b.labels, b.linenos)])
            yield finish(sp.csr_matrix((b.vals, b.cols, b.indptr), shape=(len(ys), d)), ys)
    else:
        raise DataError(f"unknown format {format!r}; expected one of {FORMATS}")


def _add_intercept(X, prov: dict):
    prov["intercept"] = True
    if sp.issparse(X):
        return sp.hstack([X, sp.csr_matrix(np.ones((X.shape[0], 1)))], format="csr")
    return np.hstack([X, np.ones((X.shape[0], 1))])


def load(path, format: str = "dense_csv", label_column: int = -1, intercept: bool = True, transform: str = "fold") -> Dataset:
    """Read a whole dataset into memory.

    By default labels are folded into the rows; see ``iter_chunks`` for the
    other transforms.
    """
    path = Path(path)
    if transform not in TRANSFORMS:
        raise DataError(f"unknown transform {transform!r}; expected one of {TRANSFORMS}")
    prov = {"path": str(path), "format": format, "intercept": False, "transform": transform}
    lab_col = None if transform == "none" else label_column
    mapper = _LabelMapper()
    parse = _parse_target if transform == "l1" else mapper
    if format == "dense_csv":
        feats, ys = [], []
        for lineno, f, lab in _csv_records(path, lab_col):
            feats.append(f)
            ys.append(0.0 if lab is None else parse(lab, lineno))
        if not feats:
            raise DataError(f"{path} contains no data rows")
        X = np.array(feats, dtype=np.float64)
    elif format == "svmlight":
        blocks = list(_svm_blocks(path))
        ys = [parse(lab, ln) for b in blocks for lab, ln in zip(b.labels, b.linenos)]
        if not ys:
            raise DataError(f"{path} contains no data rows")
        cols = np.concatenate([b.cols for b in blocks])
        data = np.concatenate([b.vals for b in blocks])
        offsets = np.cumsum([0] + [b.indptr[-1] for b in blocks[:-1]])
        indptr = np.concatenate([[0]] + [b.indptr[1:] + o for b, o in zip(blocks, offsets)])
        d = int(cols.max()) + 1 if cols.size else 1
        X = sp.csr_matrix((data, cols, indptr), shape=(len(ys), d))
    else:
        raise DataError(f"unknown format {format!r}; expected one of {FORMATS}")
    y = np.array(ys)
    if mapper.seen_zero:
        prov["label_remap_01"] = True
    if intercept:
        X = _add_intercept(X, prov)
    if transform == "fold":
        return fold_labels(X, y, path.stem, prov)
    if transform == "raw":
        return Dataset(X, y, False, None, path.stem, prov)
    if transform == "l1":
        return augment_l1(X, y, path.stem, prov)
    return Dataset(X, None, False, None, path.stem, prov)


def write(ds: Dataset, path, format: str = "dense_csv") -> None:
    """Write a dataset so that ``load`` with matching flags reads it back.

    Folded rows are unfolded with their labels, augmented l1 rows are split
    back into features and target, and an intercept column added by ``load``
    is dropped. Folded datasets without labels are written with label -1,
    which folds back to the same rows. Unlabeled data gets no label column.
    """
    rows = ds.rows
    fmt = lambda y: str(int(y))
    if ds.target is not None:
        Z, labels, fmt = rows[:, :-1], ds.target, lambda y: repr(float(y))
    elif ds.folded and ds.labels is not None:
        Z = (sp.diags(-ds.labels) @ rows).tocsr() if sp.issparse(rows) else -ds.labels[:, None] * rows
        labels = ds.labels
    elif ds.folded:
        Z, labels = rows, -np.ones(ds.n)
    else:
        Z, labels = rows, ds.labels
    if ds.provenance.get("intercept"):
        Z = Z[:, :-1]
    path = Path(path)
    if format == "dense_csv":
        Z = Z.toarray() if sp.issparse(Z) else np.asarray(Z)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            header = [f"x{j}" for j in range(Z.shape[1])]
            if labels is None:
                w.writerow(header)
                w.writerows([repr(float(v)) for v in row] for row in Z)
            else:
                w.writerow(header + ["label"])
                for row, y in zip(Z, labels):
                    w.writerow([repr(float(v)) for v in row] + [fmt(y)])
    elif format == "svmlight":
        if labels is None:
            raise DataError("svmlight output needs labels or targets")
        Z = sp.csr_matrix(Z)
        with open(path, "w", encoding="utf-8") as fh:
            for i, y in enumerate(labels):
                start, stop = Z.indptr[i], Z.indptr[i + 1]
                feats = " ".join(f"{j + 1}:{float(v)!r}" for j, v in zip(Z.indices[start:stop], Z.data[start:stop]) if v != 0)
                fh.write(f"{fmt(y)} {feats}".rstrip() + "\n")
    else:
        raise DataError(f"unknown format {format!r}; expected one of {FORMATS}")


def with_rows(ds: Dataset, rows) -> Dataset:
    return replace(ds, rows=rows)
