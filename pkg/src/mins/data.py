"""Input spaces, (context, x, y) datasets, generation and JSONL persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

FORMAT_NAME = "mins-dataset"
FORMAT_VERSION = 1


class DatasetError(ValueError):
    """Malformed, truncated or incompatible dataset."""


# ---------------------------------------------------------------------------
# input spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContinuousSpace:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise ValueError("bounds must be nonempty and of equal length")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ValueError("every lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    kind = "continuous"

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    def contains(self, x, atol: float = 1e-12) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            return np.zeros(len(x), dtype=bool)
        return (np.isfinite(x).all(axis=1)
                & (x >= self.lo - atol).all(axis=1) & (x <= self.hi + atol).all(axis=1))

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        """Map bounds to [-1, 1] per coordinate."""
        return 2.0 * (np.asarray(x, dtype=np.float64) - self.lo) / (self.hi - self.lo) - 1.0

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        return self.lo + 0.5 * (np.asarray(u) + 1.0) * (self.hi - self.lo)

    def to_json(self) -> dict:
        return {"kind": "continuous", "lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class CategoricalSpace:
    length: int
    alphabet: int

    kind = "categorical"

    def __post_init__(self):
        if int(self.length) < 1 or int(self.alphabet) < 2:
            raise ValueError("need length >= 1 and alphabet >= 2")

    @property
    def dim(self) -> int:
        return self.length

    @property
    def onehot_dim(self) -> int:
        return self.length * self.alphabet

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x))
        if x.shape[1] != self.length:
            return np.zeros(len(x), dtype=bool)
        ok_int = np.all(np.asarray(x, dtype=np.float64) == np.round(np.asarray(x, dtype=np.float64)), axis=1)
        return ok_int & (x >= 0).all(axis=1) & (x < self.alphabet).all(axis=1)

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.alphabet, size=(n, self.length))

    def onehot(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        out = np.zeros((len(x), self.length, self.alphabet))
        np.put_along_axis(out, x[..., None], 1.0, axis=2)
        return out.reshape(len(x), self.onehot_dim)

    def to_json(self) -> dict:
        return {"kind": "categorical", "length": int(self.length), "alphabet": int(self.alphabet)}


InputSpace = Union[ContinuousSpace, CategoricalSpace]


def space_from_json(obj: dict) -> InputSpace:
    try:
        if obj["kind"] == "continuous":
            return ContinuousSpace(tuple(obj["lower"]), tuple(obj["upper"]))
        if obj["kind"] == "categorical":
            return CategoricalSpace(int(obj["length"]), int(obj["alphabet"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"bad input space description: {exc}") from exc
    raise DatasetError(f"unknown input space kind {obj.get('kind')!r}")


# ---------------------------------------------------------------------------
# records and datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Record:
    x: np.ndarray
    y: float
    context: Optional[np.ndarray] = None

    def __eq__(self, other):
        if not isinstance(other, Record):
            return NotImplemented
        same_c = (self.context is None and other.context is None) or (
            self.context is not None and other.context is not None
            and np.array_equal(self.context, other.context))
        return same_c and np.array_equal(self.x, other.x) and self.y == other.y


class Dataset:
    """Immutable column store of records sharing one input space.

    ``X`` is ``(n, d)`` float for continuous spaces and ``(n, L)`` int for
    categorical ones; ``C`` is ``(n, k)`` or ``None`` for non-contextual data.
    ``synthetic`` flags records that were not labeled by the true function.
    """

    def __init__(self, space: InputSpace, X, y, C=None, synthetic=None, contextual: Optional[bool] = None):
        self.space = space
        self.contextual = bool(C is not None) if contextual is None else bool(contextual)
        dtype = np.int64 if space.kind == "categorical" else np.float64
        X = np.asarray(X, dtype=dtype).reshape(-1, space.dim)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if len(X) != len(y):
            raise DatasetError(f"{len(X)} inputs but {len(y)} scores")
        if self.contextual:
            if C is None:
                raise DatasetError("contextual dataset needs contexts")
            C = np.asarray(C, dtype=np.float64)
            C = C.reshape(len(y), -1)
        elif C is not None:
            raise DatasetError("contexts given for a non-contextual dataset")
        if len(y):
            if not np.isfinite(y).all():
                raise DatasetError("scores must be finite")
            bad = ~space.contains(X)
            if bad.any():
                raise DatasetError(f"record {int(np.argmax(bad))} lies outside the input space")
            if C is not None and not np.isfinite(C).all():
                raise DatasetError("contexts must be finite")
        synthetic = np.zeros(len(y), dtype=bool) if synthetic is None else np.asarray(synthetic, dtype=bool)
        for arr in (X, y, synthetic) + ((C,) if C is not None else ()):
            arr.setflags(write=False)
        self.X, self.y, self.C, self.synthetic = X, y, C, synthetic

    def __len__(self) -> int:
        return len(self.y)

    @property
    def records(self) -> List[Record]:
        return [Record(self.X[i].copy(), float(self.y[i]),
                       None if self.C is None else self.C[i].copy()) for i in range(len(self))]

    @classmethod
    def from_records(cls, space: InputSpace, records: Sequence[Record], contextual: bool = False) -> "Dataset":
        if not records:
            C = np.zeros((0, 0)) if contextual else None
            return cls(space, np.zeros((0, space.dim)), np.zeros(0), C, contextual=contextual)
        X = np.stack([np.asarray(r.x) for r in records])
        y = np.array([r.y for r in records], dtype=np.float64)
        C = np.stack([np.asarray(r.context, dtype=np.float64) for r in records]) if contextual else None
        return cls(space, X, y, C, contextual=contextual)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.space, self.X[idx], self.y[idx], None if self.C is None else self.C[idx],
                       self.synthetic[idx], contextual=self.contextual)

    def real(self) -> "Dataset":
        """Only records labeled by the true function."""
        return self.subset(np.flatnonzero(~self.synthetic))

    def concat(self, other: "Dataset") -> "Dataset":
        if other.space != self.space or other.contextual != self.contextual:
            raise DatasetError("cannot concatenate datasets over different spaces")
        C = None if self.C is None else np.concatenate([self.C, other.C])
        return Dataset(self.space, np.concatenate([self.X, other.X]), np.concatenate([self.y, other.y]),
                       C, np.concatenate([self.synthetic, other.synthetic]), contextual=self.contextual)

    def append(self, x, y: float, context=None) -> "Dataset":
        C = None if context is None else np.atleast_2d(context)
        return self.concat(Dataset(self.space, np.atleast_2d(x), [y], C, contextual=self.contextual))

    def require_nonempty(self) -> None:
        if len(self) == 0:
            raise DatasetError("dataset is empty")


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

POLICIES = ("uniform", "manifold-latent", "logging")


def generate_static_dataset(oracle, n: int, policy: str = "uniform", rng: Optional[np.random.Generator] = None,
                            space: Optional[InputSpace] = None, **policy_kwargs) -> Dataset:
    """Draw ``n`` inputs with ``policy`` and score them with ``oracle``.

    ``manifold-latent`` requires an oracle with ``sample_on_manifold`` and
    ``logging`` one with ``logging_policy`` (the contextual bandit task).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if policy not in POLICIES:
        raise ValueError(f"unknown sampling policy {policy!r}; expected one of {POLICIES}")
    rng = rng if rng is not None else np.random.default_rng(0)
    space = space or oracle.space
    if space != oracle.space:
        raise ValueError("space does not match the oracle's input space")
    if policy == "uniform":
        C = oracle.sample_contexts(n, rng) if oracle.contextual else None
        X = space.sample_uniform(n, rng)
        y = oracle.evaluate(X, C) if oracle.contextual else oracle.evaluate(X)
    elif policy == "manifold-latent":
        if not hasattr(oracle, "sample_on_manifold"):
            raise ValueError(f"oracle {oracle.name!r} has no manifold sampler")
        X, y = oracle.sample_on_manifold(n, rng, **policy_kwargs)
        C = None
    else:
        if not hasattr(oracle, "logging_policy"):
            raise ValueError(f"oracle {oracle.name!r} has no logging policy")
        C = oracle.sample_contexts(n, rng)
        X = oracle.logging_policy(C, rng, **policy_kwargs)
        y = oracle.evaluate(X, C)
    y = np.asarray(y, dtype=np.float64)
    if not np.isfinite(y).all():
        raise RuntimeError(f"oracle {oracle.name!r} returned non-finite scores")
    return Dataset(space, X, y, C, contextual=oracle.contextual)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _num(v) -> str:
    return format(float(v), ".17g")


def _vec(values: Iterable, integer: bool = False) -> str:
    if integer:
        return "[" + ", ".join(str(int(v)) for v in values) + "]"
    return "[" + ", ".join(_num(v) for v in values) + "]"


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> None:
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "space": dataset.space.to_json(),
        "contextual": dataset.contextual,
        "n_records": len(dataset),
    }
    integer = dataset.space.kind == "categorical"
    lines = [json.dumps(header, sort_keys=True)]
    for i in range(len(dataset)):
        parts = [f'"x": {_vec(dataset.X[i], integer)}', f'"y": {_num(dataset.y[i])}']
        if dataset.contextual:
            parts.insert(0, f'"c": {_vec(dataset.C[i])}')
        if dataset.synthetic[i]:
            parts.append('"synthetic": true')
        lines.append("{" + ", ".join(parts) + "}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(path: Union[str, Path]) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: bad header: {exc}") from exc
    if header.get("format") != FORMAT_NAME:
        raise DatasetError(f"{path}: not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetError(f"{path}: unsupported format version {header.get('version')!r}")
    space = space_from_json(header["space"])
    contextual = bool(header.get("contextual", False))
    expected = header.get("n_records")
    body = [ln for ln in lines[1:] if ln.strip()]
    if expected is None or len(body) != expected:
        raise DatasetError(f"{path}: expected {expected} records, found {len(body)} (truncated?)")
    if not text.endswith("\n"):
        raise DatasetError(f"{path}: missing final newline (truncated?)")
    X, y, C, syn = [], [], [], []
    for lineno, ln in enumerate(body, start=2):
        try:
            rec = json.loads(ln)
            X.append(rec["x"])
            y.append(float(rec["y"]))
            if contextual:
                C.append(rec["c"])
            syn.append(bool(rec.get("synthetic", False)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}:{lineno}: malformed record: {exc}") from exc
    if not body:
        C_arr = np.zeros((0, 0)) if contextual else None
        return Dataset(space, np.zeros((0, space.dim)), np.zeros(0), C_arr, contextual=contextual)
    return Dataset(space, np.array(X), np.array(y), np.array(C) if contextual else None,
                   np.array(syn), contextual=contextual)
