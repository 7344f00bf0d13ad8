"""Model adapters, CSV ingestion and synthetic scenario generators."""

from __future__ import annotations

import csv
import hashlib
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .core import NUMERIC, Dataset, categorical_column, numeric_column


class ModelError(RuntimeError):
    """Raised when a model cannot produce a valid prediction batch."""


class SchemaError(ValueError):
    pass


class ModelHandle:
    """A black-box prediction function with a column schema and evaluation counter.

    ``fn`` receives an ``(n_q, d)`` array (float, or object when the schema has
    categorical columns) and must return ``n_q`` predictions.
    """

    def __init__(self, name: str, fn: Callable[[np.ndarray], np.ndarray],
                 names: Sequence[str], kinds: Optional[Sequence[str]] = None,
                 levels: Optional[dict] = None, _parent: Optional["ModelHandle"] = None):
        self.name = name
        self.names = list(names)
        self.kinds = list(kinds) if kinds is not None else [NUMERIC] * len(self.names)
        self.levels = dict(levels or {})
        self._fn = fn
        self._parent = _parent
        self._lock = threading.Lock()
        self._count = 0

    @property
    def d(self) -> int:
        return len(self.names)

    @property
    def eval_counter(self) -> int:
        return self._count

    def _bump(self, k: int) -> None:
        with self._lock:
            self._count += k
        if self._parent is not None:
            self._parent._bump(k)

    def fork(self) -> "ModelHandle":
        """A view sharing this model's evaluator with its own counter.

        Evaluations through the fork are also counted on this handle.
        """
        return ModelHandle(self.name, self._fn, self.names, self.kinds, self.levels, _parent=self)

    def check_schema(self, data: Dataset) -> None:
        if data.names != self.names:
            raise SchemaError(f"dataset columns {data.names} do not match model schema {self.names}")

    def eval_batch(self, rows) -> np.ndarray:
        rows = np.asarray(rows)
        if rows.ndim != 2 or rows.shape[1] != self.d:
            raise SchemaError(f"expected rows of width {self.d}, got shape {rows.shape}")
        for j, levels in self.levels.items():
            if levels and not set(rows[:, j].tolist()) <= set(levels):
                raise SchemaError(f"unknown level in column {self.names[j]!r}")
        if rows.shape[0] == 0:
            return np.empty(0)
        try:
            out = np.asarray(self._fn(rows), dtype=float).reshape(-1)
        except ModelError:
            raise
        except (TypeError, ValueError, ArithmeticError) as exc:
            raise ModelError(f"model evaluation failed: {exc}") from exc
        if out.shape[0] != rows.shape[0]:
            raise ModelError("prediction count mismatch")
        if not np.all(np.isfinite(out)):
            raise ModelError("model returned non-finite value")
        self._bump(rows.shape[0])
        return out

    def __call__(self, rows) -> np.ndarray:
        return self.eval_batch(rows)

    def __repr__(self) -> str:
        return f"ModelHandle({self.name!r}, d={self.d})"


def python_model(fn: Callable[[np.ndarray], np.ndarray], names: Sequence[str], name: str = "python") -> ModelHandle:
    """Wrap a vectorised numeric function ``fn(X) -> y``."""
    return ModelHandle(name, lambda X: fn(np.asarray(X, dtype=float)), names)


def _default_names(d: int) -> list:
    return [f"x{j + 1}" for j in range(d)]


def _logistic(t):
    return 1.0 / (1.0 + np.exp(-t))


def _example1(X):
    return X[:, 0] + X[:, 1]


def _example2(X):
    return X[:, 0] + X[:, 1] ** 2


def _example3(X):
    return X[:, 0] + X[:, 1] + 2.0 * (X[:, 0] - 0.5) * (X[:, 1] - 0.5)


def _example5(X):
    return (4.0 * X[:, 0] + 3.87 * X[:, 1] ** 2 + 2.97 * _logistic(-5.0 + 10.0 * X[:, 2])
            + 13.86 * (X[:, 0] - 0.5) * (X[:, 1] - 0.5))


_FIXED = {
    "example1": (_example1, 2),
    "example2": (_example2, 2),
    "example3_interaction": (_example3, 2),
    "example5": (_example5, 4),
}

BUILTIN_NAMES = ("example1", "example2", "example3_interaction", "example5", "linear", "noisy_additive")


def _row_noise(X: np.ndarray, seed: int) -> np.ndarray:
    # uniform on (-sqrt(3), sqrt(3)): mean 0, variance 1
    salt = int(seed).to_bytes(8, "little", signed=True)
    out = np.empty(X.shape[0])
    for i, row in enumerate(np.ascontiguousarray(X, dtype="<f8")):
        h = hashlib.blake2b(row.tobytes(), digest_size=8, key=salt).digest()
        u = (int.from_bytes(h, "little") + 0.5) / 2.0 ** 64
        out[i] = (u - 0.5) * np.sqrt(12.0)
    return out


def make_builtin(name: str, params: Sequence[float] = (), names: Optional[Sequence[str]] = None) -> ModelHandle:
    """Closed-form test functions.

    ``linear`` takes its coefficients as ``params``; ``noisy_additive`` takes
    ``(sigma, seed)`` and returns the sum of all inputs plus a pure,
    row-keyed pseudo-random perturbation of standard deviation sigma.
    """
    params = list(params)
    if name in _FIXED:
        fn, d = _FIXED[name]
        if params:
            raise ValueError(f"builtin {name!r} takes no parameters")
    elif name == "linear":
        if not params:
            raise ValueError("builtin 'linear' needs at least one coefficient")
        beta = np.asarray(params, dtype=float)
        d = len(beta)

        def fn(X):
            return X @ beta
    elif name == "noisy_additive":
        if len(params) != 2:
            raise ValueError("builtin 'noisy_additive' takes (sigma, seed)")
        sigma, seed = float(params[0]), int(params[1])
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        d = len(names) if names is not None else 2

        def fn(X):
            return X.sum(axis=1) + sigma * _row_noise(X, seed)
    else:
        raise ValueError(f"unknown builtin model {name!r}")
    if names is None:
        names = _default_names(d)
    if len(names) != d:
        raise ValueError(f"builtin {name!r} has arity {d}, schema has {len(names)} columns")
    label = name if not params else f"{name}:{','.join(repr(float(p)) for p in params)}"
    return ModelHandle(label, lambda X: fn(np.asarray(X, dtype=float)), names)


def format_value(v) -> str:
    """Shortest round-trip text for numbers, raw text for level labels."""
    if isinstance(v, str):
        return v
    return repr(float(v))


def spawn_subprocess_model(command: str, names: Sequence[str], kinds: Optional[Sequence[str]] = None,
                           levels: Optional[dict] = None, timeout: Optional[float] = None) -> ModelHandle:
    """Attach an external model speaking the CSV-over-stdio protocol.

    Each batch launches ``command`` once (through the shell), writes a header
    line plus one CSV row per query to its stdin, and expects exactly one
    float per line on stdout.
    """
    names = list(names)
    run_lock = threading.Lock()

    def fn(rows):
        lines = [",".join(names)]
        lines.extend(",".join(format_value(v) for v in row) for row in rows)
        payload = "\n".join(lines) + "\n"
        with run_lock:
            try:
                proc = subprocess.run(command, shell=True, input=payload, capture_output=True,
                                      text=True, timeout=timeout)
            except subprocess.TimeoutExpired as exc:
                raise ModelError(f"model process timed out after {timeout}s") from exc
        if proc.returncode != 0:
            raise ModelError(f"model process failed (exit {proc.returncode})")
        out_lines = proc.stdout.split("\n")
        if out_lines and out_lines[-1] == "":
            out_lines.pop()
        if len(out_lines) != len(rows):
            raise ModelError(f"prediction count mismatch: expected {len(rows)}, got {len(out_lines)}")
        preds = np.empty(len(rows))
        for i, line in enumerate(out_lines):
            try:
                preds[i] = float(line.strip())
            except ValueError:
                raise ModelError(f"unparsable prediction on line {i + 1}: {line!r}") from None
        return preds

    return ModelHandle(f"cmd:{command}", fn, names, kinds, levels)


def _parse_float(text: str) -> Optional[float]:
    try:
        return float(text)
    except ValueError:
        return None


def load_dataset(path, response_name: Optional[str] = None, categorical: Sequence[str] = ()) -> Dataset:
    """Read a headed CSV; a column is numeric iff every entry parses as a float."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if len(body) < 2:
        raise ValueError(f"{path}: need at least 2 data rows")
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}: ragged row on line {lineno}")
    if response_name is not None and response_name not in header:
        raise ValueError(f"response column {response_name!r} not found in header")
    unknown = set(categorical) - set(header)
    if unknown:
        raise ValueError(f"unknown categorical columns: {sorted(unknown)}")
    cols, response = [], None
    for j, name in enumerate(header):
        raw = [r[j].strip() for r in body]
        if any(v == "" for v in raw):
            raise ValueError(f"{path}: column {name!r} has empty entries")
        parsed = [_parse_float(v) for v in raw]
        is_numeric = all(v is not None for v in parsed) and name not in categorical
        if name == response_name:
            if not is_numeric:
                raise ValueError(f"response column {name!r} is not numeric")
            response = np.array(parsed, dtype=float)
            continue
        cols.append(numeric_column(name, parsed) if is_numeric else categorical_column(name, raw))
    return Dataset(tuple(cols), response, response_name or "y")


def write_dataset(data: Dataset, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    header = data.names + ([data.response_name] if data.response is not None else [])
    writer.writerow(header)
    for i in range(data.n):
        row = [format_value(c.values[i]) for c in data.columns]
        if data.response is not None:
            row.append(format_value(data.response[i]))
        writer.writerow(row)


# ---------------------------------------------------------------------------
# scenarios

def normal_cdf(x):
    """Standard normal CDF (scalar or array)."""
    out = ndtr(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


COPULA4_CORR = np.array([
    [1.0, 0.0, 0.2, 0.0],
    [0.0, 1.0, 0.9, 0.0],
    [0.2, 0.9, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
])

SCENARIOS = ("segment2", "copula4", "gauss3", "iid_uniform")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    n: int
    seed: int = 0
    rho: float = 0.0
    corr: Optional[np.ndarray] = field(default=None, compare=False)
    beta: tuple = (1.0, 1.0, 0.5)
    sigma: Optional[float] = None
    d: int = 2

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.name!r}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    def truth(self) -> ModelHandle:
        """The data-generating response function of the scenario."""
        if self.name == "segment2":
            return make_builtin("example2")
        if self.name == "copula4":
            return make_builtin("example5")
        if self.name == "gauss3":
            return make_builtin("linear", self.beta)
        return make_builtin("linear", [1.0] * self.d)


class _Stream:
    """Seeded uniform/normal draws on a counter-based bit generator."""

    def __init__(self, seed: int):
        self._gen = np.random.Generator(np.random.Philox(int(seed) % 2 ** 64))

    def uniform(self, size) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, size) -> np.ndarray:
        # Box-Muller on (0, 1] uniforms
        count = int(np.prod(size))
        half = (count + 1) // 2
        u1 = 1.0 - self._gen.random(half)
        u2 = self._gen.random(half)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:count].reshape(size)

    def correlated_normal(self, n: int, corr: np.ndarray) -> np.ndarray:
        corr = np.asarray(corr, dtype=float)
        if corr.ndim != 2 or corr.shape[0] != corr.shape[1] or not np.allclose(corr, corr.T):
            raise ValueError("correlation matrix must be square and symmetric")
        try:
            chol = np.linalg.cholesky(corr)
        except np.linalg.LinAlgError:
            raise ValueError("correlation matrix is not positive definite") from None
        return self.normal((n, corr.shape[0])) @ chol.T


def generate_scenario(s: ScenarioSpec) -> Dataset:
    """Draw a predictor sample (and optional noisy response) for a named scenario."""
    rng = _Stream(s.seed)
    if s.name == "segment2":
        t = rng.uniform(s.n)
        X = t[:, None] + 0.05 * rng.normal((s.n, 2))
    elif s.name == "copula4":
        corr = COPULA4_CORR if s.corr is None else s.corr
        X = normal_cdf(rng.correlated_normal(s.n, corr))
    elif s.name == "gauss3":
        if not -1.0 < s.rho < 1.0:
            raise ValueError("gauss3 needs |rho| < 1")
        corr = np.array([[1.0, s.rho, 0.0], [s.rho, 1.0, 0.0], [0.0, 0.0, 1.0]])
        X = rng.correlated_normal(s.n, corr)
    else:
        if s.d < 1:
            raise ValueError("iid_uniform needs d >= 1")
        X = rng.uniform((s.n, s.d))
    y = None
    if s.sigma is not None:
        y = s.truth().eval_batch(X) + s.sigma * rng.normal(s.n)
    return Dataset.from_array(X, response=y)
