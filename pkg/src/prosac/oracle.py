"""Risk oracles: the black-box map (lambda, seed) -> empirical risk.

The certifier never touches a model or an attack directly; it only sees an
oracle.  Three implementations are provided:

* analytic -- a known risk surface; calibration outcomes are Bernoulli
  draws seeded deterministically from (seed, lambda), so every evaluation
  is a pure function of its inputs.
* table -- precomputed risks for every grid point across R independent
  attack runs.  The sentinel seed ``AVERAGE`` returns the run average;
  any other seed selects run ``seed % R``.
* subprocess -- an external attack runner spoken to over a line-delimited
  JSON protocol (below).  The runner owns the model, the attack, and the
  calibration set; the seed carries the attack's residual randomness.

Wire protocol ``prosac-oracle/1`` (UTF-8, one JSON object per line, newline
0x0A, over the child's stdin/stdout):

    handshake (child's first line):
        {"protocol": "prosac-oracle/1", "n": <int>, "metadata": {...}}
    request (parent -> child):
        {"id": <int>, "lambda": [<real>, ...], "seed": <int>,
         "per_sample": <bool>}
    response (child -> parent):
        {"id": <int>, "risk": <real>, "n": <int>}
        plus "correct": [0/1, ...] and "fooled": [0/1, ...] when the
        request asked for per-sample indicators
    error response (child -> parent):
        {"id": <int>, "error": "<message>"}
    shutdown: parent closes the child's stdin; child exits 0.

The runner must hold its calibration set fixed across all requests in one
process lifetime; the parent cannot verify this and treats it as a runner
obligation.

RiskTable CSV schema: header row names the grid axes, then run_1..run_R,
then n; one row per grid point in lexicographic point order.
"""

from __future__ import annotations

import abc
import csv
import hashlib
import json
import math
import os
import queue
import subprocess
import threading
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .grid import HyperGrid, UnknownPointError
from .hb_stats import RiskEstimate
from .seeds import hash_floats, rng_from

__all__ = [
    "AVERAGE",
    "PROTOCOL_NAME",
    "TIMEOUT_ENV_VAR",
    "OracleDescriptor",
    "OracleError",
    "ProtocolError",
    "NDriftError",
    "OracleTimeoutError",
    "RunnerCrashError",
    "RunnerReportedError",
    "RiskOracle",
    "AnalyticSurface",
    "AnalyticOracle",
    "RiskTable",
    "TableOracle",
    "SubprocessOracle",
    "CachedOracle",
    "cached",
    "load_table",
    "save_table",
]

PROTOCOL_NAME = "prosac-oracle/1"
TIMEOUT_ENV_VAR = "PROSAC_RUNNER_TIMEOUT_SECS"
DEFAULT_TIMEOUT_SECS = 300.0

# Sentinel seed: table oracles return the across-run average.
AVERAGE = -1


class OracleError(Exception):
    """Base class for oracle failures."""


class ProtocolError(OracleError):
    """Malformed handshake or response (bad JSON, bad fields, id mismatch)."""


class NDriftError(OracleError):
    """The runner reported a calibration size different from its handshake."""


class OracleTimeoutError(OracleError):
    """The runner did not answer within the configured timeout."""


class RunnerCrashError(OracleError):
    """The runner process exited or closed its output mid-conversation."""


class RunnerReportedError(OracleError):
    """The runner answered a request with an explicit error message."""


@dataclass(frozen=True)
class OracleDescriptor:
    """Identity and contract of one oracle instance.

    ``n`` is constant over the oracle's lifetime; ``attack_metadata`` is
    free-form (attack name, budget, norm, model id) and is echoed into
    verdicts for auditability.
    """

    kind: str
    n: int
    attack_metadata: Mapping[str, Any] = field(default_factory=dict)
    concurrency_safe: bool = True

    def __post_init__(self):
        if self.kind not in ("analytic", "table", "subprocess"):
            raise ValueError(f"unknown oracle kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("oracle n must be >= 1")
        # metadata and n are fixed for the oracle's lifetime
        object.__setattr__(
            self, "attack_metadata", MappingProxyType(dict(self.attack_metadata))
        )

    def to_jsonable(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "attack_metadata": dict(self.attack_metadata),
            "concurrency_safe": self.concurrency_safe,
        }


def _fingerprint(config: Mapping[str, Any]) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


class RiskOracle(abc.ABC):
    """Uniform oracle surface: evaluate(lambda, seed) -> RiskEstimate."""

    @property
    @abc.abstractmethod
    def descriptor(self) -> OracleDescriptor: ...

    @abc.abstractmethod
    def evaluate(self, lam, seed: int) -> RiskEstimate: ...

    @abc.abstractmethod
    def fingerprint(self) -> str:
        """Content hash of the oracle's configuration."""


# ---------------------------------------------------------------------------
# analytic surfaces


@dataclass(frozen=True)
class AnalyticSurface:
    """A named, serializable true-risk surface over hyperparameter vectors.

    Families:
        constant      risk = level
        gaussian_bump risk = base + amplitude * exp(-|lam - center|^2 / (2 w^2))
        ramp          risk = clip(offset + slopes . lam, 0, 1)
    """

    family: str
    params: Mapping[str, Any]

    def __post_init__(self):
        if self.family not in ("constant", "gaussian_bump", "ramp"):
            raise ValueError(f"unknown surface family {self.family!r}")
        object.__setattr__(self, "params", dict(self.params))

    def risk(self, lam) -> float:
        lam = np.asarray(lam, dtype=np.float64)
        p = self.params
        if self.family == "constant":
            value = float(p["level"])
        elif self.family == "gaussian_bump":
            center = np.asarray(p["center"], dtype=np.float64)
            d2 = float(np.sum((lam - center) ** 2))
            value = float(p.get("base", 0.0)) + float(p["amplitude"]) * math.exp(
                -d2 / (2.0 * float(p["width"]) ** 2)
            )
        else:  # ramp
            slopes = np.asarray(p["slopes"], dtype=np.float64)
            value = float(p.get("offset", 0.0)) + float(slopes @ lam)
        value = min(max(value, 0.0), 1.0)
        return value

    def max_over(self, grid: HyperGrid) -> float:
        return max(self.risk(pt) for pt in grid.points)

    def to_jsonable(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}

    @classmethod
    def from_jsonable(cls, obj: Mapping[str, Any]) -> "AnalyticSurface":
        return cls(family=obj["family"], params=obj["params"])


class AnalyticOracle(RiskOracle):
    """Synthetic oracle over a known risk surface.

    evaluate draws n Bernoulli indicators with success probability
    surface(lambda); the stream is seeded by (seed, content hash of
    lambda), so distinct points get independent draws and every result is
    reproducible from (configuration, lambda, seed) alone.
    """

    def __init__(
        self,
        surface: AnalyticSurface | Callable[[np.ndarray], float],
        n: int,
        metadata: Mapping[str, Any] | None = None,
        surface_id: str | None = None,
    ):
        self._surface = surface
        self._n = int(n)
        meta = dict(metadata or {})
        if isinstance(surface, AnalyticSurface):
            self._surface_desc: Any = surface.to_jsonable()
        else:
            self._surface_desc = surface_id or getattr(surface, "__qualname__", "callable")
        self._descriptor = OracleDescriptor(
            kind="analytic", n=self._n, attack_metadata=meta, concurrency_safe=True
        )

    @property
    def descriptor(self) -> OracleDescriptor:
        return self._descriptor

    def true_risk(self, lam) -> float:
        risk = (
            self._surface.risk(lam)
            if isinstance(self._surface, AnalyticSurface)
            else float(self._surface(np.asarray(lam, dtype=np.float64)))
        )
        if not (0.0 <= risk <= 1.0):
            raise OracleError(f"surface risk {risk} outside [0, 1] at {lam}")
        return risk

    def evaluate(self, lam, seed: int) -> RiskEstimate:
        risk = self.true_risk(lam)
        rng = rng_from(int(seed), "analytic-draw", hash_floats(lam))
        count = int((rng.random(self._n) < risk).sum())
        return RiskEstimate(count / self._n, self._n, lam=tuple(np.asarray(lam, dtype=float)))

    def fingerprint(self) -> str:
        return _fingerprint(
            {"kind": "analytic", "n": self._n, "surface": self._surface_desc,
             "metadata": dict(self._descriptor.attack_metadata)}
        )


# ---------------------------------------------------------------------------
# risk tables


@dataclass(frozen=True)
class RiskTable:
    """Precomputed risks: one row per grid point, one column per attack run."""

    grid: HyperGrid
    runs: np.ndarray  # (|grid|, R)
    n: int

    def __post_init__(self):
        runs = np.asarray(self.runs, dtype=np.float64)
        if runs.ndim != 2:
            raise ValueError("runs must be a 2-D matrix")
        if runs.shape[0] != len(self.grid):
            raise ValueError(
                f"runs has {runs.shape[0]} rows for a grid of {len(self.grid)} points"
            )
        if runs.shape[1] < 1:
            raise ValueError("need at least one run column")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        for (i, j), value in np.ndenumerate(runs):
            if not (0.0 <= value <= 1.0):
                raise ValueError(
                    f"risk {value} outside [0, 1] at grid point {i}, run {j + 1}"
                )
            if abs(value * self.n - round(value * self.n)) > 1e-9:
                raise ValueError(
                    f"risk {value} at grid point {i}, run {j + 1} is not a "
                    f"multiple of 1/{self.n}"
                )
        runs.setflags(write=False)
        object.__setattr__(self, "runs", runs)

    @property
    def n_runs(self) -> int:
        return int(self.runs.shape[1])


class TableOracle(RiskOracle):
    """Oracle backed by a RiskTable.

    seed == AVERAGE returns the across-run mean (computed as a plain
    left-to-right sum over runs, so external reimplementations can match it
    bit for bit); any other seed selects run ``seed % R``.
    """

    def __init__(self, table: RiskTable, metadata: Mapping[str, Any] | None = None):
        self._table = table
        self._descriptor = OracleDescriptor(
            kind="table", n=table.n, attack_metadata=dict(metadata or {}),
            concurrency_safe=True,
        )

    @property
    def descriptor(self) -> OracleDescriptor:
        return self._descriptor

    @property
    def table(self) -> RiskTable:
        return self._table

    def evaluate(self, lam, seed: int) -> RiskEstimate:
        idx = self._table.grid.index_of(lam)
        row = self._table.runs[idx]
        if int(seed) == AVERAGE:
            risk = sum(row.tolist()) / len(row)
        else:
            risk = float(row[int(seed) % len(row)])
        return RiskEstimate(risk, self._table.n, lam=tuple(np.asarray(lam, dtype=float)))

    def fingerprint(self) -> str:
        return _fingerprint(
            {
                "kind": "table",
                "n": self._table.n,
                "grid": self._table.grid.to_jsonable(),
                "runs_sha": hashlib.sha256(self._table.runs.tobytes()).hexdigest(),
                "metadata": dict(self._descriptor.attack_metadata),
            }
        )


def load_table(path: str, format: str = "csv") -> RiskTable:
    """Parse a RiskTable file; invariants are checked at load time."""
    if format == "csv":
        return _load_table_csv(path)
    if format == "json":
        return _load_table_json(path)
    raise ValueError(f"unknown table format {format!r}")


def _load_table_csv(path: str) -> RiskTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        run_cols = [h for h in header if h.startswith("run_")]
        if not run_cols or header[-1] != "n":
            raise ValueError(
                f"{path}: header must be <axes...>, run_1..run_R, n; got {header}"
            )
        n_axes = len(header) - len(run_cols) - 1
        if n_axes < 1:
            raise ValueError(f"{path}: no grid axis columns in header {header}")
        axis_names = header[:n_axes]
        expected_runs = [f"run_{i + 1}" for i in range(len(run_cols))]
        if header[n_axes:-1] != expected_runs:
            raise ValueError(
                f"{path}: run columns must be {expected_runs}, got {header[n_axes:-1]}"
            )
        points, rows, n_values = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(
                    f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from None
            points.append(values[:n_axes])
            rows.append(values[n_axes:-1])
            n_values.append(values[-1])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    if len(set(n_values)) != 1 or n_values[0] != int(n_values[0]) or n_values[0] < 1:
        raise ValueError(f"{path}: column n must hold one constant positive integer")
    grid = _grid_from_points(axis_names, np.asarray(points), path)
    try:
        return RiskTable(grid=grid, runs=np.asarray(rows), n=int(n_values[0]))
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def _grid_from_points(axis_names: Sequence[str], pts: np.ndarray, path: str) -> HyperGrid:
    """Rebuild the axes from row order and verify lexicographic layout."""
    axes = []
    for j, name in enumerate(axis_names):
        seen: list[float] = []
        for v in pts[:, j]:
            if v not in seen:
                seen.append(float(v))
        axes.append((name, seen))
    grid = HyperGrid(axes)
    if len(grid) != pts.shape[0]:
        raise ValueError(
            f"{path}: {pts.shape[0]} rows but axes imply {len(grid)} grid points"
        )
    if not np.array_equal(grid.points, pts):
        raise ValueError(f"{path}: rows are not in lexicographic grid order")
    return grid


def _load_table_json(path: str) -> RiskTable:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON: {exc}") from None
    for key in ("axes", "n", "runs"):
        if key not in obj:
            raise ValueError(f"{path}: missing key {key!r}")
    grid = HyperGrid.from_jsonable({"axes": obj["axes"]})
    try:
        return RiskTable(grid=grid, runs=np.asarray(obj["runs"], dtype=np.float64),
                         n=int(obj["n"]))
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def save_table(table: RiskTable, path: str, format: str = "csv") -> None:
    """Write a RiskTable in the schema load_table expects."""
    if format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            header = list(table.grid.axis_names) + [
                f"run_{i + 1}" for i in range(table.n_runs)
            ] + ["n"]
            writer.writerow(header)
            for pt, row in zip(table.grid.points, table.runs):
                writer.writerow(
                    [repr(float(v)) for v in pt]
                    + [repr(float(v)) for v in row]
                    + [table.n]
                )
    elif format == "json":
        obj = {
            "axes": table.grid.to_jsonable()["axes"],
            "n": table.n,
            "runs": table.runs.tolist(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, sort_keys=True, indent=2)
            fh.write("\n")
    else:
        raise ValueError(f"unknown table format {format!r}")


# ---------------------------------------------------------------------------
# subprocess oracle


def default_timeout() -> float:
    raw = os.environ.get(TIMEOUT_ENV_VAR)
    if raw is None:
        return DEFAULT_TIMEOUT_SECS
    try:
        value = float(raw)
    except ValueError:
        raise ValueError(f"{TIMEOUT_ENV_VAR}={raw!r} is not a number") from None
    if value <= 0:
        raise ValueError(f"{TIMEOUT_ENV_VAR} must be positive")
    return value


class SubprocessOracle(RiskOracle):
    """Oracle speaking prosac-oracle/1 to a child process.

    One request is in flight at a time (access to the child's pipes is
    serialized); use several oracle instances for parallelism.  The child
    is spawned and the handshake consumed at construction time.
    """

    def __init__(
        self,
        command: Sequence[str],
        per_sample: bool = False,
        timeout: float | None = None,
        metadata: Mapping[str, Any] | None = None,
        cwd: str | None = None,
    ):
        self._command = [str(c) for c in command]
        self._per_sample = bool(per_sample)
        self._timeout = default_timeout() if timeout is None else float(timeout)
        self._lock = threading.Lock()
        self._next_id = 0
        self._lines: "queue.Queue[str | None]" = queue.Queue()
        try:
            self._proc = subprocess.Popen(
                self._command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
                cwd=cwd,
            )
        except OSError as exc:
            raise RunnerCrashError(f"could not start runner {self._command}: {exc}") from exc
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        handshake = self._parse_json(self._read_line(), context="handshake")
        if handshake.get("protocol") != PROTOCOL_NAME:
            raise ProtocolError(
                f"handshake protocol {handshake.get('protocol')!r} != {PROTOCOL_NAME!r}"
            )
        n = handshake.get("n")
        if not isinstance(n, int) or n < 1:
            raise ProtocolError(f"handshake n={n!r} is not a positive integer")
        meta = dict(handshake.get("metadata") or {})
        meta.update(metadata or {})
        self._descriptor = OracleDescriptor(
            kind="subprocess", n=n, attack_metadata=meta, concurrency_safe=False
        )

    def _pump(self):
        try:
            for line in self._proc.stdout:
                self._lines.put(line)
        finally:
            self._lines.put(None)

    def _read_line(self) -> str:
        try:
            line = self._lines.get(timeout=self._timeout)
        except queue.Empty:
            self._proc.kill()
            raise OracleTimeoutError(
                f"runner produced no line within {self._timeout} s"
            ) from None
        if line is None:
            raise RunnerCrashError(
                f"runner closed its output (exit code {self._proc.poll()})"
            )
        return line

    @staticmethod
    def _parse_json(line: str, context: str) -> dict:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            snippet = line.strip()[:200]
            raise ProtocolError(f"non-JSON {context} line: {snippet!r}") from None
        if not isinstance(obj, dict):
            raise ProtocolError(f"{context} is not a JSON object: {line.strip()[:200]!r}")
        return obj

    @property
    def descriptor(self) -> OracleDescriptor:
        return self._descriptor

    def evaluate(self, lam, seed: int) -> RiskEstimate:
        lam = np.asarray(lam, dtype=np.float64)
        with self._lock:
            if self._proc.poll() is not None:
                raise RunnerCrashError(
                    f"runner already exited with code {self._proc.returncode}"
                )
            self._next_id += 1
            request = {
                "id": self._next_id,
                "lambda": [float(v) for v in lam],
                "seed": int(seed),
                "per_sample": self._per_sample,
            }
            try:
                self._proc.stdin.write(json.dumps(request) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise RunnerCrashError(f"runner pipe closed: {exc}") from exc
            response = self._parse_json(self._read_line(), context="response")
        return self._decode_response(response, request, lam)

    def _decode_response(self, response: dict, request: dict, lam: np.ndarray) -> RiskEstimate:
        if response.get("id") != request["id"]:
            raise ProtocolError(
                f"response id {response.get('id')!r} != request id {request['id']}"
            )
        if "error" in response:
            raise RunnerReportedError(str(response["error"]))
        n = self._descriptor.n
        if response.get("n") != n:
            raise NDriftError(
                f"runner reported n={response.get('n')!r}, handshake said n={n}"
            )
        risk = response.get("risk")
        if not isinstance(risk, (int, float)) or not (0.0 <= risk <= 1.0):
            raise ProtocolError(f"risk {risk!r} outside [0, 1]")
        # AVERAGE-seed responses may be run averages on the finer 1/(n*R)
        # lattice; the 1/n lattice is enforced for ordinary seeds only.
        if request["seed"] != AVERAGE and abs(risk * n - round(risk * n)) > 1e-9:
            raise ProtocolError(f"risk {risk} is not a multiple of 1/{n}")
        per_sample = None
        if self._per_sample:
            correct = response.get("correct")
            fooled = response.get("fooled")
            if (
                not isinstance(correct, list)
                or not isinstance(fooled, list)
                or len(correct) != n
                or len(fooled) != n
                or not all(v in (0, 1) for v in correct + fooled)
            ):
                raise ProtocolError("per-sample arrays missing or malformed")
            count = sum(c * f for c, f in zip(correct, fooled))
            if float(risk) != count / n:
                raise ProtocolError(
                    f"risk {risk} inconsistent with per-sample reduction {count}/{n}"
                )
            per_sample = np.column_stack(
                [np.asarray(correct, dtype=np.uint8), np.asarray(fooled, dtype=np.uint8)]
            )
        return RiskEstimate(float(risk), n, lam=tuple(lam), per_sample=per_sample)

    def fingerprint(self) -> str:
        return _fingerprint(
            {
                "kind": "subprocess",
                "command": self._command,
                "n": self._descriptor.n,
                "metadata": dict(self._descriptor.attack_metadata),
                "per_sample": self._per_sample,
            }
        )

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "SubprocessOracle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


# ---------------------------------------------------------------------------
# caching wrapper


class CachedOracle(RiskOracle):
    """Memoizes evaluate on (lambda, seed); hits are bit-identical to misses."""

    def __init__(self, inner: RiskOracle):
        self._inner = inner
        self._cache: dict[tuple[bytes, int], RiskEstimate] = {}
        self._lock = threading.Lock()
        self.calls_to_inner = 0
        self.cache_hits = 0

    @property
    def inner(self) -> RiskOracle:
        return self._inner

    @property
    def descriptor(self) -> OracleDescriptor:
        return self._inner.descriptor

    def evaluate(self, lam, seed: int) -> RiskEstimate:
        key = (np.asarray(lam, dtype=np.float64).tobytes(), int(seed))
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self.cache_hits += 1
                return hit
        result = self._inner.evaluate(lam, seed)
        with self._lock:
            self._cache.setdefault(key, result)
            self.calls_to_inner += 1
        return result

    def fingerprint(self) -> str:
        return self._inner.fingerprint()


def cached(oracle: RiskOracle) -> CachedOracle:
    """Wrap an oracle with a transparent (lambda, seed) memo."""
    return CachedOracle(oracle)
