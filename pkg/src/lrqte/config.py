"""Run configuration and its JSON schema."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field

from .ansatz import AnsatzKind, ConfigError
from .eom import DiagonalShift, EigenRescale, EigenTruncate, default_scheme
from .estimator import METHODS
from .paulis import Lattice


class ConfigKeyError(ConfigError):
    """Configuration error tied to a key (and line, when known)."""

    def __init__(self, key: str, msg: str, line: int | None = None):
        super().__init__(msg)
        self.key, self.msg, self.line = key, msg, line

    def __str__(self):
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.key}: {self.msg}"


@dataclass(frozen=True)
class RunConfig:
    lattice: Lattice
    lattice_desc: dict = field(default_factory=lambda: {"kind": "chain", "length": 2})
    jz: float = 1.0
    h: float = 0.5
    gamma: float = 1.0
    dt: float = 1e-2
    t_final: float = 7.0
    kind: AnsatzKind = AnsatzKind.I
    rank: int = 4
    layers: int = 2
    epsilon: float = 1e-4
    basis: object = "hamming"  # "hamming" or a list of bitstrings
    initial: str | None = None
    scheme: object = None  # None picks the per-ansatz default
    backend: str = "exact"
    method: str = "hybrid"
    shots: int = 20000
    seed: int = 0
    oracle: bool = True
    output: str = "out"
    stride: int = 1
    bound: bool = False
    bures_mode: str = "standard"
    sweep: dict | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigKeyError("evolve.dt", "must be positive")
        if not self.t_final >= 0:
            raise ConfigKeyError("evolve.t_final", "must be nonnegative")
        if self.backend not in ("exact", "shots"):
            raise ConfigKeyError("backend.mode", f"unknown backend {self.backend!r}")
        if self.method not in METHODS:
            raise ConfigKeyError("backend.method", f"unknown method {self.method!r}")
        if self.backend == "shots" and int(self.shots) <= 0:
            raise ConfigKeyError("backend.shots", "must be positive")
        if self.rank < 1 or self.rank > 2**self.lattice.n:
            raise ConfigKeyError("ansatz.rank", f"must be in 1..{2**self.lattice.n}")
        if self.layers < 1:
            raise ConfigKeyError("ansatz.layers", "must be positive")
        if (self.rank - 1) * self.epsilon >= 1 or self.epsilon < 0:
            raise ConfigKeyError("ansatz.epsilon", "weight floor incompatible with rank")
        if self.stride < 1:
            raise ConfigKeyError("output.stride", "must be positive")
        if self.bures_mode not in ("standard", "verbatim"):
            raise ConfigKeyError("metrics.bures", f"unknown mode {self.bures_mode!r}")
        if self.initial is not None and (len(self.initial) != self.lattice.n or set(self.initial) - set("01")):
            raise ConfigKeyError("ansatz.initial", f"must be a {self.lattice.n}-bit string")

    @property
    def resolved_scheme(self):
        return self.scheme if self.scheme is not None else default_scheme(self.kind, self.backend)

    def replace(self, **kw) -> RunConfig:
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        """Fully resolved settings (defaults filled in) in the JSON layout."""
        sch = self.resolved_scheme
        if isinstance(sch, EigenRescale):
            reg = {"scheme": "eigen_rescale", "a_c": sch.a_c, "r_c": sch.r_c}
        elif isinstance(sch, EigenTruncate):
            reg = {"scheme": "eigen_truncate", "delta_c": sch.delta_c}
        else:
            reg = {"scheme": "diagonal_shift", "lambda": sch.lam, "order": sch.order}
        return {
            "lattice": dict(self.lattice_desc),
            "model": {"jz": self.jz, "h": self.h, "gamma": self.gamma},
            "evolve": {"dt": self.dt, "t_final": self.t_final},
            "ansatz": {
                "kind": self.kind.value, "rank": self.rank, "layers": self.layers,
                "epsilon": self.epsilon, "basis": self.basis if isinstance(self.basis, str) else list(self.basis),
                "initial": self.initial or "1" * self.lattice.n,
            },
            "regularization": reg,
            "backend": {"mode": self.backend, "method": self.method, "shots": self.shots, "seed": self.seed},
            "oracle": {"enabled": self.oracle},
            "output": {"path": self.output, "stride": self.stride},
            "metrics": {"bound": self.bound, "bures": self.bures_mode},
        }

    def semantic_hash(self) -> str:
        """Hash of everything that affects results; the output location is excluded."""
        d = self.to_dict()
        d["output"] = {"stride": self.stride}
        if self.backend == "exact":
            d["backend"] = {"mode": "exact"}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# -- JSON parsing -------------------------------------------------------------------

SCHEMA = {
    "lattice": {"kind", "rows", "cols", "length"},
    "model": {"jz", "h", "gamma"},
    "evolve": {"dt", "t_final"},
    "ansatz": {"kind", "rank", "layers", "epsilon", "basis", "initial"},
    "regularization": {"scheme", "a_c", "r_c", "delta_c", "lambda", "order"},
    "backend": {"mode", "method", "shots", "seed"},
    "oracle": {"enabled"},
    "output": {"path", "stride"},
    "metrics": {"bound", "bures"},
    "sweep": {"rank", "layers", "basis"},
}


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key.split(".")[-1]), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _get(d: dict, key: str, typ, default, text: str):
    sec, name = key.split(".")
    val = d.get(sec, {}).get(name, default)
    if val is None:
        return None
    ok = isinstance(val, typ) and not (typ in (int, float, (int, float)) and isinstance(val, bool))
    if not ok:
        raise ConfigKeyError(key, f"expected {getattr(typ, '__name__', 'number')}, got {val!r}", _line_of(text, key))
    return val


def _lattice(d: dict, text: str) -> tuple[Lattice, dict]:
    lat = d.get("lattice", {"kind": "chain", "length": 2})
    kind = lat.get("kind", "chain")
    try:
        if kind == "chain":
            length = lat.get("length", lat.get("cols"))
            if not isinstance(length, int) or isinstance(length, bool):
                raise ConfigKeyError("lattice.length", "chain needs an integer length", _line_of(text, "lattice.length"))
            return Lattice.chain(length), {"kind": "chain", "length": length}
        if kind == "grid":
            rows, cols = lat.get("rows"), lat.get("cols")
            if not all(isinstance(v, int) and not isinstance(v, bool) for v in (rows, cols)):
                raise ConfigKeyError("lattice.rows", "grid needs integer rows and cols", _line_of(text, "lattice.rows"))
            return Lattice.grid(rows, cols), {"kind": "grid", "rows": rows, "cols": cols}
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigKeyError("lattice", str(exc), _line_of(text, "lattice")) from None
    raise ConfigKeyError("lattice.kind", f"unknown lattice kind {kind!r}", _line_of(text, "lattice.kind"))


def _scheme(d: dict, text: str):
    reg = d.get("regularization")
    if not reg or reg.get("scheme") in (None, "default"):
        return None
    name = reg["scheme"]
    num = (int, float)
    try:
        if name == "eigen_rescale":
            return EigenRescale(_get(d, "regularization.a_c", num, 1e-4, text), _get(d, "regularization.r_c", num, 1e-4, text))
        if name == "eigen_truncate":
            return EigenTruncate(_get(d, "regularization.delta_c", num, 1e-9, text))
        if name == "diagonal_shift":
            return DiagonalShift(_get(d, "regularization.lambda", num, 0.04, text), _get(d, "regularization.order", int, 2, text))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigKeyError("regularization", str(exc), _line_of(text, "regularization")) from None
    raise ConfigKeyError("regularization.scheme", f"unknown scheme {name!r}", _line_of(text, "regularization.scheme"))


def from_dict(d: dict, text: str = "") -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("configuration must be a JSON object")
    for sec, val in d.items():
        if sec not in SCHEMA:
            raise ConfigKeyError(sec, "unknown section", _line_of(text, sec))
        if not isinstance(val, dict):
            raise ConfigKeyError(sec, "must be an object", _line_of(text, sec))
        for k in val:
            if k not in SCHEMA[sec]:
                raise ConfigKeyError(f"{sec}.{k}", "unknown key", _line_of(text, f"{sec}.{k}"))
    lattice, desc = _lattice(d, text)
    num = (int, float)
    basis = d.get("ansatz", {}).get("basis", "hamming")
    if not (basis == "hamming" or (isinstance(basis, list) and all(isinstance(x, str) for x in basis))):
        raise ConfigKeyError("ansatz.basis", "expected \"hamming\" or a list of bitstrings", _line_of(text, "ansatz.basis"))
    try:
        kind = AnsatzKind.parse(_get(d, "ansatz.kind", str, "I", text))
    except ConfigError as exc:
        raise ConfigKeyError("ansatz.kind", str(exc), _line_of(text, "ansatz.kind")) from None
    sweep = d.get("sweep")
    if sweep is not None:
        for k, v in sweep.items():
            bad = not v if k != "basis" else not isinstance(v, dict) or not v
            if bad or (k != "basis" and not isinstance(v, list)):
                raise ConfigKeyError(f"sweep.{k}", "must be a non-empty list" if k != "basis" else "must map labels to bases",
                                _line_of(text, f"sweep.{k}"))
    try:
        return RunConfig(
            lattice=lattice,
            lattice_desc=desc,
            jz=float(_get(d, "model.jz", num, 1.0, text)),
            h=float(_get(d, "model.h", num, 0.5, text)),
            gamma=float(_get(d, "model.gamma", num, 1.0, text)),
            dt=float(_get(d, "evolve.dt", num, 1e-2, text)),
            t_final=float(_get(d, "evolve.t_final", num, 7.0, text)),
            kind=kind,
            rank=_get(d, "ansatz.rank", int, 4, text),
            layers=_get(d, "ansatz.layers", int, 2, text),
            epsilon=float(_get(d, "ansatz.epsilon", num, 1e-4, text)),
            basis=basis if isinstance(basis, str) else tuple(basis),
            initial=_get(d, "ansatz.initial", str, None, text),
            scheme=_scheme(d, text),
            backend=_get(d, "backend.mode", str, "exact", text),
            method=_get(d, "backend.method", str, "hybrid", text),
            shots=_get(d, "backend.shots", int, 20000, text),
            seed=_get(d, "backend.seed", int, 0, text),
            oracle=_get(d, "oracle.enabled", bool, True, text),
            output=_get(d, "output.path", str, "out", text),
            stride=_get(d, "output.stride", int, 1, text),
            bound=_get(d, "metrics.bound", bool, False, text),
            bures_mode=_get(d, "metrics.bures", str, "standard", text),
            sweep=sweep,
        )
    except ConfigKeyError as exc:
        if exc.line is None:
            exc.line = _line_of(text, exc.key)
        raise


def load(path) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}: invalid JSON: {exc.msg}") from None
    return from_dict(d, text)
