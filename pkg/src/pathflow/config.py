"""Run configuration: JSON schema, validation, canonical round-trip dump."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .errors import ParseError, ValidationError

MODES = ("solve", "optimize", "sweep-alpha", "oracle-w2")
PLACEMENTS = ("both", "bulk", "curve")
DEFAULT_SWEEP = (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclass
class DataEndConfig:
    bumps: list
    placement: str = "both"


@dataclass
class PathOptBlock:
    eps_fd: float = 1e-4
    step0: float = 0.01
    c0: float = 1e-3
    c_low: float = 1e-6
    n_iter: int = 5
    it_max: int = 200
    inner_alg_iters: int = 1
    tol: float = 1e-4
    p: float = 3.0


@dataclass
class RunConfig:
    mode: str = "solve"
    h: float = 0.05
    n_t: int = 25
    alpha1: float = 1.0
    alpha2: float = 1.0
    r1: float = 1.0
    r2: float = 1.0
    tol: float = 1e-5
    it_max: int = 2000
    solver_tol: float = 1e-8
    linear_solver: str = "auto"
    delta: float = 0.05
    curve: list = field(default_factory=list)
    initial: DataEndConfig | None = None
    final: DataEndConfig | None = None
    pathopt: PathOptBlock | None = None
    sweep_alphas: list | None = None
    max_atoms: int = 200
    out_dir: str = "out"
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: v for k, v in d.items() if v is not None}


def _check_end(name: str, raw, violations) -> DataEndConfig | None:
    if not isinstance(raw, dict):
        violations.append(f"data.{name}: must be an object")
        return None
    placement = raw.get("placement", "both")
    if placement not in PLACEMENTS:
        violations.append(f"data.{name}.placement: must be one of {PLACEMENTS}")
    bumps = raw.get("bumps")
    if not isinstance(bumps, list) or not bumps:
        violations.append(f"data.{name}.bumps: must be a nonempty list")
        return None
    clean = []
    for i, b in enumerate(bumps):
        if not (isinstance(b, (list, tuple)) and len(b) == 4):
            violations.append(f"data.{name}.bumps[{i}]: must be [mx, my, sigma, weight]")
            continue
        mx, my, sigma, weight = (float(v) for v in b)
        if sigma <= 0:
            violations.append(f"data.{name}.bumps[{i}].sigma: must be positive")
        if weight <= 0:
            violations.append(f"data.{name}.bumps[{i}].weight: must be positive")
        clean.append([mx, my, sigma, weight])
    return DataEndConfig(bumps=clean, placement=placement)


def config_from_dict(raw: dict) -> RunConfig:
    """Validate a parsed config; aggregates every violation before raising."""
    violations = []
    cfg = RunConfig()

    mode = raw.get("mode", "solve")
    if mode not in MODES:
        violations.append(f"mode: must be one of {MODES}, got {mode!r}")
    cfg.mode = mode

    def num(key, default, positive=True, integer=False, lo=None, hi=None):
        val = raw.get(key, default)
        try:
            val = int(val) if integer else float(val)
        except (TypeError, ValueError):
            violations.append(f"{key}: not a number")
            return default
        if positive and val <= 0:
            violations.append(f"{key}: must be positive, got {val}")
        if lo is not None and val < lo:
            violations.append(f"{key}: must be >= {lo}")
        if hi is not None and val >= hi:
            violations.append(f"{key}: must be < {hi}")
        return val

    cfg.h = num("h", cfg.h, hi=0.5 + 1e-12)
    cfg.n_t = num("n_t", cfg.n_t, integer=True, lo=1)
    cfg.alpha1 = num("alpha1", cfg.alpha1)
    cfg.alpha2 = num("alpha2", cfg.alpha2)
    cfg.r1 = num("r1", cfg.r1)
    cfg.r2 = num("r2", cfg.r2)
    cfg.tol = num("tol", cfg.tol)
    cfg.it_max = num("it_max", cfg.it_max, positive=False, integer=True, lo=0)
    cfg.solver_tol = num("solver_tol", cfg.solver_tol)
    cfg.delta = num("delta", cfg.delta, hi=0.5)
    cfg.max_atoms = num("max_atoms", cfg.max_atoms, integer=True, lo=4)
    cfg.seed = num("seed", cfg.seed, positive=False, integer=True)
    cfg.out_dir = str(raw.get("out_dir", cfg.out_dir))

    cfg.linear_solver = raw.get("linear_solver", "auto")
    if cfg.linear_solver not in ("auto", "tensor", "cg", "direct"):
        violations.append(f"linear_solver: unknown backend {cfg.linear_solver!r}")

    curve = raw.get("curve", [])
    if not isinstance(curve, list):
        violations.append("curve: must be a list of [x, y] points")
    else:
        pts = []
        for i, p in enumerate(curve):
            if not (isinstance(p, (list, tuple)) and len(p) == 2):
                violations.append(f"curve[{i}]: must be [x, y]")
            else:
                pts.append([float(p[0]), float(p[1])])
        cfg.curve = pts

    data = raw.get("data")
    if mode in ("solve", "optimize", "sweep-alpha", "oracle-w2"):
        if not isinstance(data, dict) or "initial" not in data or "final" not in data:
            violations.append("data: block with 'initial' and 'final' ends is required")
        else:
            cfg.initial = _check_end("initial", data["initial"], violations)
            cfg.final = _check_end("final", data["final"], violations)

    if mode == "optimize":
        block = raw.get("pathopt")
        if not isinstance(block, dict):
            violations.append("pathopt: block is required for mode=optimize")
        else:
            po = PathOptBlock()
            for key in ("eps_fd", "step0", "c0", "c_low", "tol", "p"):
                if key in block:
                    setattr(po, key, float(block[key]))
                if getattr(po, key) <= 0:
                    violations.append(f"pathopt.{key}: must be positive")
            for key in ("n_iter", "it_max", "inner_alg_iters"):
                if key in block:
                    setattr(po, key, int(block[key]))
            if po.c_low >= po.c0:
                violations.append("pathopt.c_low: must be below pathopt.c0")
            if po.p <= 2:
                violations.append("pathopt.p: kernel exponent must exceed 2")
            cfg.pathopt = po
        if len(cfg.curve) < 2:
            violations.append("curve: mode=optimize needs an initial polyline (>= 2 points)")

    if mode == "sweep-alpha":
        alphas = raw.get("sweep_alphas", list(DEFAULT_SWEEP))
        if not isinstance(alphas, list) or not alphas or any(float(a) <= 0 for a in alphas):
            violations.append("sweep_alphas: must be a nonempty list of positive numbers")
        else:
            cfg.sweep_alphas = [float(a) for a in alphas]

    if violations:
        raise ValidationError(violations)
    return cfg


def load_config(path) -> RunConfig:
    """Parse and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be a JSON object")
    cfg = config_from_dict(raw)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Canonical JSON text (sorted keys); load(dump(c)) == c."""
    d = cfg.to_dict()
    # Rebuild the nested data block in the schema's input shape.
    data = {}
    for name in ("initial", "final"):
        end = d.pop(name, None)
        if end is not None:
            data[name] = end
    if data:
        d["data"] = data
    return json.dumps(d, indent=2, sort_keys=True)
