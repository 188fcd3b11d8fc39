"""Command-line entry point: ``gjms spectrum | negcount | battery``.

Exit codes: 0 pass, 1 invariance or growth check failed, 2 configuration
error, 3 indeterminate verdict.  Outputs are deterministic: CSV with a
header row and 17 significant digits, JSON with sorted keys.

A run can be described by a TOML file (``--config``); flags given on the
command line override it::

    schema_version = 1
    command = "battery"
    N = 32
    [model]
    kind = "torus"        # or "heisenberg"
    n = 3                 # torus dimension (d = 1 and s = ... for heisenberg)
    [[model.upsilon]]     # conformal factor of the model, optional
    index = [1, 0, 0]
    amplitude = 0.1
    phase = 0.0
    [[samples]]           # battery samples, one table per Upsilon
    upsilon = [{index = [1, 0, 0], amplitude = 0.1}]
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence


try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import conformal, heisenberg, operators, spectral
from .geometry import FlatTorus, Heisenberg, ManifoldModel, ModelKind, TrigPoly, build_lattice

log = logging.getLogger("gjms")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_INDETERMINATE = 0, 1, 2, 3
SCHEMA_VERSION = 1
#: growth window for the d = 1 Yamabe slope check
SLOPE_WINDOW = (2.7, 3.3)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    kind: str = "heisenberg"
    d: int = 1
    n: int = 3
    s: float = 1.0
    N: Optional[int] = None
    op: str = "delta"
    analytic: Optional[bool] = None
    cutoff: Optional[float] = None
    count: Optional[int] = None
    s_sweep: List[float] = field(default_factory=list)
    k: int = 1
    upsilon: list = field(default_factory=list)
    samples: list = field(default_factory=list)
    out: Optional[str] = None
    tol_scale: float = 1.0

    def model(self) -> ManifoldModel:
        ups = _trig(self.upsilon, self._dim()) if self.upsilon else None
        try:
            if self.kind == "torus":
                return FlatTorus(self.n, conformal_factor=ups)
            return Heisenberg(self.d, self.s, conformal_factor=ups)
        except ValueError as exc:
            raise ConfigError(f"invalid model: {exc}") from exc

    def _dim(self) -> int:
        return self.n if self.kind == "torus" else 2 * self.d + 1

    def to_dict(self) -> dict:
        return asdict(self)


def _trig(terms, dim: int) -> TrigPoly:
    out = []
    for i, t in enumerate(terms):
        if not isinstance(t, dict) or "index" not in t or "amplitude" not in t:
            raise ConfigError(f"upsilon term {i}: needs 'index' and 'amplitude'")
        idx = t["index"]
        if not isinstance(idx, list) or len(idx) != dim or not all(isinstance(v, int) for v in idx):
            raise ConfigError(f"upsilon term {i}: 'index' must be {dim} integers")
        try:
            out.append((tuple(idx), float(t["amplitude"]), float(t.get("phase", 0.0))))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"upsilon term {i}: {exc}") from exc
    return TrigPoly(tuple(out))


_MODEL_KEYS = {"kind", "d", "n", "s", "upsilon"}
_TOP_KEYS = {"schema_version", "command", "model", "N", "op", "analytic", "cutoff", "count",
             "s_sweep", "k", "samples", "out", "tol_scale"}


def load_config(path: str) -> dict:
    """Parse and validate a TOML run file into ``RunConfig`` keyword arguments."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from exc
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")
    out = {k: v for k, v in raw.items() if k not in ("schema_version", "model")}
    model = raw.get("model", {})
    if not isinstance(model, dict):
        raise ConfigError("'model' must be a table")
    unknown = set(model) - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"unknown model keys: {sorted(unknown)}")
    out.update(model)
    if "kind" in out and out["kind"] not in ("torus", "heisenberg", "heis"):
        raise ConfigError(f"model kind must be 'torus' or 'heisenberg', got {out['kind']!r}")
    return out


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gjms", description="Spectra and conformal invariants of GJMS operators.")
    p.add_argument("command", choices=["spectrum", "negcount", "battery"])
    p.add_argument("--config", help="TOML run file")
    p.add_argument("--model", choices=["torus", "heis", "heisenberg"])
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--s", type=float)
    p.add_argument("--s-sweep", type=str, help="comma-separated s values")
    p.add_argument("--N", type=int, help="grid points per axis")
    p.add_argument("--op", choices=["delta", "yamabe", "paneitz"])
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--analytic", dest="analytic", action="store_true", default=None)
    mode.add_argument("--grid", dest="analytic", action="store_false")
    p.add_argument("--cutoff", type=float, help="analytic eigenvalue cutoff")
    p.add_argument("--count", type=int, help="number of lowest grid eigenvalues")
    p.add_argument("--k", type=int)
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--tol-scale", type=float)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_config(argv: Sequence[str]) -> RunConfig:
    args = _parser().parse_args(argv)
    values = load_config(args.config) if args.config else {}
    cli = {
        "kind": args.model, "d": args.d, "n": args.n, "s": args.s, "N": args.N, "op": args.op,
        "analytic": args.analytic, "cutoff": args.cutoff, "count": args.count, "k": args.k,
        "out": args.out, "tol_scale": args.tol_scale,
    }
    if args.s_sweep is not None:
        try:
            cli["s_sweep"] = [float(v) for v in args.s_sweep.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --s-sweep: {exc}") from exc
    values.update({k: v for k, v in cli.items() if v is not None})
    values["command"] = args.command
    if values.get("kind") == "heis":
        values["kind"] = "heisenberg"
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.op not in heisenberg.OPERATORS:
        raise ConfigError(f"op must be one of {heisenberg.OPERATORS}")
    if cfg.N is not None and (cfg.N < 4 or cfg.N % 2):
        raise ConfigError("N must be even and at least 4")
    return cfg


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("GJMS_THREADS", "1")))
    except ValueError:
        return 1


def _open_out(path):
    return open(path, "w", newline="") if path else _Stdout()


class _Stdout:
    def __enter__(self):
        return sys.stdout

    def __exit__(self, *exc):
        sys.stdout.flush()
        return False


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def cmd_spectrum(cfg: RunConfig) -> int:
    model = cfg.model()
    analytic = cfg.analytic if cfg.analytic is not None else cfg.N is None
    if analytic:
        if model.kind is not ModelKind.HEISENBERG:
            raise ConfigError("analytic spectra exist for the Heisenberg model only")
        if model.is_rescaled:
            raise ConfigError("analytic spectra exist for the bare metric only")
        if cfg.cutoff is None:
            raise ConfigError("--analytic needs --cutoff")
        try:
            res = heisenberg.enumerate_spectrum(cfg.op, model.d, model.s, cfg.cutoff)
        except OverflowError as exc:
            raise ConfigError(str(exc)) from exc
        with _open_out(cfg.out) as fh:
            _write_classes(res, fh)
        return EXIT_PASS
    if cfg.N is None:
        raise ConfigError("grid spectra need --N")
    lattice = build_lattice(model, cfg.N)
    op = _assemble(cfg.op, model, lattice)
    count = cfg.count if cfg.count is not None else lattice.size
    if count > spectral.DENSE_LIMIT and count == lattice.size:
        raise ConfigError(f"{lattice.size} points: pass --count for a partial spectrum")
    res = spectral.eigen_low(op, count)
    with _open_out(cfg.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "eigenvalue", "residual"])
        for i, (v, r) in enumerate(zip(res.eigenvalues, res.residuals)):
            w.writerow([i, _fmt(v), _fmt(r)])
    return EXIT_PASS


def _write_classes(res, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["sector", "indices", "delta_eig", "operator_eig", "multiplicity"])
    for c in res.classes():
        sectors = sorted({m.sector for m in c["members"]})
        w.writerow(["+".join(sectors), ";".join(m.label() for m in c["members"]),
                    _fmt(c["delta_eigenvalue"]), _fmt(c["operator_eigenvalue"]), c["multiplicity"]])


def _assemble(op: str, model, lattice):
    if op == "delta":
        return operators.assemble_laplacian(model, lattice)
    if op == "yamabe":
        return operators.assemble_yamabe(model, lattice)
    return operators.assemble_paneitz_heisenberg(model, lattice)


def _negcount_job(cfg: RunConfig, s: float) -> int:
    if cfg.analytic is False:
        if cfg.N is None:
            raise ConfigError("--grid negcount needs --N")
        model = Heisenberg(cfg.d, s) if cfg.kind != "torus" else FlatTorus(cfg.n)
        lattice = build_lattice(model, cfg.N)
        return spectral.inertia(_assemble(cfg.op, model, lattice), 0.0).negative
    return heisenberg.negative_count(cfg.op, cfg.d, s)


def cmd_negcount(cfg: RunConfig) -> int:
    if not cfg.s_sweep:
        raise ConfigError("negcount needs a nonempty --s-sweep")
    if cfg.kind == "torus" and cfg.analytic is not False:
        raise ConfigError("analytic negative counts exist for the Heisenberg model only")
    sweep = sorted(cfg.s_sweep)
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        counts = list(pool.map(lambda s: _negcount_job(cfg, s), sweep))
    increasing = all(b > a for a, b in zip(counts, counts[1:]))
    summary = {"operator": cfg.op, "d": cfg.d, "sweep": sweep, "counts": counts,
               "strictly_increasing": increasing}
    positive = [(s, c) for s, c in zip(sweep, counts) if c > 0]
    if len(positive) >= 2:
        slope, intercept, resid = spectral.growth_fit(positive, min_samples=min(5, len(positive)))
        summary.update(slope=slope, intercept=intercept, fit_residual=resid)
    if cfg.op == "yamabe" and cfg.d == 1:
        ok = "slope" in summary and SLOPE_WINDOW[0] <= summary["slope"] <= SLOPE_WINDOW[1]
        summary["check"] = f"slope in [{SLOPE_WINDOW[0]}, {SLOPE_WINDOW[1]}]"
    else:
        ok = increasing
        summary["check"] = "counts strictly increasing"
    summary["verdict"] = "pass" if ok else "fail"
    with _open_out(cfg.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "negative_count"])
        for s, c in zip(sweep, counts):
            w.writerow([_fmt(s), c])
    text = json.dumps(summary, sort_keys=True)
    if cfg.out:
        with open(cfg.out + ".summary.json", "w") as fh:
            fh.write(text + "\n")
    print(text, file=sys.stderr)
    return EXIT_PASS if ok else EXIT_FAIL


DEFAULT_SAMPLES = (
    [{"index": [1, 0, 0], "amplitude": 0.1}],
    [{"index": [1, 1, 0], "amplitude": 0.05, "phase": 0.3}, {"index": [0, 0, 2], "amplitude": 0.08, "phase": 1.0}],
    [{"index": [0, 1, 0], "amplitude": 0.2}, {"index": [1, 0, 1], "amplitude": -0.1, "phase": 0.5}],
)


def cmd_battery(cfg: RunConfig) -> int:
    if cfg.kind != "torus":
        raise ConfigError("the battery runs on the flat torus model")
    model = cfg.model()
    N = cfg.N or 32
    samples = cfg.samples or [{"upsilon": s} for s in DEFAULT_SAMPLES]
    upsilons = []
    for i, smp in enumerate(samples):
        if not isinstance(smp, dict) or "upsilon" not in smp:
            raise ConfigError(f"sample {i}: needs an 'upsilon' list")
        upsilons.append(_trig(smp["upsilon"], model.dim))
    # torus stencils are local, so AMG-LOBPCG beats the dense window at every size
    reports = conformal.run_battery(model, N, upsilons, cfg.k, cfg.tol_scale, dense_limit=0)
    meta = {"N": N, "n": model.dim, "k": cfg.k, "samples": len(upsilons), "tol_scale": cfg.tol_scale}
    text = conformal.battery_json(reports, meta)
    with _open_out(cfg.out) as fh:
        fh.write(text)
    verdicts = {r.verdict for r in reports}
    if "fail" in verdicts:
        return EXIT_FAIL
    if "indeterminate" in verdicts:
        return EXIT_INDETERMINATE
    return EXIT_PASS


COMMANDS = {"spectrum": cmd_spectrum, "negcount": cmd_negcount, "battery": cmd_battery}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO if "-v" in argv or "--verbose" in argv else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(argv)
        return COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"gjms: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # argparse
        return EXIT_CONFIG if exc.code else EXIT_PASS


if __name__ == "__main__":
    sys.exit(main())
