"""Command-line front end.

Subcommands:

* ``build``     assemble and persist the operators of one instance
* ``spectrum``  low-lying eigenvalues and sector gaps per truncation level
* ``verify``    run the identity suite and the spectral-correspondence checks
* ``scan``      sweep the coupling and tabulate spectra, kernels, assumptions
* ``report``    re-hash a finished run directory and summarize it

Configuration is a JSON file; unknown keys anywhere in it are fatal.
Environment variables with the ``POLARONLAB_`` prefix override single
entries, with ``__`` separating nesting levels (for example
``POLARONLAB_GRID__H=0.25``).  Values are parsed as JSON when possible
and taken as strings otherwise.

Every artifact is deterministic: reruns with the same configuration
produce byte-identical JSON, CSV, and operator files (no timestamps, no
machine identifiers).  Exit codes: 0 success, 1 identity/equivalence
failure, 2 configuration error, 3 solver failure, 4 artifact corruption.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import fock, grid as gridmod, identities, storage
from .errors import CacheCorruptionError, ConfigError, SolverError
from .grid import FormFactor, MomentumGrid, build_grid, export_form_factor_csv, sample_form_factor
from .identities import DEFAULT_THRESHOLDS, run_suite, schur_equivalence_report
from .reduction import ReductionWorkspace, build_workspace
from .spectral import SolverConfig, count_below, spectrum_summary

_REQUIRED = object()

_ENV_PREFIX = "POLARONLAB_"

DEFAULT_CONFIG = {
    "grid": {
        "d": _REQUIRED,
        "K": _REQUIRED,
        "h": _REQUIRED,
        "mode_cap": gridmod.DEFAULT_MODE_CAP,
    },
    "form_factor": {
        "profile": _REQUIRED,
        "g": 0.1,
        "alpha": 1.0,
    },
    "nmax": [2, 3, 4],
    "xi": None,
    "solver": {
        "eig_tol": 1e-10,
        "lin_tol": 1e-12,
        "max_iterations": 5000,
        "dense_threshold": 500,
        "seed": 2024,
    },
    "thresholds": dict(DEFAULT_THRESHOLDS),
    "epsilon_grid": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
    "scan": {
        "couplings": [0.0, 0.05, 0.1, 0.2],
    },
    "bs_ladder": [1e-1, 1e-2, 1e-3],
    "spectrum_count": 6,
    "fock_cap": fock.DEFAULT_FOCK_CAP,
    "cache": True,
}


# ---------------------------------------------------------------------------
# configuration handling
# ---------------------------------------------------------------------------


def _merge(defaults, given, path: str):
    """Overlay ``given`` onto ``defaults``, rejecting unknown keys."""
    if isinstance(defaults, dict):
        if not isinstance(given, dict):
            raise ConfigError(f"config entry {path or '<root>'} must be an object")
        unknown = set(given) - set(defaults)
        if unknown:
            where = path or "<root>"
            raise ConfigError(f"unknown config keys at {where}: {sorted(unknown)}")
        merged = {}
        for key, default_value in defaults.items():
            sub = f"{path}.{key}" if path else key
            if key in given:
                if isinstance(default_value, dict):
                    merged[key] = _merge(default_value, given[key], sub)
                else:
                    merged[key] = given[key]
            else:
                merged[key] = (
                    _merge(default_value, {}, sub)
                    if isinstance(default_value, dict)
                    else default_value
                )
        return merged
    return given


def _apply_env(config: dict, environ) -> dict:
    for name in sorted(environ):
        if not name.startswith(_ENV_PREFIX):
            continue
        raw_path = name[len(_ENV_PREFIX) :]
        keys = [p.lower() for p in raw_path.split("__") if p]
        if not keys:
            raise ConfigError(f"malformed override variable {name}")
        node = config
        for key in keys[:-1]:
            if not isinstance(node, dict) or key not in node:
                raise ConfigError(f"override {name} names an unknown config entry")
            node = node[key]
        leaf = keys[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigError(f"override {name} names an unknown config entry")
        if isinstance(node[leaf], dict):
            raise ConfigError(f"override {name} targets a config section, not an entry")
        raw = environ[name]
        try:
            node[leaf] = json.loads(raw)
        except json.JSONDecodeError:
            node[leaf] = raw
    return config


def _check_required(config, path: str = "") -> None:
    if isinstance(config, dict):
        for key, value in config.items():
            sub = f"{path}.{key}" if path else key
            if value is _REQUIRED:
                raise ConfigError(f"missing required config entry: {sub}")
            _check_required(value, sub)


def load_config(path: Optional[str], environ=None) -> dict:
    """Load, default-fill, override, and validate a run configuration."""
    given = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                given = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    config = _merge(DEFAULT_CONFIG, given, "")
    config = _apply_env(config, os.environ if environ is None else environ)
    _check_required(config)
    _validate_values(config)
    return config


def _validate_values(cfg: dict) -> None:
    g = cfg["grid"]
    if not isinstance(g["d"], int) or g["d"] < 1:
        raise ConfigError(f"grid.d must be a positive integer, got {g['d']!r}")
    nmax = cfg["nmax"]
    if isinstance(nmax, int):
        cfg["nmax"] = [nmax]
    elif isinstance(nmax, list) and nmax and all(isinstance(n, int) for n in nmax):
        cfg["nmax"] = sorted(set(nmax))
    else:
        raise ConfigError(f"nmax must be an integer or a list of integers, got {nmax!r}")
    if any(n < 1 for n in cfg["nmax"]):
        raise ConfigError("truncation levels must be >= 1")
    if cfg["xi"] is not None:
        xi = cfg["xi"]
        if not isinstance(xi, list) or len(xi) != g["d"]:
            raise ConfigError(f"xi must be a list of {g['d']} numbers")
    eps = cfg["epsilon_grid"]
    if not isinstance(eps, list) or not eps:
        raise ConfigError("epsilon_grid must be a non-empty list")
    if any(not (0.0 < float(e) < 1.0) for e in eps):
        raise ConfigError("epsilon_grid values must lie strictly inside (0, 1)")
    couplings = cfg["scan"]["couplings"]
    if not isinstance(couplings, list) or not couplings:
        raise ConfigError("scan.couplings must be a non-empty list")
    if any(float(c) < 0 for c in couplings):
        raise ConfigError("scan.couplings must be non-negative")
    thr = cfg["thresholds"]
    for key, value in thr.items():
        if not isinstance(value, (int, float)) or value <= 0:
            raise ConfigError(f"thresholds.{key} must be positive, got {value!r}")


def solver_from_config(cfg: dict) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(
        eig_tol=float(s["eig_tol"]),
        lin_tol=float(s["lin_tol"]),
        max_iterations=int(s["max_iterations"]),
        dense_threshold=int(s["dense_threshold"]),
        seed=int(s["seed"]),
    )


def instance_from_config(cfg: dict) -> Tuple[MomentumGrid, FormFactor]:
    g = cfg["grid"]
    f = cfg["form_factor"]
    grid = build_grid(g["d"], float(g["K"]), float(g["h"]), mode_cap=int(g["mode_cap"]))
    ff = sample_form_factor(grid, f["profile"], float(f["g"]), alpha=float(f["alpha"]))
    return grid, ff


# ---------------------------------------------------------------------------
# artifact plumbing
# ---------------------------------------------------------------------------


def _plain(obj):
    """Map numpy scalars/arrays to JSON-serializable built-ins, recursively."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(x) for x in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        value = float(obj)
        return value
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


class RunDirectory:
    """Deterministic artifact sink for one command invocation."""

    def __init__(self, root: str, config: dict, command: str):
        self.root = Path(root)
        self.config = config
        self.command = command
        self.artifacts: Dict[str, str] = {}
        self.root.mkdir(parents=True, exist_ok=True)

    def _register(self, relpath: str, data: bytes) -> None:
        path = self.root / relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.artifacts[relpath] = storage.sha256_bytes(data)

    def write_json(self, relpath: str, payload) -> None:
        text = storage.json_dumps(_plain(payload)) + "\n"
        self._register(relpath, text.encode("utf-8"))

    def write_csv(self, relpath: str, header: List[str], rows: List[List[object]]) -> None:
        import io

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if x is None else (repr(x) if isinstance(x, float) else x) for x in row])
        self._register(relpath, buf.getvalue().encode("utf-8"))

    def write_bytes(self, relpath: str, data: bytes) -> None:
        self._register(relpath, data)

    def finalize(self) -> None:
        manifest = {
            "command": self.command,
            "config": _plain(self.config),
            "config_sha256": storage.config_hash(_plain(self.config)),
            "artifacts": dict(sorted(self.artifacts.items())),
        }
        text = storage.json_dumps(manifest) + "\n"
        (self.root / "manifest.json").write_bytes(text.encode("utf-8"))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _default_out(cfg: dict, command: str) -> str:
    digest = storage.config_hash(_plain(cfg))[:12]
    return f"run-{command}-{digest}"


def _instance_summary(cfg: dict, grid: MomentumGrid, ff: FormFactor) -> dict:
    return {
        "dimension": grid.d,
        "cutoff": grid.K,
        "spacing": grid.h,
        "mode_count": grid.size,
        "profile": ff.profile,
        "coupling": ff.g,
        "alpha": ff.alpha,
        "coupling_norm": ff.norm,
        "nmax_levels": cfg["nmax"],
    }


def cmd_build(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["solver"]["seed"] = args.seed
    grid, ff = instance_from_config(cfg)
    out = RunDirectory(args.out or _default_out(cfg, "build"), cfg, "build")

    csv_text = export_form_factor_csv(grid, ff)
    out.write_bytes("tables/form_factor.csv", csv_text.encode("utf-8"))

    levels = {}
    for nmax in cfg["nmax"]:
        basis = fock.enumerate_basis(grid.size, nmax, cap=int(cfg["fock_cap"]))
        xi = None if cfg["xi"] is None else np.asarray(cfg["xi"], dtype=float)
        ham = fock.assemble_hamiltonian(basis, grid, ff, xi=xi)
        levels[str(nmax)] = {
            "dimension": basis.dim,
            "nonzeros": ham.nnz,
            "sector_dimensions": [
                basis.sector_range(n).stop - basis.sector_range(n).start
                for n in range(nmax + 1)
            ],
        }
        if cfg["cache"]:
            data, sidecar = storage.operator_payload(
                ham, meta={"kind": "fiber_hamiltonian", "nmax": nmax}
            )
            out.write_bytes(f"matrices/hamiltonian_n{nmax}.bin", data)
            out.write_json(f"matrices/hamiltonian_n{nmax}.json", sidecar)

    out.write_json(
        "results/build.json",
        {"instance": _instance_summary(cfg, grid, ff), "levels": levels},
    )
    out.finalize()
    print(f"built {len(cfg['nmax'])} truncation levels in {out.root}")
    return 0


def cmd_spectrum(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["solver"]["seed"] = args.seed
    grid, ff = instance_from_config(cfg)
    solver = solver_from_config(cfg)
    out = RunDirectory(args.out or _default_out(cfg, "spectrum"), cfg, "spectrum")

    rows = []
    payload = {"instance": _instance_summary(cfg, grid, ff), "levels": {}}
    for nmax in cfg["nmax"]:
        basis = fock.enumerate_basis(grid.size, nmax, cap=int(cfg["fock_cap"]))
        xi = None if cfg["xi"] is None else np.asarray(cfg["xi"], dtype=float)
        ham = fock.assemble_hamiltonian(basis, grid, ff, xi=xi)
        result = spectrum_summary(ham, basis, None, int(cfg["spectrum_count"]), solver)
        buffer = solver.buffer(grid.h)
        n_below = count_below(ham, result.e0 + 1.0, buffer, solver)
        level = result.to_json_dict()
        level["dimension"] = basis.dim
        level["count_below_window"] = n_below
        payload["levels"][str(nmax)] = level
        rows.append(
            [nmax, basis.dim, result.e0, result.nu1, result.nu2, result.vacuum_overlap, n_below]
        )
        out.write_json(f"results/spectrum_n{nmax}.json", level)

    out.write_json("results/spectrum.json", payload)
    out.write_csv(
        "tables/spectrum.csv",
        ["nmax", "dimension", "e0", "nu1", "nu2", "vacuum_overlap", "count_below_window"],
        rows,
    )
    out.finalize()
    top = payload["levels"][str(cfg["nmax"][-1])]
    print(
        f"spectrum over levels {cfg['nmax']}: top-level e0={top['eigenvalues'][0]:.12f} "
        f"nu1={top['nu1']:.6f} nu2={top['nu2']:.6f}"
    )
    return 0


def _verify_payload(cfg: dict, only: Optional[List[str]]) -> dict:
    grid, ff = instance_from_config(cfg)
    solver = solver_from_config(cfg)
    levels = [n for n in cfg["nmax"] if n >= 2]
    if not levels:
        raise ConfigError("verification needs at least one truncation level >= 2")
    xi = cfg["xi"]
    workspaces = {
        n: build_workspace(grid, ff, n, config=solver, xi=xi, fock_cap=int(cfg["fock_cap"]))
        for n in levels
    }
    zero_shift = xi is None or not any(float(x) != 0.0 for x in xi)
    bundles = {n: workspaces[n].build_bundle() for n in levels} if zero_shift else None

    reports = run_suite(
        grid,
        ff,
        levels,
        config=solver,
        thresholds=cfg["thresholds"],
        only=only,
        xi=xi,
        workspaces=workspaces,
        bundles=bundles,
    ) if zero_shift else []

    top = levels[-1]
    equivalence = schur_equivalence_report(
        workspaces[top], eps_grid=cfg["epsilon_grid"], thresholds=cfg["thresholds"]
    )
    bs = None
    assumptions = None
    if zero_shift:
        bs = workspaces[top].bs_limit_check(bundles[top], eps_ladder=cfg["bs_ladder"])
        assumptions = workspaces[top].assumptions(bundles[top]).to_json_dict()

    identity_failed = any(r.passed is False for r in reports)
    passed = not identity_failed and equivalence["consistent"]
    return {
        "instance": _instance_summary(cfg, grid, ff),
        "identities": [r.to_json_dict() for r in reports],
        "equivalence": equivalence,
        "bs_limit": bs,
        "assumptions": assumptions,
        "passed": bool(passed),
    }


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["solver"]["seed"] = args.seed
    only = None
    if args.filter:
        only = [tok.strip() for tok in args.filter.split(",") if tok.strip()]
    payload = _verify_payload(cfg, only)
    out = RunDirectory(args.out or _default_out(cfg, "verify"), cfg, "verify")
    out.write_json("results/verification.json", payload)

    rows = []
    for rep in payload["identities"]:
        for i, nmax in enumerate(rep["nmax_levels"]):
            rows.append(
                [
                    rep["identity"],
                    rep["classification"],
                    nmax,
                    rep["summary"][i],
                    rep["threshold"],
                    rep["passed"],
                ]
            )
    out.write_csv(
        "tables/identities.csv",
        ["identity", "classification", "nmax", "residual", "threshold", "passed"],
        rows,
    )
    out.finalize()

    for rep in payload["identities"]:
        values = ", ".join(
            "n/a" if v is None else f"{v:.3e}" for v in rep["summary"]
        )
        state = {True: "ok", False: "FAIL", None: "n/a"}[rep["passed"]]
        print(f"[{state:>4}] {rep['identity']:<32} {rep['classification']:<20} {values}")
    print(f"[{'ok' if payload['equivalence']['consistent'] else 'FAIL':>4}] spectral-correspondence")
    if payload["passed"]:
        print("verification passed")
        return 0
    print("verification FAILED")
    return 1


def _scan_row(cfg: dict, coupling: float) -> dict:
    grid, ff_base = instance_from_config(cfg)
    solver = solver_from_config(cfg)
    ff = sample_form_factor(
        grid, cfg["form_factor"]["profile"], float(coupling), alpha=float(cfg["form_factor"]["alpha"])
    )
    top = max(n for n in cfg["nmax"] if n >= 2)
    ws = build_workspace(grid, ff, top, config=solver, fock_cap=int(cfg["fock_cap"]))
    bundle = ws.build_bundle()
    report = ws.assumptions(bundle)
    buffer = solver.buffer(grid.h)
    n_below = count_below(ws.hamiltonian, ws.e0 + 1.0, buffer, solver)
    o_min = min(
        float(np.linalg.eigvalsh(ws.one_particle_operator(float(e)))[0])
        for e in cfg["epsilon_grid"]
    )
    norm_residual = identities.norm_identity_value(bundle)
    return {
        "coupling": float(coupling),
        "nmax": top,
        "dimension": ws.basis.dim,
        "e0": ws.e0,
        "nu1": bundle.nu1,
        "nu2": bundle.nu2,
        "count_below_window": n_below,
        "c0": bundle.c0,
        "a_norm": bundle.a_norm if report.coupling_active else None,
        "phi_norm": bundle.phi_norm,
        "norm_identity_gap": None if norm_residual is None else abs(norm_residual - 1.0),
        "o_min_eigenvalue": o_min,
        "assumptions": report.to_json_dict(),
    }


def _scan_worker(payload: Tuple[dict, float]) -> dict:
    cfg, coupling = payload
    return _scan_row(cfg, coupling)


def cmd_scan(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["solver"]["seed"] = args.seed
    couplings = [float(c) for c in cfg["scan"]["couplings"]]
    jobs = max(1, args.jobs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_scan_worker, [(cfg, c) for c in couplings]))
    else:
        rows = [_scan_row(cfg, c) for c in couplings]
    rows.sort(key=lambda r: r["coupling"])

    grid, ff = instance_from_config(cfg)
    out = RunDirectory(args.out or _default_out(cfg, "scan"), cfg, "scan")
    out.write_json(
        "results/scan.json",
        {"instance": _instance_summary(cfg, grid, ff), "rows": rows},
    )
    header = [
        "coupling",
        "e0",
        "nu1",
        "nu2",
        "count_below_window",
        "c0",
        "a_norm",
        "phi_norm",
        "norm_identity_gap",
        "o_min_eigenvalue",
        "assumptions_hold",
    ]
    out.write_csv(
        "tables/scan.csv",
        header,
        [
            [
                r["coupling"],
                r["e0"],
                r["nu1"],
                r["nu2"],
                r["count_below_window"],
                r["c0"],
                r["a_norm"],
                r["phi_norm"],
                r["norm_identity_gap"],
                r["o_min_eigenvalue"],
                r["assumptions"]["all_hold"],
            ]
            for r in rows
        ],
    )
    out.finalize()
    for r in rows:
        print(
            f"g={r['coupling']:<6} e0={r['e0']:+.9f} nu2={r['nu2']:.6f} "
            f"count={r['count_below_window']} assumptions={'ok' if r['assumptions']['all_hold'] else 'violated'}"
        )
    return 0


def cmd_report(args) -> int:
    root = Path(args.out)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no manifest found under {root}")
    manifest = storage.read_json(manifest_path)
    mismatched = []
    for relpath, digest in manifest.get("artifacts", {}).items():
        target = root / relpath
        if not target.exists():
            mismatched.append((relpath, "missing"))
            continue
        actual = storage.sha256_bytes(target.read_bytes())
        if actual != digest:
            mismatched.append((relpath, "hash mismatch"))
    if mismatched:
        for relpath, why in mismatched:
            print(f"corrupt artifact: {relpath} ({why})", file=sys.stderr)
        raise CacheCorruptionError(f"{len(mismatched)} artifacts failed re-hashing under {root}")

    print(f"run directory {root} is intact ({len(manifest.get('artifacts', {}))} artifacts)")
    print(f"command: {manifest.get('command')}  config hash: {manifest.get('config_sha256', '')[:12]}")
    verification = root / "results" / "verification.json"
    if verification.exists():
        payload = storage.read_json(verification)
        for rep in payload.get("identities", []):
            state = {True: "ok", False: "FAIL", None: "n/a"}[rep.get("passed")]
            print(f"  [{state:>4}] {rep['identity']}")
        print(f"  overall: {'passed' if payload.get('passed') else 'FAILED'}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polaronlab",
        description=(
            "Discretized fiber Hamiltonians with boson-number truncation: "
            "spectra, Schur-complement reductions, and identity verification."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="path to a JSON run configuration")
        p.add_argument("--out", help="artifact directory (defaults to a config-hash name)")
        p.add_argument("--seed", type=int, default=None, help="override solver.seed")

    p_build = sub.add_parser("build", help="assemble and persist operators")
    common(p_build)
    p_build.set_defaults(func=cmd_build)

    p_spec = sub.add_parser("spectrum", help="low-lying spectra per truncation level")
    common(p_spec)
    p_spec.set_defaults(func=cmd_spectrum)

    p_verify = sub.add_parser("verify", help="run the identity suite")
    common(p_verify)
    p_verify.add_argument(
        "--filter",
        help="comma-separated identity ids to run (default: all)",
    )
    p_verify.set_defaults(func=cmd_verify)

    p_scan = sub.add_parser("scan", help="sweep the coupling strength")
    common(p_scan)
    p_scan.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p_scan.set_defaults(func=cmd_scan)

    p_report = sub.add_parser("report", help="re-hash and summarize a run directory")
    p_report.add_argument("--out", required=True, help="run directory to check")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except CacheCorruptionError as exc:
        print(f"artifact corruption: {exc}", file=sys.stderr)
        return 4
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
