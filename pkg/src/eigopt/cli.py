"""Command-line entry point: ``eigopt <subcommand> --config cfg.json --out DIR``.

Exit codes: 0 all checks passed, 1 a tolerance check failed, 2 usage or
configuration error.  Heavy modules are imported after ``--threads`` has
been applied to the BLAS/OpenMP environment.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

MESH_KEYS = {
    "sphere": {"type", "m", "refinement"},
    "torus": {"type", "m", "divisions"},
    "file": {"type", "path"},
}

# defaults per subcommand; every accepted key appears here
DEFAULTS = {
    "spectrum": {
        "mesh": {"type": "sphere", "m": 2, "refinement": 3},
        "densities": None,            # {"alpha": path, "mu": path}
        "count": 10,
        "tol": 1e-9,
        "cluster_tol": 1e-6,
        "lumped": False,
        "method": "auto",
        "eigenvectors": False,
        "expected": None,             # reference eigenvalues
        "expected_rel_tol": 0.01,
        "seed": 0,
    },
    "maximize": {
        "mesh": {"type": "sphere", "m": 2, "refinement": 2},
        "k": 1,
        "p": 2.0,
        "epsilon0": 1e-2,
        "max_iters": 50,
        "step0": 0.1,
        "tol": 1e-6,
        "seed": None,
        "pin_alpha": None,
        "initial": None,              # {"alpha": path, "mu": path}
        "perturbation": 0.0,          # log-normal amplitude applied to mu
        "upper_bound": None,          # fails the run if the final value exceeds it
    },
    "flow": {
        "mesh": {"type": "sphere", "m": 2, "refinement": 3},
        "p": 2.0,
        "map": "identity",            # "identity" or a CSV path
        "perturbation": 0.0,
        "seed": None,
        "max_steps": 500,
        "tol": 1e-6,
        "step0": 0.5,
        "k": 1,
        "stability_tol": 1e-2,
    },
    "sphere-index": {
        "m": [7, 14],                 # inclusive range
        "k": [0, 5],
        "p": [2.0],
        "N": 2000,
        "check_discretization": True,
    },
    "tensor-check": {
        "cases": 1000,
        "min_size": 2,
        "max_size": 16,
        "seed": None,
    },
    "verify": {
        "criteria": list(range(1, 11)),
    },
}
DEFAULTS["verify-all"] = DEFAULTS["verify"]

STOCHASTIC = {"maximize": lambda c: c["perturbation"] > 0,
              "flow": lambda c: c["perturbation"] > 0,
              "tensor-check": lambda c: True}


class ConfigError(ValueError):
    pass


def load_config(kind: str, path: str | None, seed: int | None) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS[kind]))
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError("cannot read config: %s" % exc) from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config is not valid JSON: %s" % exc) from None
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(user) - set(cfg)
        if unknown:
            raise ConfigError("unknown config keys: %s" % ", ".join(sorted(unknown)))
        cfg.update(user)
    if seed is not None:
        if "seed" not in cfg:
            raise ConfigError("%s does not take a seed" % kind)
        cfg["seed"] = seed
    if "mesh" in cfg:
        _check_mesh_block(cfg["mesh"])
    if kind in STOCHASTIC and STOCHASTIC[kind](cfg) and cfg.get("seed") is None:
        raise ConfigError("a seed is required for this experiment (config key or --seed)")
    return cfg


def _check_mesh_block(block):
    if not isinstance(block, dict) or block.get("type") not in MESH_KEYS:
        raise ConfigError("mesh must be an object with type sphere, torus or file")
    allowed = MESH_KEYS[block["type"]]
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError("unknown mesh keys: %s" % ", ".join(sorted(unknown)))
    missing = allowed - set(block)
    if missing:
        raise ConfigError("missing mesh keys: %s" % ", ".join(sorted(missing)))


def _build_mesh(block):
    from .io import read_mesh
    from .mesh import build_flat_torus_mesh, build_sphere_mesh
    if block["type"] == "sphere":
        return build_sphere_mesh(int(block["m"]), int(block["refinement"]))
    if block["type"] == "torus":
        return build_flat_torus_mesh(int(block["m"]), int(block["divisions"]))
    return read_mesh(block["path"])


def _pair(mesh, block):
    from .io import read_densities
    from .mesh import DensityPair
    if block is None:
        return DensityPair.uniform(mesh)
    if not isinstance(block, dict) or set(block) != {"alpha", "mu"}:
        raise ConfigError("densities must be an object with keys alpha and mu")
    return read_densities(block["alpha"], block["mu"], mesh)


def write_manifest(out: Path, kind: str, cfg: dict, summary: dict) -> None:
    import datetime
    import platform

    import numpy
    import scipy

    from . import __version__
    from .io import dump_json
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    # the timestamp is the only line that differs between identical runs
    body = dump_json({"kind": kind, "config": cfg, "summary": summary, "timestamp": stamp,
                      "versions": {"eigopt": __version__, "numpy": numpy.__version__,
                                   "scipy": scipy.__version__,
                                   "python": platform.python_version()}})
    (out / "manifest.json").write_text(body)


# ---------------------------------------------------------------------------
# subcommands; each returns (passed, summary)

def cmd_spectrum(cfg, out):
    import numpy as np

    from .io import write_json, write_matrix
    from .spectrum import spectrum
    mesh = _build_mesh(cfg["mesh"])
    pair = _pair(mesh, cfg["densities"])
    res = spectrum(mesh, pair, int(cfg["count"]), tol=cfg["tol"], lumped=cfg["lumped"],
                   method=cfg["method"], cluster_tol=cfg["cluster_tol"], seed=cfg["seed"])
    report = res.to_dict()
    if cfg["eigenvectors"]:
        write_matrix(out / "eigenvectors.csv", res.eigenvectors,
                     ["phi_%d" % i for i in range(len(res))])
    passed = bool(np.all(res.residuals <= 1e3 * max(cfg["tol"], 1e-8) * (1 + np.abs(
        np.where(np.isfinite(res.eigenvalues), res.eigenvalues, 0)))))
    if cfg["expected"] is not None:
        ref = np.asarray(cfg["expected"], dtype=float)
        if len(ref) > len(res):
            raise ConfigError("more expected eigenvalues than computed")
        got = res.eigenvalues[: len(ref)]
        err = np.abs(got - ref) / np.maximum(np.abs(ref), 1.0)
        report["expected_max_error"] = float(err.max())
        passed &= bool(err.max() <= cfg["expected_rel_tol"])
    write_json(out / "spectrum.json", report)
    return passed, {"eigenvalues": report["eigenvalues"], "clusters": report["clusters"],
                    "n_vertices": mesh.n_vertices}


def cmd_maximize(cfg, out):
    import numpy as np

    from .io import write_densities, write_rows
    from .mesh import DensityPair
    from .optimizer import AscentConfig, maximize
    mesh = _build_mesh(cfg["mesh"])
    pair = _pair(mesh, cfg["initial"])
    if cfg["perturbation"] > 0:
        rng = np.random.default_rng(cfg["seed"])
        pair = DensityPair(pair.alpha, pair.mu * np.exp(
            cfg["perturbation"] * rng.standard_normal(mesh.n_simplices)))
    acfg = AscentConfig(k=int(cfg["k"]), p=float(cfg["p"]), epsilon0=cfg["epsilon0"],
                        max_iters=int(cfg["max_iters"]), step0=cfg["step0"], tol=cfg["tol"],
                        seed=int(cfg["seed"] or 0), pin_alpha=cfg["pin_alpha"])
    res = maximize(mesh, acfg, pair)
    write_rows(out / "trajectory.csv", res.trajectory,
               ["iter", "value", "direction_norm", "epsilon"])
    write_densities(out, res.state.pair)
    values = np.array([r["value"] for r in res.trajectory])
    passed = bool(np.all(np.diff(values) >= 0))
    if cfg["upper_bound"] is not None:
        passed &= bool(values[-1] <= cfg["upper_bound"])
    summary = {"final_value": float(values[-1]), "converged": res.converged,
               "iterations": len(values) - 1, "diagnostics": res.diagnostics}
    return passed, summary


def cmd_flow(cfg, out):
    import numpy as np

    from .io import read_matrix, write_json, write_matrix
    from .pharmonic import FlowConfig, SphereMap, flow_to_critical, identity_map
    mesh = _build_mesh(cfg["mesh"])
    if cfg["map"] == "identity":
        u0 = identity_map(mesh).values
    else:
        u0 = read_matrix(cfg["map"])
    if cfg["perturbation"] > 0:
        rng = np.random.default_rng(cfg["seed"])
        u0 = u0 + cfg["perturbation"] * rng.standard_normal(u0.shape)
    u0 = SphereMap.normalized(u0)
    fcfg = FlowConfig(max_steps=int(cfg["max_steps"]), tol=cfg["tol"], step0=cfg["step0"],
                      k=int(cfg["k"]), stability_tol=cfg["stability_tol"])
    u, rep = flow_to_critical(mesh, u0, float(cfg["p"]), fcfg)
    write_matrix(out / "map.csv", u.values, ["u%d" % i for i in range(u.values.shape[1])])
    summary = rep.summary()
    write_json(out / "flow.json", summary)
    energies = np.array(rep.energies)
    passed = bool(np.all(np.diff(energies) <= 0) and rep.tangential_residual < cfg["tol"])
    return passed, summary


def _inclusive(block, name, integer=True):
    if isinstance(block, list) and len(block) == 2 and integer:
        return list(range(int(block[0]), int(block[1]) + 1))
    if isinstance(block, list):
        return block
    raise ConfigError("%s must be a list" % name)


def cmd_sphere_index(cfg, out):
    import math

    from .io import write_rows
    from .sphere import INFINITE, PhiParams, SphereOracleError, sturm_liouville_index, \
        total_index
    rows, passed = [], True
    for m in _inclusive(cfg["m"], "m"):
        for k in _inclusive(cfg["k"], "k"):
            for p in cfg["p"]:
                try:
                    P = PhiParams(m, k, float(p))
                except SphereOracleError:
                    continue
                rep = total_index(P)
                row = rep.to_row()
                if rep.maximizer_range and (rep.total is INFINITE or rep.total > k + 2):
                    passed = False
                agree = ""
                if cfg["check_discretization"] and rep.alpha_root is not INFINITE:
                    ok = all(e.index == sturm_liouville_index(P, e.ell, int(cfg["N"]))
                             for e in rep.entries
                             if e.ell <= math.ceil(rep.alpha_root))
                    agree = str(ok).lower()
                    passed &= ok
                row["discretization_agrees"] = agree
                rows.append(row)
    cols = ["m", "k", "p", "alpha", "total", "sobolev_member", "maximizer_range",
            "strict_range", "gap_region", "discretization_agrees"]
    write_rows(out / "sphere_index.csv", rows, cols)
    return passed, {"cases": len(rows)}


def cmd_tensor_check(cfg, out):
    import numpy as np

    from .io import write_rows
    from .tensor import (align_isometry, block_norm_check, hs_norm, powers_stormer_check,
                         random_orthogonal, random_projector)
    rng = np.random.default_rng(cfg["seed"])
    lo, hi = int(cfg["min_size"]), int(cfg["max_size"])
    if not 1 <= lo <= hi:
        raise ConfigError("need 1 <= min_size <= max_size")
    ps_rows, blk_rows, al_rows = [], [], []
    for case in range(int(cfg["cases"])):
        n, r = int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))
        A = rng.standard_normal((r, n))
        B = A + 10.0 ** rng.uniform(-6, 0) * rng.standard_normal((r, n))
        c = powers_stormer_check(A, B)
        ps_rows.append({"case": case, "lhs": c["lhs"], "rhs": c["rhs"],
                        "margin": c["rhs"] - c["lhs"]})
        c = block_norm_check(rng.standard_normal((n, n)), random_projector(n, rng))
        blk_rows.append({"case": case, "lhs": c["sum_sq"], "rhs": c["total_sq"],
                         "margin": c["total_sq"] - c["sum_sq"]})
        F1 = rng.standard_normal((r, n))
        F2 = random_orthogonal(r, rng) @ F1
        al_rows.append({"case": case, "residual":
                        hs_norm(align_isometry(F1, F2) @ F1 - F2) / hs_norm(F1)})
    cols = ["case", "lhs", "rhs", "margin"]
    write_rows(out / "powers_stormer.csv", ps_rows, cols)
    write_rows(out / "block_norm.csv", blk_rows, cols)
    write_rows(out / "align_isometry.csv", al_rows, ["case", "residual"])
    ps_bad = sum(r["margin"] < -1e-10 for r in ps_rows)
    blk_bad = sum(r["margin"] < -1e-10 for r in blk_rows)
    worst = max((r["residual"] for r in al_rows), default=0.0)
    passed = ps_bad == 0 and blk_bad == 0 and worst <= 1e-8
    return passed, {"powers_stormer_violations": ps_bad, "block_violations": blk_bad,
                    "max_align_residual": worst}


def cmd_verify(cfg, out, workers: int = 1):
    from concurrent.futures import ProcessPoolExecutor

    from .acceptance import CRITERIA, run_criterion
    from .io import write_json
    numbers = cfg["criteria"]
    if not isinstance(numbers, list) or any(n not in CRITERIA for n in numbers):
        raise ConfigError("criteria must be a list drawn from %s" % sorted(CRITERIA))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run_criterion, numbers))
    else:
        runs = map(run_criterion, numbers)
    results = []
    for r in runs:
        print(r.line(), flush=True)
        results.append({"number": r.number, "title": r.title, "passed": r.passed,
                        "details": r.details})
    write_json(out / "acceptance.json", results)
    return all(r["passed"] for r in results), {"failed": [r["number"] for r in results
                                                          if not r["passed"]]}


COMMANDS = {
    "spectrum": cmd_spectrum,
    "maximize": cmd_maximize,
    "flow": cmd_flow,
    "sphere-index": cmd_sphere_index,
    "tensor-check": cmd_tensor_check,
    "verify": cmd_verify,
    "verify-all": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eigopt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--out", metavar="DIR", default="eigopt-out")
        sp.add_argument("--seed", type=int, metavar="N")
        sp.add_argument("--threads", type=int, metavar="N")
    return parser


def _set_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return EXIT_CONFIG
        _set_threads(args.threads)
    try:
        cfg = load_config(args.command, args.config, args.seed)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .mesh import MeshError
    try:
        if COMMANDS[args.command] is cmd_verify:
            # --threads also sets the number of criteria run side by side
            passed, summary = cmd_verify(cfg, out, workers=args.threads or 1)
        else:
            passed, summary = COMMANDS[args.command](cfg, out)
    except (ConfigError, MeshError, OSError) as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, TypeError, ValueError) as exc:
        print("config error in %s: %s" % (args.command, exc), file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print("%s failed: %s: %s" % (args.command, type(exc).__name__, exc), file=sys.stderr)
        return EXIT_FAIL
    write_manifest(out, args.command, cfg, {"passed": passed, **summary})
    print("%s: %s" % (args.command, "PASS" if passed else "FAIL"))
    return EXIT_PASS if passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
