"""Command-line entry point: ``sunaa {unmix,simulate,evaluate,make-library,replay}``.

Exit codes::

    0  success
    1  unexpected internal error
    2  bad command-line usage
    3  input file missing or unreadable
    4  malformed matrix file (SMX or CSV)
    5  requested endmember count exceeds library size
    6  height * width does not match the pixel count
    7  band count mismatch between cube and library
    8  invalid parameter value
    9  shape mismatch between compared matrices
"""

from __future__ import annotations

import argparse
import logging
import os
import shlex
import sys
import time
from pathlib import Path

import numpy as np

from . import io as smxio
from .actset import SimplexLsqOptions
from .core import DataCube, SpectralLibrary
from .metrics import align_endmembers, aligned_sre_db, sre_db
from .model import SunaaConfig, fit, fit_blind_aa
from .synth import Layout, SceneSpec, add_noise, generate_scene, make_library

log = logging.getLogger("sunaa")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_R_EXCEEDS_M = 5
EXIT_DIMS = 6
EXIT_BANDS = 7
EXIT_VALUE = 8
EXIT_SHAPE = 9

MANIFEST_NAME = "manifest.txt"


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def load_matrix(path, what: str) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_IO, f"{what} file not found: {path}")
    try:
        return smxio.read_matrix(p)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {what} file {path}: {exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_FORMAT, f"malformed {what} file {path}: {exc}") from exc


def write_manifest(path, entries: dict) -> None:
    lines = []
    for key in sorted(entries):
        val = entries[key]
        if isinstance(val, (list, tuple)):
            val = ",".join(str(v) for v in val)
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{key}={val}\n")
    Path(path).write_text("".join(lines), newline="\n")


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line and "=" in line:
            key, val = line.split("=", 1)
            out[key] = val
    return out


def _positive(name, value):
    if value < 1:
        raise CliError(EXIT_VALUE, f"--{name} must be >= 1, got {value}")


def cmd_unmix(args, argv) -> int:
    t0 = time.perf_counter()
    y = load_matrix(args.input, "cube")
    p, n = y.shape
    if args.blind:
        if args.library is not None:
            raise CliError(EXIT_USAGE, "--blind does not take --library")
        d = None
        m = n
    else:
        if args.library is None:
            raise CliError(EXIT_USAGE, "--library is required unless --blind is given")
        d = load_matrix(args.library, "library")
        m = d.shape[1]
        if d.shape[0] != p:
            raise CliError(EXIT_BANDS, f"library has {d.shape[0]} bands, cube has {p}")
    _positive("endmembers", args.endmembers)
    _positive("iters", args.iters)
    if not args.tol >= 0:
        raise CliError(EXIT_VALUE, f"--tol must be >= 0, got {args.tol}")
    if args.endmembers > m:
        raise CliError(EXIT_R_EXCEEDS_M, f"r={args.endmembers} exceeds library size m={m}")
    height, width = args.height, args.width
    if height is None and width is None:
        height, width = 1, n
    elif height is None or width is None:
        raise CliError(EXIT_USAGE, "--height and --width must be given together")
    if height < 1 or width < 1 or height * width != n:
        raise CliError(EXIT_DIMS, f"height*width = {height}*{width} does not match {n} pixels")
    threads = args.threads or os.cpu_count() or 1

    cfg = SunaaConfig(r=args.endmembers, outer_iters=args.iters, rel_obj_tol=args.tol,
                      solver_opts=SimplexLsqOptions(), threads=threads)
    cube = DataCube(y, height, width)
    res = fit_blind_aa(cube, cfg) if args.blind else fit(cube, SpectralLibrary(d), cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {"A.smx": res.a.a, "B.smx": res.b.b, "E.smx": res.e}
    for name, mat in files.items():
        smxio.write_smx(out / name, mat)
    trace = np.column_stack([np.arange(1, res.iterations_run + 1), res.objective_trace])
    with open(out / "objective_trace.csv", "w", newline="") as fh:
        fh.write("iteration,objective\n")
        for it, obj in trace:
            fh.write(f"{int(it)},{obj:.17g}\n")
    maps = smxio.export_abundance_maps(res.a.a, height, width, out)
    outputs = sorted([*files, "objective_trace.csv", *(pth.name for pth in maps)])
    write_manifest(out / MANIFEST_NAME, {
        "command": "unmix",
        "argv": shlex.join(argv),
        "input": args.input,
        "library": "" if args.library is None else args.library,
        "blind": args.blind,
        "endmembers": args.endmembers,
        "iters": args.iters,
        "tol": float(args.tol),
        "height": height,
        "width": width,
        "threads": threads,
        "seed": cfg.seed,
        "out": str(out),
        "final_objective": res.final_objective,
        "iterations_run": res.iterations_run,
        "converged_early": res.converged_early,
        "uncertified_solves": res.uncertified_solves,
        "wall_seconds": round(time.perf_counter() - t0, 6),
        "outputs": outputs,
    })
    log.info("unmixed %d pixels with r=%d in %d iterations", n, args.endmembers, res.iterations_run)
    return EXIT_OK


def _parse_indices(text):
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise CliError(EXIT_VALUE, f"--indices must be comma-separated integers, got {text!r}") from None


def cmd_simulate(args, argv) -> int:
    t0 = time.perf_counter()
    d = load_matrix(args.library, "library")
    idx = _parse_indices(args.indices)
    try:
        spec = SceneSpec(args.height, args.width, idx, layout=Layout(args.layout),
                         seed=args.seed, patch_size=args.patch_size)
        gt = generate_scene(SpectralLibrary(d), spec)
        clean = gt.cube.y
        noisy = clean if args.snr is None else add_noise(clean, args.snr, args.seed)
    except (ValueError, IndexError) as exc:
        raise CliError(EXIT_VALUE, str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {"cube.smx": noisy, "clean.smx": clean, "xtrue.smx": gt.x_true.a, "etrue.smx": gt.endmembers}
    for name, mat in files.items():
        smxio.write_smx(out / name, mat)
    write_manifest(out / MANIFEST_NAME, {
        "command": "simulate",
        "argv": shlex.join(argv),
        "library": args.library,
        "indices": idx,
        "height": args.height,
        "width": args.width,
        "layout": spec.layout.value,
        "patch_size": "" if args.patch_size is None else args.patch_size,
        "snr": "none" if args.snr is None else float(args.snr),
        "seed": args.seed,
        "out": str(out),
        "wall_seconds": round(time.perf_counter() - t0, 6),
        "outputs": sorted(files),
    })
    return EXIT_OK


def cmd_evaluate(args, argv) -> int:
    x_true = load_matrix(args.truth, "truth")
    x_hat = load_matrix(args.estimate, "estimate")
    if x_true.shape != x_hat.shape:
        raise CliError(EXIT_SHAPE, f"truth is {x_true.shape[0]}x{x_true.shape[1]}, "
                                   f"estimate is {x_hat.shape[0]}x{x_hat.shape[1]}")
    try:
        print(f"sre_db={sre_db(x_true, x_hat):.2f}")
    except ValueError as exc:
        raise CliError(EXIT_VALUE, str(exc)) from exc
    if (args.etrue is None) != (args.ehat is None):
        raise CliError(EXIT_USAGE, "--etrue and --ehat must be given together")
    if args.etrue is not None:
        e_true = load_matrix(args.etrue, "true endmember")
        e_hat = load_matrix(args.ehat, "estimated endmember")
        if e_true.shape != e_hat.shape or e_true.shape[1] != x_true.shape[0]:
            raise CliError(EXIT_SHAPE, "endmember matrices must match each other and the abundance rows")
        al = align_endmembers(e_true, e_hat)
        print(f"aligned_sre_db={aligned_sre_db(x_true, x_hat, al):.2f}")
        print(f"alignment_score={al.score:.6f}")
        print("perm=" + ",".join(str(i) for i in al.perm))
    return EXIT_OK


def cmd_make_library(args, argv) -> int:
    try:
        lib = make_library(args.m, args.p, seed=args.seed, min_angle_deg=args.min_angle)
    except (ValueError, RuntimeError) as exc:
        raise CliError(EXIT_VALUE, str(exc)) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix.lower() == ".csv":
        smxio.write_csv_matrix(out, lib.d, header=lib.names)
    else:
        smxio.write_smx(out, lib.d)
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    path = Path(args.manifest)
    if not path.is_file():
        raise CliError(EXIT_IO, f"manifest not found: {path}")
    entries = read_manifest(path)
    if "argv" not in entries:
        raise CliError(EXIT_FORMAT, f"manifest {path} has no argv entry")
    old = shlex.split(entries["argv"])
    if args.out is not None:
        old += ["--out", args.out]
    return main(old)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sunaa", description="Library-based unmixing by archetypal analysis.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    u = sub.add_parser("unmix", help="estimate endmember contributions and abundances")
    u.add_argument("--input", required=True, help="cube matrix, bands x pixels (.smx or .csv)")
    u.add_argument("--library", help="library matrix, bands x spectra (.smx or .csv)")
    u.add_argument("--endmembers", type=int, required=True, help="number of scene endmembers r")
    u.add_argument("--iters", type=int, default=100, help="maximum outer iterations (default 100)")
    u.add_argument("--tol", type=float, default=1e-8, help="relative objective decrease for early stop")
    u.add_argument("--height", type=int)
    u.add_argument("--width", type=int)
    u.add_argument("--out", required=True)
    u.add_argument("--blind", action="store_true", help="use the pixels themselves as the library")
    u.add_argument("--threads", type=int, default=None, help="abundance-step threads (default: all cores)")
    u.set_defaults(func=cmd_unmix)

    s = sub.add_parser("simulate", help="generate a synthetic scene from a library")
    s.add_argument("--library", required=True)
    s.add_argument("--indices", required=True, help="comma-separated library columns")
    s.add_argument("--height", type=int, required=True)
    s.add_argument("--width", type=int, required=True)
    s.add_argument("--layout", choices=[lay.value for lay in Layout], default=Layout.SQUARE_GRID.value)
    s.add_argument("--patch-size", type=int, default=None)
    s.add_argument("--snr", type=float, default=None, help="target SNR in dB; omit for a clean cube")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("evaluate", help="score estimated abundances against the truth")
    e.add_argument("--truth", required=True)
    e.add_argument("--estimate", required=True)
    e.add_argument("--etrue")
    e.add_argument("--ehat")
    e.set_defaults(func=cmd_evaluate)

    lib = sub.add_parser("make-library", help="write a synthetic spectral library")
    lib.add_argument("--m", type=int, default=240, help="number of spectra")
    lib.add_argument("--p", type=int, default=100, help="number of bands")
    lib.add_argument("--seed", type=int, default=0)
    lib.add_argument("--min-angle", type=float, default=4.44, help="minimum pairwise angle in degrees")
    lib.add_argument("--out", required=True)
    lib.set_defaults(func=cmd_make_library)

    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("manifest")
    r.add_argument("--out", default=None, help="write to a different directory")
    r.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except CliError as exc:
        print(f"sunaa: error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001
        print(f"sunaa: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
