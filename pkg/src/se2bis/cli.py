"""Command-line drivers for the experiments; plot-ready CSV/JSON output.

Exit codes: 0 on success, 1 for usage or configuration problems, 2 for
numerical failures (validation errors, non-convergence, degenerate inputs).
Every command is deterministic given its configuration and seed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .bispectrum import bispectrum, relative_error, write_bispectrum
from .classify import ClassificationConfig, run_classification
from .clebsch import build_table
from .groups import RigidMotion
from .harmonics import ShCoefficients, load_design, power_spectrum, product_quadrature
from .mra import MraConfig, back_projection_bound, fit_loglog_slope, run_mra
from .projection import (
    apply_rigid_motion,
    back_project,
    build_projection_operator,
    load_image,
    project_image,
    random_smooth_image,
    save_image,
)

DESIGN_DIR_ENV = "SE2BIS_DESIGN_DIR"


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _resolve_design(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    env = os.environ.get(DESIGN_DIR_ENV)
    if env:
        candidate = Path(env) / name
        if candidate.exists():
            return candidate
    raise UsageError(
        f"design file {name!r} not found (checked the path and ${DESIGN_DIR_ENV})"
    )


def _quadrature(args, bandlimit):
    if getattr(args, "design", None):
        if args.design_strength is None:
            raise UsageError("--design requires --design-strength")
        return load_design(_resolve_design(args.design), args.design_strength)
    return product_quadrature(bandlimit)


def _load_config(args, config_cls, extra_keys: tuple = ()):
    """Merge a JSON config file with CLI flag overrides.

    Returns the config dataclass plus a dict of command-level extras (sweep
    lists etc.).  Unknown config keys are rejected; flags win over the file.
    """
    data = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
    field_names = {f.name for f in dataclasses.fields(config_cls)}
    allowed = field_names | set(extra_keys)
    unknown = set(data) - allowed
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(data)
    for key in allowed:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    extras = {k: merged.pop(k) for k in list(merged) if k not in field_names}
    if "metrics" in merged and isinstance(merged["metrics"], list):
        merged["metrics"] = tuple(merged["metrics"])
    try:
        cfg = config_cls(**merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc
    return cfg, extras


def _dump_config(cfg, extras, enabled: bool):
    if enabled:
        payload = dataclasses.asdict(cfg)
        payload.update({k: v for k, v in extras.items() if v is not None})
        print(json.dumps(payload, indent=2, sort_keys=True, default=_json_default))


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"cannot serialize {type(value)}")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _parse_float_list(value):
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    try:
        return [float(v) for v in value.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"bad numeric list {value!r}") from exc


def _parse_int_list(value):
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    try:
        return [int(v) for v in value.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"bad integer list {value!r}") from exc


# ----------------------------------------------------------------- commands


def cmd_gen_image(args) -> int:
    if args.n < 41:
        raise UsageError(
            f"n={args.n} is below 41, too small for the 20-pixel margin rule"
        )
    img = random_smooth_image(args.seed, n=args.n)
    save_image(img, args.out)
    return 0


def cmd_project(args) -> int:
    img = load_image(args.image)
    quad = _quadrature(args, args.bandlimit)
    coeffs = project_image(img, args.scaling, args.bandlimit, quad, method=args.method)
    np.savez(args.out, bandlimit=coeffs.bandlimit, coeffs=coeffs.coeffs)
    return 0


def _load_coeffs(path) -> ShCoefficients:
    try:
        data = np.load(path)
        return ShCoefficients(int(data["bandlimit"]), data["coeffs"])
    except Exception as exc:
        raise UsageError(f"cannot read coefficients {path}: {exc}") from exc


def cmd_backproject(args) -> int:
    coeffs = _load_coeffs(args.coeffs)
    img = back_project(coeffs, args.scaling, args.n)
    save_image(img, args.out)
    return 0


def cmd_bispectrum(args) -> int:
    if (args.image is None) == (args.coeffs is None):
        raise UsageError("provide exactly one of --image or --coeffs")
    if args.image is not None:
        img = load_image(args.image)
        quad = _quadrature(args, args.bandlimit)
        coeffs = project_image(img, args.scaling, args.bandlimit, quad)
    else:
        coeffs = _load_coeffs(args.coeffs)
    cg = build_table(coeffs.bandlimit)
    write_bispectrum(bispectrum(coeffs, cg), args.out)
    return 0


def cmd_invariance(args) -> int:
    img = load_image(args.image) if args.image else random_smooth_image(args.seed, n=args.n)
    quad = _quadrature(args, args.bandlimit)
    op = build_projection_operator(args.bandlimit, quad, args.scaling, img.n)
    cg = build_table(args.bandlimit)
    reference = bispectrum(ShCoefficients(args.bandlimit, op.apply(img)), cg)
    rng = np.random.default_rng(args.seed + 1)
    spacing = img.spacing

    def errors_for(t_px: float, rotate: bool, count: int):
        errs = np.empty(count)
        for i in range(count):
            theta = rng.uniform(0.0, 2.0 * math.pi) if rotate else 0.0
            if t_px > 0:
                alpha = rng.uniform(0.0, 2.0 * math.pi)
                b = t_px * spacing * np.array([math.cos(alpha), math.sin(alpha)])
            else:
                b = np.zeros(2)
            moved = apply_rigid_motion(img, RigidMotion(b, theta))
            b_moved = bispectrum(ShCoefficients(args.bandlimit, op.apply(moved)), cg)
            errs[i] = relative_error(b_moved, reference)
        return errs

    def band(errs):
        mean = float(np.mean(errs))
        half = float(np.percentile(np.abs(errs - mean), 95))
        return mean, half

    rows = []
    rot_errs = errors_for(0.0, True, args.samples)
    rows.append(("rotation", 0.0, *band(rot_errs), len(rot_errs)))
    sizes = _parse_float_list(args.t_max_list)
    for t in sizes:
        errs = errors_for(t, False, args.samples)
        rows.append(("translation", t, *band(errs), len(errs)))
    for t in sizes:
        errs = errors_for(t, True, args.rot_samples or args.samples)
        rows.append(("rotation+translation", t, *band(errs), len(errs)))
    _write_csv(args.out, ["mode", "t_max_px", "mean_error", "band95_halfwidth", "samples"], rows)
    return 0


def cmd_param_sweep(args) -> int:
    image_dir = Path(args.images_dir)
    files = sorted(
        p for p in image_dir.iterdir() if p.suffix.lower() in (".csv", ".img2", ".bin")
    ) if image_dir.is_dir() else []
    if not files:
        raise UsageError(f"no image files in {args.images_dir}")
    images = [load_image(p) for p in files]
    rows = []
    for bandlimit in _parse_int_list(args.bandlimit_list):
        quad = product_quadrature(bandlimit)
        for lam in _parse_float_list(args.scaling_list):
            errs = [back_projection_bound(img, lam, bandlimit, quad) for img in images]
            rows.append((bandlimit, lam, float(np.mean(errs))))
    _write_csv(args.out, ["bandlimit", "scaling", "mean_backprojection_error"], rows)
    return 0


def cmd_mra(args) -> int:
    cfg, extras = _load_config(args, MraConfig, extra_keys=("n_list", "snr_list", "trials"))
    _dump_config(cfg, extras, args.dump_config)
    n_list = _parse_int_list(extras["n_list"]) if extras.get("n_list") else [cfg.n_images]
    snr_list = _parse_float_list(extras["snr_list"]) if extras.get("snr_list") else [cfg.snr]
    trials = int(extras.get("trials") or 1)

    truth = random_smooth_image(cfg.seed, n=cfg.n)
    rows = []
    for snr in snr_list:
        for n_images in n_list:
            for trial in range(trials):
                run_cfg = dataclasses.replace(
                    cfg, n_images=n_images, snr=snr, seed=cfg.seed + 1000 * trial + 1
                )
                report = run_mra(run_cfg, truth)
                rows.append(
                    (
                        snr,
                        n_images,
                        trial,
                        report.bispectrum_relative_error,
                        report.image_relative_error,
                        report.back_projection_bound,
                    )
                )
    _write_csv(
        Path(args.out_prefix).with_suffix(".csv"),
        ["snr", "n_images", "trial", "bispectrum_error", "image_error", "bound"],
        rows,
    )
    summary = {
        "n": cfg.n,
        "T_max": cfg.t_max,
        "snr": snr_list if len(snr_list) > 1 else snr_list[0],
        "L": cfg.bandlimit,
        "N": n_list,
        "trials": trials,
        "errors": {},
        "bound": float(np.mean([r[5] for r in rows])),
    }
    for n_images in n_list:
        sel = [r for r in rows if r[1] == n_images]
        summary["errors"][str(n_images)] = {
            "bispectrum": float(np.mean([r[3] for r in sel])),
            "image": float(np.mean([r[4] for r in sel])),
        }
    if len(n_list) > 1:
        means = [summary["errors"][str(nv)]["bispectrum"] for nv in n_list]
        summary["slope"] = fit_loglog_slope(n_list, means)
    with open(Path(args.out_prefix).with_suffix(".json"), "w") as fh:
        json.dump(summary, fh, indent=2, default=_json_default)
    return 0


def cmd_classify(args) -> int:
    cfg, extras = _load_config(args, ClassificationConfig, extra_keys=("t_max_list",))
    _dump_config(cfg, extras, args.dump_config)
    t_list = (
        _parse_float_list(extras["t_max_list"]) if extras.get("t_max_list") else [cfg.t_max]
    )
    summary = {
        "classes": cfg.n_classes,
        "N": cfg.n_images,
        "snr": cfg.snr,
        "K": cfg.k_neighbors,
        "L": cfg.bandlimit,
        "per_t_max": {},
    }
    prefix = Path(args.out_prefix)
    for t in t_list:
        run_cfg = dataclasses.replace(cfg, t_max=t)
        result = run_classification(run_cfg)
        entry = {}
        for metric in run_cfg.metrics:
            scores = result.scores[metric]
            counts, edges = result.histogram(metric)
            _write_csv(
                prefix.parent / f"{prefix.name}_hist_{metric}_t{t:g}.csv",
                ["bin_left", "bin_right", "count"],
                [
                    (edges[i], edges[i + 1], int(counts[i]))
                    for i in range(counts.shape[0])
                ],
            )
            entry[metric] = {
                "median": float(np.median(scores)),
                "mean": float(np.mean(scores)),
            }
        summary["per_t_max"][f"{t:g}"] = entry
    with open(prefix.with_suffix(".json"), "w") as fh:
        json.dump(summary, fh, indent=2, default=_json_default)
    return 0


def cmd_noise_stats(args) -> int:
    if args.count < 1:
        raise UsageError("count must be >= 1")
    rng = np.random.default_rng(args.seed)
    quad = product_quadrature(args.bandlimit)
    op = build_projection_operator(args.bandlimit, quad, 1.0, args.n)
    pixel_power = np.zeros((args.n, args.n))
    sphere_power = np.zeros(args.bandlimit + 1)
    batch = 64
    remaining = args.count
    while remaining > 0:
        take = min(batch, remaining)
        noise = rng.standard_normal((take, args.n, args.n))
        fft = np.fft.fft2(noise, axes=(1, 2))
        pixel_power += np.sum(np.abs(fft) ** 2, axis=0) / (args.n * args.n)
        coeffs = op.apply(noise)
        for j in range(take):
            sphere_power += power_spectrum(ShCoefficients(args.bandlimit, coeffs[:, j]))
        remaining -= take
    pixel_power /= args.count
    sphere_power /= args.count
    _write_csv(
        Path(args.out_prefix).with_suffix(".sphere.csv"),
        ["degree", "normalized_power"],
        [(l, sphere_power[l]) for l in range(args.bandlimit + 1)],
    )
    rows = [
        (kx, ky, pixel_power[kx, ky]) for kx in range(args.n) for ky in range(args.n)
    ]
    _write_csv(
        Path(args.out_prefix).with_suffix(".pixel.csv"),
        ["kx", "ky", "power"],
        rows,
    )
    return 0


def cmd_cg_table(args) -> int:
    table = build_table(args.bandlimit)
    table.save(args.out)
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="se2bis", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_design_flags(p):
        p.add_argument("--design", help="design file (path or name under $%s)" % DESIGN_DIR_ENV)
        p.add_argument("--design-strength", type=int, default=None)

    p = sub.add_parser("gen-image", help="write a random smooth test image")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=101)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_image)

    p = sub.add_parser("project", help="image -> spherical coefficients (.npz)")
    p.add_argument("--image", required=True)
    p.add_argument("--bandlimit", "-L", type=int, default=16)
    p.add_argument("--scaling", type=float, default=1.0)
    p.add_argument("--method", choices=["quadrature", "ridge"], default="quadrature")
    p.add_argument("--out", required=True)
    add_design_flags(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("backproject", help="spherical coefficients -> image")
    p.add_argument("--coeffs", required=True)
    p.add_argument("--n", type=int, default=101)
    p.add_argument("--scaling", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_backproject)

    p = sub.add_parser("bispectrum", help="image or coefficients -> bispectrum file")
    p.add_argument("--image")
    p.add_argument("--coeffs")
    p.add_argument("--bandlimit", "-L", type=int, default=16)
    p.add_argument("--scaling", type=float, default=1.0)
    p.add_argument("--out", required=True)
    add_design_flags(p)
    p.set_defaults(func=cmd_bispectrum)

    p = sub.add_parser("invariance", help="rotation/translation invariance curves")
    p.add_argument("--image")
    p.add_argument("--n", type=int, default=101)
    p.add_argument("--bandlimit", "-L", type=int, default=16)
    p.add_argument("--scaling", type=float, default=1.0)
    p.add_argument("--t-max-list", default="1,2.5,5,7.5,10")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--rot-samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    add_design_flags(p)
    p.set_defaults(func=cmd_invariance)

    p = sub.add_parser("param-sweep", help="back-projection error vs (bandlimit, scaling)")
    p.add_argument("--images-dir", required=True)
    p.add_argument("--bandlimit-list", default="8,12,16")
    p.add_argument("--scaling-list", default="1,1.5,2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_param_sweep)

    p = sub.add_parser("mra", help="multi-reference alignment sweeps")
    p.add_argument("--config")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--t-max", dest="t_max", type=float, default=None)
    p.add_argument("--snr", type=float, default=None)
    p.add_argument("--bandlimit", "-L", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-list", default=None, help="comma list of sample sizes")
    p.add_argument("--snr-list", default=None, help="comma list of SNRs")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--dump-config", action="store_true")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_mra)

    p = sub.add_parser("classify", help="invariant-metric classification experiment")
    p.add_argument("--config")
    p.add_argument("--classes", dest="n_classes", type=int, default=None)
    p.add_argument("--n-images", type=int, default=None)
    p.add_argument("--snr", type=float, default=None)
    p.add_argument("--k-neighbors", type=int, default=None)
    p.add_argument("--bandlimit", "-L", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--t-max-list", default=None)
    p.add_argument("--dump-config", action="store_true")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("noise-stats", help="power spectra of projected white noise")
    p.add_argument("--bandlimit", "-L", type=int, default=16)
    p.add_argument("--n", type=int, default=101)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_noise_stats)

    p = sub.add_parser("cg-table", help="precompute and cache coupling coefficients")
    p.add_argument("--bandlimit", "-L", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cg_table)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
