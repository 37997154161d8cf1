"""Synthetic case directories and the method x denoiser x lambda sweep."""
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import io as fio
from . import metrics, grid
from .denoise import get_denoiser
from .pnp import REFERENCE_LAMBDAS_2D, PnpParams, pnp_rr, two_step_baseline
from .registration import RegistrationParams, register
from .synthdata import generate_case

MANIFEST = "manifest.csv"
CASE_FILES = ("source", "target_clean", "target_noisy", "source_mask", "target_mask")
METHODS = ("baseline", "two-step", "pnp")
GRID_FACTORS = (10 ** -0.5, 1.0, 10 ** 0.5)


def parse_seeds(text):
    """``"0-9"``, ``"1,4,7"`` or a mix such as ``"0-2,10"``."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1) if not part.startswith("-") else (part, part)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def write_cases(out_dir, seeds, resolution=100, noise_sigma=0.3, max_displacement=0.08):
    fio.ensure_dir(out_dir)
    files = []
    for seed in seeds:
        case = generate_case(seed, resolution, noise_sigma, max_displacement)
        names = {}
        for key in CASE_FILES:
            name = f"case{seed:06d}_{key}.field"
            fio.save_field(os.path.join(out_dir, name), getattr(case, key), "scalar")
            names[key] = name
        files.append(names)
    fio.write_manifest(os.path.join(out_dir, MANIFEST), seeds, files)
    return os.path.join(out_dir, MANIFEST)


@dataclass
class CaseFiles:
    seed: int
    source: np.ndarray
    target_clean: np.ndarray
    target_noisy: np.ndarray
    source_mask: np.ndarray
    target_mask: np.ndarray


def load_cases(cases_dir):
    rows = fio.read_csv(os.path.join(cases_dir, MANIFEST))
    cases = []
    for row in rows:
        arrays = {k: fio.load_field(os.path.join(cases_dir, row[k])) for k in CASE_FILES}
        arrays["source_mask"] = (arrays["source_mask"] > 0.5).astype(np.uint8)
        arrays["target_mask"] = (arrays["target_mask"] > 0.5).astype(np.uint8)
        cases.append(CaseFiles(int(row["seed"]), **arrays))
    return cases


def default_grid(denoiser):
    l1, l2 = REFERENCE_LAMBDAS_2D.get(denoiser, REFERENCE_LAMBDAS_2D["tv"])
    return [l1 * f for f in GRID_FACTORS], [l2 * f for f in GRID_FACTORS]


def plan_runs(n_cases, methods, denoisers, grids):
    """Deterministic (case, method, denoiser, lambda1, lambda2) order.

    ``grids`` maps each denoiser to its ``(lambda1_grid, lambda2_grid)``. The
    plan is the full product, so an empty grid means no runs at all (baseline
    included).
    """
    if any(not g1 or not g2 for g1, g2 in grids.values()):
        return []
    runs = []
    for i in range(n_cases):
        for method in methods:
            if method == "baseline":
                runs.append((i, method, None, None, None))
                continue
            for den in denoisers:
                g1, g2 = grids[den]
                for l1 in g1:
                    for l2 in g2:
                        runs.append((i, method, den, float(l1), float(l2)))
    return runs


def run_one(case, method, denoiser, lambda1, lambda2, reg_params, max_outer=50,
            fixed_point_tol=1e-3):
    """Run one method on one case and return its result row."""
    rec = {"seed": case.seed, "method": method, "denoiser": denoiser,
           "lambda1": lambda1, "lambda2": lambda2, "status": "ok"}
    start = time.perf_counter()
    try:
        denoised = None
        outer = None
        if method == "baseline":
            res = register(case.source, case.target_noisy, reg_params)
            phi, warped = res.phi_inv, res.warped
        elif method == "two-step":
            params = PnpParams(lambda1, lambda2, registration=reg_params, denoiser=denoiser)
            res = two_step_baseline(case.source, case.target_noisy, get_denoiser(denoiser), params)
            phi, warped, denoised = res.phi_inv, res.warped, res.denoised
        elif method == "pnp":
            params = PnpParams(lambda1, lambda2, max_outer, fixed_point_tol, reg_params, denoiser)
            tr = pnp_rr(case.source, case.target_noisy, get_denoiser(denoiser), params)
            phi, warped, denoised, outer = tr.phi_inv, tr.warped, tr.reconstruction, tr.iterations
        else:
            raise ValueError(f"unknown method {method!r}")
        rec["dice"] = metrics.dice(metrics.propagate_mask(case.source_mask, phi), case.target_mask)
        rec["ssd_final"] = grid.ssd(warped, case.target_noisy)
        rec["psnr_denoised"] = (metrics.psnr(denoised, case.target_clean)
                                if denoised is not None else None)
        rec["min_jac_det"] = metrics.jacobian_det_stats(phi)["min"]
        rec["outer_iters"] = outer
    except Exception as exc:  # noqa: BLE001 - recorded in the row, sweep continues
        rec["status"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")[:200]
    rec["wall_seconds"] = time.perf_counter() - start
    return rec


def _run_indexed(args):
    cases, (i, method, den, l1, l2), reg_params, max_outer, tol = args
    return run_one(cases[i], method, den, l1, l2, reg_params, max_outer, tol)


def sweep(cases, methods=METHODS, denoisers=("tv",), lambda1_grid=None, lambda2_grid=None,
          reg_params=RegistrationParams(), max_outer=50, fixed_point_tol=1e-3, jobs=1):
    """Full factorial run; rows come back in plan order whatever ``jobs`` is."""
    grids = {}
    for den in denoisers:
        g1, g2 = default_grid(den)
        grids[den] = (g1 if lambda1_grid is None else list(lambda1_grid),
                      g2 if lambda2_grid is None else list(lambda2_grid))
    runs = plan_runs(len(cases), methods, denoisers, grids)
    if not runs:
        return []
    payload = [(cases, r, reg_params, max_outer, fixed_point_tol) for r in runs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_indexed, payload))
    return [_run_indexed(p) for p in payload]


def summarize(records):
    """Per (method, denoiser) mean and sample standard deviation of Dice."""
    groups = {}
    for rec in records:
        if rec.get("status", "ok") != "ok":
            continue
        groups.setdefault((rec["method"], rec["denoiser"] or ""), []).append(rec["dice"])
    out = []
    for (method, den), values in groups.items():
        arr = np.asarray(values, dtype=np.float64)
        out.append({"method": method, "denoiser": den, "runs": arr.size,
                    "dice_mean": float(arr.mean()),
                    "dice_std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0})
    return out


def write_sweep(records, out_csv):
    fio.write_results_csv(records, out_csv, extra_columns=("status",))
    summary = summarize(records)
    fio.write_csv(summary, summary_path(out_csv),
                  ["method", "denoiser", "runs", "dice_mean", "dice_std"])
    return summary


def summary_path(out_csv):
    root, ext = os.path.splitext(out_csv)
    return f"{root}.summary{ext or '.csv'}"
