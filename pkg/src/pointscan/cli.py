"""Command line entry point.

Subcommands: ``scan-check`` (numerical self-tests of the scan core),
``gradcheck`` (finite-difference check of network gradients), ``serialize``
(inspect point orderings on a file of points), ``train`` / ``eval`` (toy
synthetic runs with artifacts), ``ablate`` (single-factor sweeps), and
``timing`` (forward wall time versus sequence length).

Exit codes: 0 success, 1 check or numerical failure, 2 usage or IO error.
The POINTSCAN_PRECISION environment variable ("32" or "64") supplies the
default for scan-check --precision.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import harness
from . import network as pnet
from . import serialization
from . import ssm
from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    ParseError,
    PermutationError,
    ShapeError,
)
from .tensor import tensor

SCAN_SUITES = (
    "sequential-vs-parallel",
    "gs6-repeat-equivalence",
    "attention-matrix",
    "zoh-rk4",
)

_TOLERANCES = {
    64: {
        "sequential-vs-parallel": 1e-10,
        "gs6-repeat-equivalence": 1e-12,
        "attention-matrix": 1e-8,
        "zoh-rk4": 1e-8,
    },
    32: {
        "sequential-vs-parallel": 1e-5,
        "gs6-repeat-equivalence": 1e-5,
        "attention-matrix": 1e-4,
        "zoh-rk4": 1e-4,
    },
}

# injected deviation for the negative control; above every tolerance above
_FAULT = 1e-3

TIMING_LENGTHS = (128, 256, 512, 1024, 2048, 4096, 8192)

TRAIN_GENERATORS = {
    "recognition": ("sphere", "cube", "cylinder"),
    "segmentation": ("dumbbell",),
}


# ---------------------------------------------------------------------------
# scan-check suites


def _suite_seq_vs_par(seed, sizes, dtype, cases, fault):
    """Parallel tree scan against the sequential reference on random inputs."""
    worst_dev, worst_case = -1.0, None
    for i in range(cases):
        rng = np.random.default_rng([seed, 1, i])
        b = int(rng.integers(1, 5))
        l = int(sizes[int(rng.integers(len(sizes)))])
        d = int(rng.integers(1, 33))
        n = int(rng.integers(1, 17))
        inputs = ssm.DiscretizedScanInputs(
            a_bar=tensor(rng.uniform(0.01, 0.999, (b, l, d, n)), dtype=dtype),
            b_bar_x=tensor(rng.standard_normal((b, l, d, n)), dtype=dtype),
            c=tensor(rng.standard_normal((b, l, n)), dtype=dtype),
        )
        y_seq = ssm.scan_sequential(inputs).data
        y_par = ssm.scan_parallel(inputs).data
        if fault and i == 0:
            y_par = y_par + _FAULT
        dev = float(np.max(np.abs(y_par - y_seq)))
        if dev > worst_dev:
            worst_dev = dev
            worst_case = {"seed": [seed, 1, i], "shape": (b, l, d, n)}
    return {"cases": cases, "max_dev": worst_dev, "worst": worst_case}


def _expand_grouped(params, dtype):
    """g=1 parameter set computing the same map as the grouped model.

    Each grouped row of log_neg_a / delta_bias / w_delta serves g adjacent
    channels, so repeating rows (and w_delta columns) g times yields the
    explicit full-width model.
    """
    g = params.g
    return ssm.GS6Params(
        log_neg_a=tensor(np.repeat(params.log_neg_a.data, g, axis=0), dtype=dtype),
        delta_bias=tensor(np.repeat(params.delta_bias.data, g), dtype=dtype),
        w_b=tensor(params.w_b.data.copy(), dtype=dtype),
        w_c=tensor(params.w_c.data.copy(), dtype=dtype),
        w_delta=tensor(np.repeat(params.w_delta.data, g, axis=1), dtype=dtype),
        g=1,
    )


def _suite_repeat_equivalence(seed, sizes, dtype, cases, fault):
    """Grouped scan against the explicitly channel-expanded ungrouped scan."""
    worst_dev, worst_case = -1.0, None
    for i in range(cases):
        rng = np.random.default_rng([seed, 2, i])
        g = int(rng.choice([2, 3, 4]))
        d = g * int(rng.integers(1, 9))
        n = int(rng.integers(1, 17))
        b = int(rng.integers(1, 5))
        l = int(sizes[int(rng.integers(len(sizes)))])
        mode = "euler" if i % 2 == 0 else "zoh"
        method = "parallel" if i % 4 < 2 else "sequential"
        params = ssm.gs6_init(d, n, g, rng, dtype=dtype)
        x = tensor(rng.standard_normal((b, l, d)), dtype=dtype)
        y_grouped = ssm.gs6_forward(x, params, method=method, mode=mode).data
        expanded = _expand_grouped(params, dtype)
        y_expanded = ssm.gs6_forward(x, expanded, method=method, mode=mode).data
        if fault and i == 0:
            y_expanded = y_expanded + _FAULT
        dev = float(np.max(np.abs(y_grouped - y_expanded)))
        if dev > worst_dev:
            worst_dev = dev
            worst_case = {"seed": [seed, 2, i], "shape": (b, l, d, n, g)}
    return {"cases": cases, "max_dev": worst_dev, "worst": worst_case}


def _suite_attention(seed, dtype, cases, fault):
    """Dense mixing matrices against the scan; upper triangle must be zero."""
    worst_dev, worst_case, upper_zero = -1.0, None, True
    for i in range(cases):
        rng = np.random.default_rng([seed, 3, i])
        l = int(rng.integers(1, 17))
        d = int(rng.integers(1, 9))
        n = int(rng.integers(1, 9))
        params = ssm.gs6_init(d, n, 1, rng, dtype=dtype)
        x = tensor(rng.standard_normal((1, l, d)), dtype=dtype)
        w = ssm.attention_matrix_oracle(x, params)
        y = ssm.gs6_forward(x, params).data
        recon = np.einsum("dij,jd->id", w, x.data.astype(np.float64)[0])
        if fault and i == 0:
            recon = recon + _FAULT
        dev = float(np.max(np.abs(recon - y[0])))
        if l > 1 and float(np.max(np.abs(np.triu(w, k=1)))) != 0.0:
            upper_zero = False
        if dev > worst_dev:
            worst_dev = dev
            worst_case = {"seed": [seed, 3, i], "shape": (1, l, d, n)}
    return {
        "cases": cases,
        "max_dev": worst_dev,
        "worst": worst_case,
        "flags": {"upper-triangle zero": upper_zero},
    }


def _rk4_segment(h, a, u, dt, substeps):
    """Integrate h' = a*h + u over per-channel horizons dt with constant u.

    h, a, u: (D, N); dt: (D,).  Classic fourth-order Runge-Kutta.
    """
    hs = (dt / substeps)[:, None]
    for _ in range(substeps):
        k1 = a * h + u
        k2 = a * (h + 0.5 * hs * k1) + u
        k3 = a * (h + 0.5 * hs * k2) + u
        k4 = a * (h + hs * k3) + u
        h = h + hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return h


def _suite_zoh_rk4(seed, dtype, cases, fault):
    """Exact hold discretization against direct integration of the system.

    The recurrence h[t] = a_bar*h[t-1] + b_bar*x[t] solves h' = a*h + b*x
    exactly when x is constant over each step, so any gap beyond roundoff
    and the integrator's O(substep^4) truncation is a discretization bug.
    """
    steps = 32
    worst_dev, worst_case = -1.0, None
    for i in range(cases):
        rng = np.random.default_rng([seed, 4, i])
        d = int(rng.integers(1, 5))
        n = int(rng.integers(1, 5))
        # round inputs to the working precision before both evaluations
        a = np.asarray(-np.exp(rng.uniform(-1.0, 0.0, (d, n))), dtype=dtype)
        a = a.astype(np.float64)
        delta = np.exp(rng.uniform(np.log(0.01), np.log(0.25), (1, steps, d)))
        delta = np.asarray(delta, dtype=dtype).astype(np.float64)
        b_t = np.asarray(rng.standard_normal((1, steps, n)), dtype=dtype)
        b_t = b_t.astype(np.float64)
        x = np.asarray(rng.standard_normal((1, steps, d)), dtype=dtype)
        x = x.astype(np.float64)
        a_bar, b_bar = ssm.zoh_discretize(
            tensor(a, dtype=dtype),
            tensor(b_t, dtype=dtype),
            tensor(delta, dtype=dtype),
            mode="zoh",
        )
        a_bar = a_bar.data.astype(np.float64)[0]
        b_bar = b_bar.data.astype(np.float64)[0]
        h = np.zeros((d, n))
        h_rk = np.zeros((d, n))
        dev = 0.0
        for t in range(steps):
            h = a_bar[t] * h + b_bar[t] * x[0, t][:, None]
            u = b_t[0, t][None, :] * x[0, t][:, None]
            h_rk = _rk4_segment(h_rk, a, u, delta[0, t], substeps=64)
            dev = max(dev, float(np.max(np.abs(h - h_rk))))
        if fault and i == 0:
            dev += _FAULT
        if dev > worst_dev:
            worst_dev = dev
            worst_case = {"seed": [seed, 4, i], "shape": (steps, d, n)}
    return {"cases": cases, "max_dev": worst_dev, "worst": worst_case}


def run_scan_suites(seed=0, sizes=(1, 7, 8, 128), precision=64, cases=200,
                    inject_fault=None):
    """Run all four suites; returns one result dict per suite.

    cases sets the size of the sequential-vs-parallel sweep; the other
    suites scale down from it.  inject_fault names a suite whose first case
    is perturbed well past tolerance, as a negative control.
    """
    if precision not in _TOLERANCES:
        raise ConfigError(f"precision must be 32 or 64, got {precision}")
    if cases < 1:
        raise ConfigError("cases must be positive")
    if inject_fault is not None and inject_fault not in SCAN_SUITES:
        raise ConfigError(f"unknown suite {inject_fault!r}, expected {SCAN_SUITES}")
    dtype = np.float64 if precision == 64 else np.float32
    sizes = tuple(int(s) for s in sizes)
    if not sizes or min(sizes) < 1:
        raise ConfigError(f"sequence lengths must be positive, got {sizes}")
    runners = {
        "sequential-vs-parallel": lambda f: _suite_seq_vs_par(
            seed, sizes, dtype, cases, f),
        "gs6-repeat-equivalence": lambda f: _suite_repeat_equivalence(
            seed, sizes, dtype, max(cases // 4, 1), f),
        "attention-matrix": lambda f: _suite_attention(
            seed, dtype, max(cases // 8, 1), f),
        "zoh-rk4": lambda f: _suite_zoh_rk4(
            seed, dtype, max(cases // 12, 1), f),
    }
    results = []
    for name in SCAN_SUITES:
        out = runners[name](inject_fault == name)
        out["suite"] = name
        out["tolerance"] = _TOLERANCES[precision][name]
        flags = out.get("flags", {})
        out["ok"] = out["max_dev"] < out["tolerance"] and all(flags.values())
        results.append(out)
    return results


def cmd_scan_check(args):
    results = run_scan_suites(
        seed=args.seed,
        sizes=_parse_sizes(args.sizes),
        precision=args.precision,
        cases=args.cases,
        inject_fault=args.inject_fault,
    )
    failed = []
    for r in results:
        flags = r.get("flags", {})
        notes = "".join(
            f"  {k}: {'yes' if v else 'NO'}" for k, v in flags.items())
        status = "ok" if r["ok"] else "FAIL"
        print(f"{r['suite']:<24} cases={r['cases']:<4} "
              f"max|dev|={r['max_dev']:.3e}  tol={r['tolerance']:.0e}  "
              f"{status}{notes}")
        if not r["ok"]:
            failed.append(r["suite"])
            worst = r["worst"]
            print(f"  worst case: rng seed {worst['seed']}, "
                  f"shape {worst['shape']}")
    if failed:
        print(f"scan-check: FAILED suites: {', '.join(failed)}")
        return 1
    print(f"scan-check: {len(results)} suites passed "
          f"(precision {args.precision}, seed {args.seed})")
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args):
    config = harness.gradcheck_config(task=args.task)
    report = harness.gradcheck(
        config,
        tolerance=args.tolerance,
        seed=args.seed,
        points=args.points,
        entries_per_group=args.entries,
    )
    for name in sorted(report["groups"]):
        print(f"{name:<28} rel err {report['groups'][name]:.3e}")
    print(f"max rel err {report['max_err']:.3e} over {report['params']} "
          f"parameters, tolerance {report['tolerance']:.0e}")
    print("gradcheck " + ("passed" if report["passed"] else "FAILED"))
    return 0 if report["passed"] else 1


# ---------------------------------------------------------------------------
# serialize


def read_point_file(path):
    """Parse an ASCII point file into coords (L, 3).

    One point per line, whitespace separated: x y z, optionally followed by
    extra numeric columns (features, label), with # starting a comment.
    """
    coords = []
    with open(path) as f:
        for ln, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            if len(toks) < 3:
                raise ParseError(
                    f"{path}:{ln}: expected at least 3 columns (x y z), "
                    f"got {len(toks)}"
                )
            try:
                vals = [float(t) for t in toks]
            except ValueError:
                bad = next(t for t in toks if not _is_number(t))
                raise ParseError(
                    f"{path}:{ln}: non-numeric value {bad!r}") from None
            coords.append(vals[:3])
    if not coords:
        raise ParseError(f"{path}: no points found")
    return np.asarray(coords, dtype=np.float64)


def _is_number(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def _nearest_neighbor(coords):
    """Index of each point's nearest other point; O(L^2) in blocks."""
    l = coords.shape[0]
    nn = np.empty(l, dtype=np.int64)
    for s in range(0, l, 512):
        block = coords[s:s + 512]
        d2 = ((block[:, None, :] - coords[None, :, :]) ** 2).sum(axis=-1)
        rows = np.arange(block.shape[0])
        d2[rows, rows + s] = np.inf
        nn[s:s + block.shape[0]] = np.argmin(d2, axis=1)
    return nn


def serialize_ranks(coords, method, grid_size):
    """Ordered rank columns for a cloud: {"rank_z", ...} or {"rank_curve"}.

    Rank r means the point comes r-th in that ordering; every column is a
    permutation of 0..L-1.
    """
    inv = serialization.inverse_permutation
    if method == "axes":
        return {
            f"rank_{axis.lower()}": inv(
                serialization.axis_sort_permutation(coords, axis))
            for axis in serialization.AXES
        }
    variant = {"hilbert": "hilbert", "trans-hilbert": "trans_hilbert"}[method]
    perm = serialization.hilbert_serialize(coords, grid_size, variant=variant)
    return {"rank_curve": inv(perm)}


def cmd_serialize(args):
    coords = read_point_file(args.input)
    if args.method == "axes" and args.grid_size is not None:
        print("warning: --grid-size is ignored for --method axes",
              file=sys.stderr)
    grid = args.grid_size if args.grid_size is not None else 0.05
    ranks = serialize_ranks(coords, args.method, grid)
    columns = list(ranks)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["point_index"] + columns)
        for i in range(coords.shape[0]):
            w.writerow([i] + [int(ranks[c][i]) for c in columns])
    print(f"wrote {coords.shape[0]} points to {args.out}")
    if coords.shape[0] < 2:
        print("locality: n/a (single point)")
        return 0
    nn = _nearest_neighbor(coords)
    for c in columns:
        r = ranks[c].astype(np.int64)
        locality = float(np.mean(np.abs(r - r[nn])))
        print(f"locality {c}: {locality:.6f}")
    return 0


# ---------------------------------------------------------------------------
# train / eval


def _toy_train_config(task):
    """Small single-stage network that memorizes the bundled synthetic sets."""
    stage = pnet.StageConfig(blocks=1, width=18, n=4, g=1, d=2, k=4)
    classes = 3 if task == "recognition" else 2
    return pnet.NetworkConfig(stages=(stage,), task=task,
                              num_classes=classes, h=18)


def _synthetic_spec(args, task):
    return harness.SyntheticSpec(
        TRAIN_GENERATORS[task],
        points=args.points,
        noise=args.noise,
        samples_per_class=args.samples_per_class,
        seed=args.data_seed,
    )


def cmd_train(args):
    dataset = harness.generate(_synthetic_spec(args, args.task))
    config = _toy_train_config(args.task)
    os.makedirs(args.out_dir, exist_ok=True)
    model, rows = harness.train(
        config,
        dataset,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        log_path=os.path.join(args.out_dir, "metrics.csv"),
        stop_metric=args.stop_metric,
    )
    pnet.save_checkpoint(model.store, os.path.join(args.out_dir, "model.ckpt"))
    harness.write_run_manifest(
        os.path.join(args.out_dir, "run.json"), config, args.seed, dataset)
    last = rows[-1]
    print(f"trained {len(rows)} epochs on {len(dataset)} clouds "
          f"({model.store.count()} parameters)")
    print(f"final epoch {last['epoch']}: loss {last['loss']:.6f} "
          f"metric {last['metric']:.4f}")
    print(f"artifacts in {args.out_dir}: metrics.csv, model.ckpt, "
          f"model.ckpt.json, run.json")
    return 0


def cmd_eval(args):
    with open(os.path.join(args.run_dir, "run.json")) as f:
        manifest = json.load(f)
    config = pnet.NetworkConfig.from_dict(manifest["config"])
    model = pnet.PointNetwork(config, seed=int(manifest.get("seed", 0)))
    pnet.load_checkpoint(model.store, os.path.join(args.run_dir, "model.ckpt"))
    dataset = harness.generate(_synthetic_spec(args, config.task))
    if harness.dataset_hash(dataset) != manifest.get("dataset_sha1"):
        print("warning: dataset differs from the one in the run manifest",
              file=sys.stderr)
    preds = [np.argmax(model.forward(c).data, axis=-1) for c in dataset]
    labels = [c.labels for c in dataset]
    metrics = harness.evaluate_metrics(preds, labels, config.task)
    for key in sorted(metrics):
        print(f"{key}: {metrics[key]:.4f}")
    return 0


# ---------------------------------------------------------------------------
# ablate


def cmd_ablate(args):
    plan = harness.AblationPlan(
        args.factor,
        repetitions=args.repetitions,
        seed=args.seed,
        epochs=args.epochs,
    )
    rows = harness.run_ablation(plan, csv_path=args.out)
    for r in rows:
        print(f"factor={r['factor']} level={r['level']} rep={r['rep']} "
              f"params={r['params']} loss={r['loss']:.4f} "
              f"metric={r['metric']:.4f}")
    if args.out:
        print(f"wrote {len(rows)} rows to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# timing


def timing_profile(lengths=TIMING_LENGTHS, width=32, state=8, repeats=3,
                   seed=0):
    """Best-of-repeats wall time of one scan forward per sequence length.

    Returns (rows, slope): rows is [(length, seconds)] and slope the
    least-squares fit on log-log axes, near 1.0 for linear scaling.
    """
    lengths = tuple(int(l) for l in lengths)
    if len(lengths) < 2:
        raise ConfigError("timing needs at least two lengths for a slope")
    rng = np.random.default_rng(seed)
    params = ssm.gs6_init(width, state, 1, rng)
    inputs = {l: tensor(rng.standard_normal((1, l, width))) for l in lengths}
    ssm.gs6_forward(inputs[lengths[0]], params)  # warm up
    rows = []
    for l in lengths:
        best = math.inf
        for _ in range(max(repeats, 1)):
            t0 = time.perf_counter()
            ssm.gs6_forward(inputs[l], params)
            best = min(best, time.perf_counter() - t0)
        rows.append((l, best))
    slope = float(np.polyfit(
        np.log([r[0] for r in rows]), np.log([r[1] for r in rows]), 1)[0])
    return rows, slope


def cmd_timing(args):
    rows, slope = timing_profile(
        width=args.width, state=args.state, repeats=args.repeats,
        seed=args.seed)
    for l, seconds in rows:
        print(f"L={l:<6} {seconds:.6f} s")
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["length", "seconds"])
            for l, seconds in rows:
                w.writerow([l, repr(seconds)])
        print(f"wrote {len(rows)} rows to {args.out}")
    print(f"log-log slope: {slope:.2f}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _parse_sizes(text):
    try:
        sizes = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise ParseError(
            f"bad --sizes {text!r}: want comma-separated integers") from None
    if not sizes or min(sizes) < 1:
        raise ParseError(f"bad --sizes {text!r}: lengths must be positive")
    return sizes


def _default_precision():
    raw = os.environ.get("POINTSCAN_PRECISION")
    if raw is None:
        return 64
    if raw not in ("32", "64"):
        print(f"warning: ignoring POINTSCAN_PRECISION={raw!r}, want 32 or 64",
              file=sys.stderr)
        return 64
    return int(raw)


def _add_data_flags(p):
    p.add_argument("--points", type=int, default=64,
                   help="points per synthetic cloud")
    p.add_argument("--noise", type=float, default=0.02,
                   help="per-coordinate jitter half-width")
    p.add_argument("--samples-per-class", type=int, default=4)
    p.add_argument("--data-seed", type=int, default=0,
                   help="seed of the synthetic dataset")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pointscan",
        description="Grouped selective-scan point cloud toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan-check",
                       help="numerical self-tests of the scan core")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", default="1,7,8,128",
                   help="comma-separated sequence lengths to draw from")
    p.add_argument("--precision", type=int, choices=(32, 64),
                   default=_default_precision())
    p.add_argument("--cases", type=int, default=200,
                   help="cases for the equivalence sweep; others scale down")
    p.add_argument("--inject-fault", choices=SCAN_SUITES, default=None,
                   help="perturb one suite past tolerance (negative control)")
    p.set_defaults(func=cmd_scan_check)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of network gradients")
    p.add_argument("--task", choices=("recognition", "segmentation"),
                   default="recognition")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=12)
    p.add_argument("--entries", type=int, default=4,
                   help="checked entries per parameter tensor")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("serialize", help="point ordering ranks for a file")
    p.add_argument("--input", required=True, help="ASCII x y z file")
    p.add_argument("--method", choices=("axes", "hilbert", "trans-hilbert"),
                   default="axes")
    p.add_argument("--grid-size", type=float, default=None,
                   help="cell edge for curve methods (default 0.05)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_serialize)

    p = sub.add_parser("train", help="train the toy network on synthetic data")
    p.add_argument("--task", choices=("recognition", "segmentation"),
                   default="recognition")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stop-metric", type=float, default=None,
                   help="stop once the train metric reaches this value")
    p.add_argument("--out-dir", required=True)
    _add_data_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved run on synthetic data")
    p.add_argument("--run-dir", required=True,
                   help="directory written by train")
    _add_data_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="single-factor sweep with matched seeds")
    p.add_argument("--factor", choices=harness.FACTORS, required=True)
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output CSV path")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("timing",
                       help="scan forward wall time versus sequence length")
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--state", type=int, default=8)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output CSV path")
    p.set_defaults(func=cmd_timing)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, json.JSONDecodeError, ParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ConfigError, ContractError, PermutationError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DomainError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
