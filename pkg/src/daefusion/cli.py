"""Command-line surface: benchmarks, gradient verification, toy training,
ablations, and parameter counts.

Exit codes are a stable contract: 0 success, 1 verification failure,
2 configuration error (argparse uses 2 for bad flags as well). Tabular
outputs are CSV with fixed headers. The config file is a single flat JSON
object; unknown keys are hard errors so a typo in an ablation config
cannot silently fall back to a default.
"""

import argparse
import csv
import json
import os
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields as dataclass_fields, replace

import numpy as np

from .architecture import (ConfigError, Model, ModelConfig, build_params,
                           save_checkpoint)
from .attention import (efficient_attention, init_attention_params,
                        init_scca_params, scca, standard_attention,
                        transpose_attention)
from .blocks import (DualStrategy, TokenMap, dual_block_variant,
                     init_block_params, init_ffn_params, mix_ffn)
from .numerics import AllocationLog, Tensor, rng
from .numerics import ops
from .numerics.gradcheck import grad_check, grad_check_sampled, run_op_suite
from .training import (TrainConfig, one_hot, synth_task, total_loss, train,
                       write_eval_report, write_train_log)

OP_TOL = 1e-5
BLOCK_TOL = 1e-4
MODEL_TOL = 1e-3

BENCH_HEADER = ["kernel", "n", "d", "median_seconds", "peak_bytes"]
ABLATE_HEADER = ["variant", "param_count", "final_loss", "dsc"]
GRADCHECK_HEADER = ["item", "worst_rel_err", "tolerance", "status"]

DEFAULT_N_SWEEP = (256, 512, 1024, 2048, 4096)
DEFAULT_BENCH_D = 64
DEFAULT_BENCH_REPS = 3
DEFAULT_BENCH_KERNELS = ("standard", "efficient")
ABLATION_IMAGE_SIZES = (16, 32, 48)


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------

MODEL_KEYS = {f.name for f in dataclass_fields(ModelConfig)}
TRAIN_KEYS = {f.name for f in dataclass_fields(TrainConfig)} - {"model"}
BENCH_KEYS = {"n_sweep", "d", "reps", "kernels"}
CONFIG_KEYS = MODEL_KEYS | TRAIN_KEYS | BENCH_KEYS


def load_run_config(path):
    """Flat JSON config; every key must belong to the documented schema."""
    if path is None:
        return {}
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = sorted(set(raw) - CONFIG_KEYS)
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(unknown)
                          + "; known keys: " + ", ".join(sorted(CONFIG_KEYS)))
    return raw


def resolve_seed(arg_seed, raw):
    """--seed beats the config seed beats DAEFUSION_SEED beats 0."""
    if arg_seed is not None:
        return int(arg_seed)
    if "seed" in raw:
        if not isinstance(raw["seed"], int):
            raise ConfigError(f"seed must be an integer, got {raw['seed']!r}")
        return raw["seed"]
    env = os.environ.get("DAEFUSION_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"DAEFUSION_SEED={env!r} is not an integer")
    return 0


def model_config_from(raw, seed):
    kwargs = {k: raw[k] for k in MODEL_KEYS & set(raw) if k != "seed"}
    if "embed_dims" in kwargs:
        dims = kwargs["embed_dims"]
        if not isinstance(dims, (list, tuple)):
            raise ConfigError(f"embed_dims must be a list, got {dims!r}")
        kwargs["embed_dims"] = tuple(int(v) for v in dims)
    if "strategy" in kwargs:
        try:
            kwargs["strategy"] = DualStrategy(kwargs["strategy"])
        except ValueError:
            valid = ", ".join(s.value for s in DualStrategy)
            raise ConfigError(f"unknown strategy {kwargs['strategy']!r}; "
                              f"valid: {valid}")
    try:
        cfg = ModelConfig(seed=seed, **kwargs)
    except TypeError as e:
        raise ConfigError(f"bad model config value: {e}")
    cfg.validate()
    return cfg


def train_config_from(raw, seed):
    problems = []
    model = None
    try:
        model = model_config_from(raw, seed)
    except ConfigError as e:
        problems.append(str(e))
    kwargs = {k: raw[k] for k in TRAIN_KEYS & set(raw)}
    tc = TrainConfig(model=model if model else ModelConfig(), **kwargs)
    if tc.steps < 1:
        problems.append(f"steps must be >= 1, got {tc.steps}")
    if tc.batch_size < 1:
        problems.append(f"batch_size must be >= 1, got {tc.batch_size}")
    if not tc.lr > 0:
        problems.append(f"lr must be > 0, got {tc.lr}")
    if not 0.0 <= tc.momentum < 1.0:
        problems.append(f"momentum must be in [0, 1), got {tc.momentum}")
    if tc.weight_decay < 0:
        problems.append(f"weight_decay must be >= 0, got {tc.weight_decay}")
    if tc.num_shapes < 1:
        problems.append(f"num_shapes must be >= 1, got {tc.num_shapes}")
    if tc.eval_images < 1:
        problems.append(f"eval_images must be >= 1, got {tc.eval_images}")
    if tc.eval_every < 1:
        problems.append(f"eval_every must be >= 1, got {tc.eval_every}")
    if tc.target_dsc is not None and not 0.0 < tc.target_dsc <= 1.0:
        problems.append(f"target_dsc must be in (0, 1], got {tc.target_dsc}")
    if problems:
        raise ConfigError("; ".join(problems))
    return tc


# ---------------------------------------------------------------------------
# bench-attn
# ---------------------------------------------------------------------------

def _bench_inputs(kernel, n, d, seed):
    """Pre-projected q/k/v at model width d, so only the kernel is timed."""
    gen = rng(seed)
    x = Tensor(gen.normal(0.0, 1.0, (n, d)))
    square = kernel == "transpose"
    params = init_attention_params(gen, d, d_k=d if square else None,
                                   with_tau=square)
    q = ops.matmul(x, params.w_q)
    k = ops.matmul(x, params.w_k)
    v = ops.matmul(x, params.w_v)
    if kernel == "standard":
        return lambda: standard_attention(q, k, v)
    if kernel == "efficient":
        return lambda: efficient_attention(q, k, v)
    if kernel == "transpose":
        return lambda: transpose_attention(q, k, v, params.tau)
    raise ConfigError(f"unknown kernel {kernel!r}")


def bench_attention_case(kernel, n, d, seed, reps):
    """(median_seconds, peak_bytes, AllocationLog) for one kernel at one n.

    One warm-up run is discarded; the allocation log comes from a separate
    run so finalizer bookkeeping never pollutes the timings.
    """
    run = _bench_inputs(kernel, n, d, seed)
    run()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        run()
        times.append(time.perf_counter() - t0)
    with AllocationLog() as log:
        run()
    return statistics.median(times), log.peak_bytes, log


def fit_loglog_slope(ns, ts):
    """Least-squares slope of log(t) against log(n)."""
    return float(np.polyfit(np.log(np.asarray(ns, dtype=float)),
                            np.log(np.asarray(ts, dtype=float)), 1)[0])


def run_bench(kernels, n_sweep, d, seed, reps):
    """CSV rows: one per kernel x n plus a ``<kernel>:slope`` row each.

    Slope rows reuse the same columns: n is -1, median_seconds holds the
    fitted log-log slope, peak_bytes is 0.
    """
    rows = []
    for kernel in kernels:
        medians = []
        for n in n_sweep:
            med, peak, _ = bench_attention_case(kernel, n, d, seed, reps)
            medians.append(med)
            rows.append({"kernel": kernel, "n": n, "d": d,
                         "median_seconds": f"{med:.9g}", "peak_bytes": peak})
        slope = fit_loglog_slope(n_sweep, medians)
        rows.append({"kernel": f"{kernel}:slope", "n": -1, "d": d,
                     "median_seconds": f"{slope:.6g}", "peak_bytes": 0})
    return rows


def cmd_bench_attn(args):
    raw = load_run_config(args.config)
    seed = resolve_seed(args.seed, raw)
    n_sweep = [int(n) for n in raw.get("n_sweep", DEFAULT_N_SWEEP)]
    if len(n_sweep) < 2 or any(b <= a for a, b in zip(n_sweep, n_sweep[1:])):
        raise ConfigError(f"n_sweep must be ascending with >= 2 points, "
                          f"got {n_sweep}")
    d = int(raw.get("d", DEFAULT_BENCH_D))
    if d < 2:
        raise ConfigError(f"d must be >= 2, got {d}")
    reps = int(raw.get("reps", DEFAULT_BENCH_REPS))
    if reps < 3:
        raise ConfigError(f"reps must be >= 3, got {reps}")
    kernels = raw.get("kernels", list(DEFAULT_BENCH_KERNELS))
    bad = [k for k in kernels if k not in ("standard", "efficient",
                                           "transpose")]
    if bad or not kernels:
        raise ConfigError(f"kernels must be a non-empty subset of "
                          f"standard/efficient/transpose, got {kernels}")
    rows = run_bench(kernels, n_sweep, d, seed, reps)
    out = args.out or "bench_attn.csv"
    _write_csv(out, BENCH_HEADER, rows)
    for row in rows:
        if row["n"] == -1:
            print(f"{row['kernel']}: {row['median_seconds']}")
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def _weighted(tokens, weights):
    return ops.sum_all(ops.mul(tokens, weights))


def _condition(named_tensors, scale=25.0):
    """Scale weight matrices from init std 0.02 to O(0.5).

    At init std the downstream gradients sit near the 1e-8 relative-error
    denominator floor, where central differences are pure roundoff noise;
    the chain rule is the same at any weight values, so the checks probe
    at well-conditioned ones.
    """
    for _, t in named_tensors:
        if t.ndim >= 2:
            t.data *= scale


def block_grad_rows(seed):
    """Worst relative error per block construct, full per-element checks."""
    gen = rng(seed)
    d, grid = 8, (3, 3)
    n = grid[0] * grid[1]
    rows = []
    for strategy in DualStrategy:
        params = init_block_params(rng(seed + 1), d, strategy)
        _condition(params.tensors())
        x = TokenMap(Tensor(gen.normal(0.0, 0.5, (n, d)), requires_grad=True),
                     grid)
        w = Tensor(gen.uniform(0.5, 1.5, (n, d)))

        def f(_, params=params, x=x, w=w):
            return _weighted(dual_block_variant(x, params).tokens, w)

        worst = max(grad_check(f, t) for _, t in params.tensors())
        worst = max(worst, grad_check(f, x.tokens))
        rows.append((f"block:{strategy.value}", worst))

    ffn = init_ffn_params(rng(seed + 2), d, d, 2 * d)
    _condition(ffn.tensors())
    xf = TokenMap(Tensor(gen.normal(0.0, 0.5, (n, d)), requires_grad=True),
                  grid)
    wf = Tensor(gen.uniform(0.5, 1.5, (n, d)))

    def f_ffn(_):
        return _weighted(mix_ffn(xf, ffn).tokens, wf)

    worst = max(grad_check(f_ffn, t) for _, t in ffn.tensors())
    rows.append(("block:mix_ffn", max(worst, grad_check(f_ffn, xf.tokens))))

    sp = init_scca_params(rng(seed + 3), d, d)
    _condition(sp.tensors())
    x1 = Tensor(gen.normal(0.0, 0.5, (n, d)), requires_grad=True)
    x2 = Tensor(gen.normal(0.0, 0.5, (n, d)), requires_grad=True)
    ws = Tensor(gen.uniform(0.5, 1.5, (n, 2 * d)))

    def f_scca(_):
        return _weighted(scca(x1, x2, sp), ws)

    named = sp.tensors() + [("x1", x1), ("x2", x2)]
    rows.append(("block:scca", max(grad_check(f_scca, t) for _, t in named)))
    return rows


def model_grad_rows(seed, samples=2):
    """Sampled per-parameter checks on a small full model, grouped by module.

    Exhaustive probing would need two forward passes per scalar; checking
    the largest-gradient elements of every tensor still exercises every
    backward rule. h = 1e-4 keeps the roundoff part of the central
    difference well below the 1e-3 contract on this depth of composition.
    """
    cfg = ModelConfig(image_size=16, embed_dims=(8, 16, 32), seed=seed)
    model = Model(cfg)
    batch = synth_task(seed + 7, cfg.image_size, num_shapes=2,
                       num_classes=cfg.num_classes, batch_size=1)
    image = batch.images[0]
    y = one_hot(batch.masks[0].reshape(-1), cfg.num_classes)
    hw = cfg.image_size * cfg.image_size

    def f(_):
        logits = model.forward(Tensor(image))
        probs = ops.softmax(ops.reshape(logits, (hw, cfg.num_classes)), axis=1)
        total, _, _ = total_loss(y, probs)
        return total

    worst_by_group = {}
    for name, t in model.store.items():
        err = grad_check_sampled(f, t, h=1e-4, samples=samples,
                                 pick="largest")
        group = name.split(".", 1)[0]
        worst_by_group[group] = max(worst_by_group.get(group, 0.0), err)
    model.store.zero_grads()
    return [(f"model:{g}", e) for g, e in sorted(worst_by_group.items())]


def run_gradcheck(scope, seed):
    """(item, worst_err, tolerance) rows for one scope."""
    if scope == "op":
        return [(f"op:{name}", err, OP_TOL) for name, err in
                run_op_suite(seed)]
    if scope == "block":
        return [(name, err, BLOCK_TOL) for name, err in block_grad_rows(seed)]
    if scope == "model":
        return [(name, err, MODEL_TOL) for name, err in model_grad_rows(seed)]
    raise ConfigError(f"unknown gradcheck scope {scope!r}")


def cmd_gradcheck(args):
    raw = load_run_config(args.config)
    seed = resolve_seed(args.seed, raw)
    rows = run_gradcheck(args.scope, seed)
    failed = False
    report = []
    for name, err, tol in rows:
        ok = np.isfinite(err) and err <= tol
        failed = failed or not ok
        status = "pass" if ok else "FAIL"
        report.append({"item": name, "worst_rel_err": f"{err:.6e}",
                       "tolerance": f"{tol:.0e}", "status": status})
        print(f"{name:<32} {err:12.6e}  tol {tol:.0e}  {status}")
    worst = max(rows, key=lambda r: r[1])
    print(f"worst: {worst[0]} at {worst[1]:.6e}")
    if args.out:
        _write_csv(args.out, GRADCHECK_HEADER, report)
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# train-toy
# ---------------------------------------------------------------------------

def cmd_train_toy(args):
    raw = load_run_config(args.config)
    seed = resolve_seed(args.seed, raw)
    tc = train_config_from(raw, seed)
    result = train(tc)
    out_dir = args.out or "train_toy_out"
    os.makedirs(out_dir, exist_ok=True)
    write_train_log(os.path.join(out_dir, "train_log.csv"), result.history)
    write_eval_report(os.path.join(out_dir, "eval_report.csv"),
                      result.per_class)
    save_checkpoint(os.path.join(out_dir, "checkpoint.dfc"),
                    result.model.store)
    last = result.history[-1]
    r = result.report
    print(f"steps {result.final_step}  loss {last['loss_total']:.4f}  "
          f"dice {last['loss_dice']:.4f}  ce {last['loss_ce']:.4f}")
    print(f"held-out dsc {r.dsc:.4f}  se {r.sensitivity:.4f}  "
          f"sp {r.specificity:.4f}  acc {r.accuracy:.4f}  hd {r.hausdorff:.2f}")
    print(f"wrote {out_dir}/train_log.csv, eval_report.csv, checkpoint.dfc")
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

def ablation_cells(axis, base):
    """(variant, TrainConfig) per cell; the shared seed stays untouched."""
    if axis == "dual_strategy":
        return [(s.value, replace(base, model=replace(base.model, strategy=s)))
                for s in DualStrategy]
    if axis == "skip_count":
        return [(f"skip_{k}",
                 replace(base, model=replace(base.model, skip_connections=k)))
                for k in (0, 1, 2)]
    if axis == "image_size":
        return [(f"image_{s}",
                 replace(base, model=replace(base.model, image_size=s)))
                for s in ABLATION_IMAGE_SIZES]
    raise ConfigError(f"unknown ablation axis {axis!r}")


def run_ablation(axis, base, threads=1):
    cells = ablation_cells(axis, base)

    def run_cell(cell):
        variant, tc = cell
        result = train(tc)
        return {"variant": variant,
                "param_count": result.model.store.total_count(),
                "final_loss": f"{result.history[-1]['loss_total']:.9g}",
                "dsc": f"{result.report.dsc:.9g}"}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run_cell, cells))
    return [run_cell(c) for c in cells]


def cmd_ablate(args):
    raw = load_run_config(args.config)
    seed = resolve_seed(args.seed, raw)
    base = train_config_from(raw, seed)
    threads = args.threads or 1
    if threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {threads}")
    rows = run_ablation(args.axis, base, threads)
    out = args.out or f"ablate_{args.axis}.csv"
    _write_csv(out, ABLATE_HEADER, rows)
    for row in rows:
        print(f"{row['variant']:<20} params {row['param_count']:>8}  "
              f"loss {row['final_loss']}  dsc {row['dsc']}")
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# param-count
# ---------------------------------------------------------------------------

def cmd_param_count(args):
    raw = load_run_config(args.config)
    seed = resolve_seed(args.seed, raw)
    cfg = model_config_from(raw, seed)
    store, _ = build_params(cfg)
    print(store.total_count())
    print(f"{'module':<12} {'params':>10}")
    for module, count in store.breakdown().items():
        print(f"{module:<12} {count:>10}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=header)
            writer.writeheader()
            writer.writerows(rows)
    except OSError as e:
        raise ConfigError(f"cannot write {path}: {e}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="daefusion",
        description="Dual-attention segmentation library: benchmarks, "
                    "gradient verification, toy training, ablations.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output file or directory")
        p.add_argument("--seed", type=int,
                       help="overrides config seed and DAEFUSION_SEED")
        p.add_argument("--threads", type=int, default=1,
                       help="parallel ablation cells (other commands are "
                            "single-threaded)")

    p = sub.add_parser("bench-attn",
                       help="time attention kernels over a token sweep")
    common(p)
    p = sub.add_parser("gradcheck",
                       help="compare tape gradients with central differences")
    p.add_argument("--scope", required=True, choices=("op", "block", "model"))
    common(p)
    p = sub.add_parser("train-toy",
                       help="train on the synthetic task, write artifacts")
    common(p)
    p = sub.add_parser("ablate", help="sweep one design axis, emit a CSV")
    p.add_argument("--axis", required=True,
                   choices=("dual_strategy", "skip_count", "image_size"))
    common(p)
    p = sub.add_parser("param-count", help="print learnable scalar count")
    common(p)
    return parser


COMMANDS = {
    "bench-attn": cmd_bench_attn,
    "gradcheck": cmd_gradcheck,
    "train-toy": cmd_train_toy,
    "ablate": cmd_ablate,
    "param-count": cmd_param_count,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"daefusion: config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"daefusion: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
