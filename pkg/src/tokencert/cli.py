"""Command-line surface tying the certification pipeline together.

Exit codes: 0 success, 2 malformed input (argparse and trace/config
errors), 3 a bound came out vacuous while --require-nonvacuous was set.
Every stochastic command requires an explicit --seed, and every run writes
its resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import coding, corpus, markov, report, seqgen, smoothing, toymodel, trace
from .bounds import evaluate_bpd_bound, evaluate_topk_bound
from .config import resolve_config, run_directory, write_resolved_config
from .errors import TraceFormatError, UnsupportedKError
from .validate import run_bound_validation

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_VACUOUS = 3


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def _resolve(args: argparse.Namespace, keys: dict) -> dict:
    explicit = {k: getattr(args, k.replace("-", "_"), None) for k in keys}
    return resolve_config(explicit, getattr(args, "config", None), keys)


def _load_complexity_bits(cfg) -> float:
    if cfg.get("c_bits") is not None and cfg.get("artifact"):
        raise ValueError("give either c_bits or an artifact file, not both")
    if cfg.get("c_bits") is not None:
        return float(cfg["c_bits"])
    if cfg.get("artifact"):
        return float(coding.read_artifact(cfg["artifact"]).total_bits)
    raise ValueError("complexity missing: pass --c-bits or --artifact")


def _alpha_grid(cfg) -> tuple[float, ...]:
    if cfg.get("alpha_grid"):
        return tuple(float(a) for a in str(cfg["alpha_grid"]).split(",") if a)
    return smoothing.DEFAULT_ALPHA_GRID


def _smoothing_results(tr, cfg, C_bits):
    """(results dict, alpha curve data or None) for the requested mode."""
    mode = cfg["alpha_mode"]
    delta = cfg["delta"]
    correction = not cfg.get("no_subsample_correction", False)
    grid = _alpha_grid(cfg)
    curve = None
    if mode == "global":
        plan = smoothing.SmoothingPlan.for_alpha(cfg["alpha"])
        res = evaluate_bpd_bound(tr, plan, delta=delta, C_bits=C_bits,
                                 subsample_correction=correction)
    elif mode == "grid":
        alpha, res = smoothing.grid_search_global_alpha(
            tr, C_bits, delta, grid=grid, subsample_correction=correction)
        plan = smoothing.SmoothingPlan.for_alpha(alpha)
    elif mode == "per-token":
        plan, res = smoothing.optimize_per_token_alpha(
            tr, C_bits, delta, n_buckets=cfg["buckets"], grid=grid,
            subsample_correction=correction)
        curve = [
            evaluate_bpd_bound(tr, smoothing.SmoothingPlan.for_alpha(a),
                               delta=delta, C_bits=C_bits,
                               subsample_correction=correction).bound
            for a in grid
        ]
    elif mode == "from-trace":
        plan = smoothing.SmoothingPlan(mode="from_trace")
        res = evaluate_bpd_bound(tr, plan, delta=delta, C_bits=C_bits,
                                 subsample_correction=correction)
    else:
        raise ValueError(f"unknown alpha mode {mode!r}")
    return plan, res, curve


def cmd_eval_bound(args) -> int:
    defaults = {
        "trace": None, "c_bits": None, "artifact": None, "delta": 0.05,
        "alpha_mode": "grid", "alpha": 0.1, "alpha_grid": None, "buckets": 8,
        "top_k": "", "no_subsample_correction": False,
        "require_nonvacuous": False, "out": None,
    }
    cfg = _resolve(args, defaults)
    tr = trace.read_trace(cfg["trace"])
    C_bits = _load_complexity_bits(cfg)
    plan, bpd_res, _ = _smoothing_results(tr, cfg, C_bits)
    results = {"bpd": bpd_res}
    for k in _int_list(cfg["top_k"] or ""):
        results[f"top{k}"] = evaluate_topk_bound(
            tr, k, delta=cfg["delta"], C_bits=C_bits,
            subsample_correction=not cfg["no_subsample_correction"])

    out_dir = run_directory(cfg["out"], "eval-bound")
    write_resolved_config(out_dir, "eval-bound", cfg)
    report.write_run_report(out_dir, results)
    (out_dir / "smoothing_plan.json").write_text(
        json.dumps(plan.__dict__, default=list, indent=2) + "\n", encoding="utf-8")
    print(report.bound_table(results))
    print(f"report written to {out_dir}")
    if cfg["require_nonvacuous"] and not all(r.non_vacuous for r in results.values()):
        print("vacuous bound with --require-nonvacuous set", file=sys.stderr)
        return EXIT_VACUOUS
    return EXIT_OK


def cmd_report(args) -> int:
    root = Path(args.run_root)
    rows = report.collect_runs(root) if root.exists() else []
    if not rows:
        print(f"warning: no runs found under {root}", file=sys.stderr)
    out_dir = run_directory(args.out, "report")
    report.write_summary(rows, out_dir)
    print((out_dir / "summary.md").read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_train_markov(args) -> int:
    defaults = {
        "corpus": None, "order": 1, "alpha": markov.DEFAULT_ALPHA,
        "delta": 0.05, "subsample": 10_000, "seed": None, "out": None,
    }
    cfg = _resolve(args, defaults)
    stream = corpus.read_corpus(cfg["corpus"])
    model = markov.train(stream, cfg["order"], alpha=cfg["alpha"])
    tr = markov.build_trace(model, stream, cfg["subsample"], cfg["seed"])
    C_bits = markov.size_bits(model)
    res = evaluate_bpd_bound(
        tr, smoothing.SmoothingPlan.for_alpha(model.alpha),
        delta=cfg["delta"], C_bits=C_bits,
    )
    out_dir = run_directory(cfg["out"], f"markov-k{cfg['order']}")
    write_resolved_config(out_dir, "train-markov", cfg)
    coding.write_artifact(markov.as_artifact(model), out_dir / "model.tcar")
    trace.write_text(tr, out_dir / "trace.trc")
    results = {f"markov-k{cfg['order']}": res}
    report.write_run_report(out_dir, results)
    print(report.bound_table(results))
    print(f"C(h) = {C_bits} bits over m = {tr.m} tokens; outputs in {out_dir}")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    defaults = {
        "corpus": None, "parametrization": "monarch", "context": 4,
        "steps": 2000, "lr": 0.5, "seed": None, "levels": 256, "rank": 4,
        "nblocks": None, "subspace_dim": None, "delta": 0.05,
        "subsample": 10_000, "tracked_k": "1,10", "out": None,
    }
    cfg = _resolve(args, defaults)
    stream = corpus.read_corpus(cfg["corpus"])
    kinds = [k.strip() for k in str(cfg["parametrization"]).split(",") if k.strip()]
    out_dir = run_directory(cfg["out"], "train-toy")
    write_resolved_config(out_dir, "train-toy", cfg)
    results = {}
    sweep_rows = []
    for kind in kinds:
        model, tr, artifact = toymodel.train_toy_model(
            stream, kind, context=cfg["context"], steps=cfg["steps"],
            lr=cfg["lr"], seed=cfg["seed"], levels=cfg["levels"],
            n_subsample=cfg["subsample"],
            tracked_k=tuple(_int_list(cfg["tracked_k"])),
            rank=cfg["rank"], nblocks=cfg["nblocks"],
            subspace_dim=cfg["subspace_dim"],
        )
        C_bits = artifact.total_bits
        _, res = smoothing.grid_search_global_alpha(tr, C_bits, cfg["delta"])
        results[kind] = res
        coding.write_artifact(artifact, out_dir / f"model-{kind}.tcar")
        trace.write_text(tr, out_dir / f"trace-{kind}.trc")
        sweep_rows.append({
            "parametrization": kind,
            "subspace_dim": cfg["subspace_dim"] or 0,
            "params": model.n_trainable,
            "empirical_bpd": res.empirical_term,
            "c_bits": C_bits,
            "bound": res.bound,
        })
    report.write_run_report(out_dir, results)
    with open(out_dir / "sweep.csv", "w", encoding="utf-8") as fh:
        cols = list(sweep_rows[0])
        fh.write(",".join(cols) + "\n")
        for row in sweep_rows:
            fh.write(",".join(str(row[c]) for c in cols) + "\n")
    print(report.bound_table(results))
    print(f"outputs in {out_dir}")
    return EXIT_OK


def cmd_optimize_alpha(args) -> int:
    defaults = {
        "trace": None, "c_bits": None, "artifact": None, "delta": 0.05,
        "mode": "per-token", "alpha_grid": None, "buckets": 8, "out": None,
    }
    cfg = _resolve(args, defaults)
    tr = trace.read_trace(cfg["trace"])
    C_bits = _load_complexity_bits(cfg)
    plan, res, curve = _smoothing_results(tr, dict(cfg, alpha_mode=cfg["mode"]), C_bits)
    out_dir = run_directory(cfg["out"], "optimize-alpha")
    write_resolved_config(out_dir, "optimize-alpha", cfg)
    results = {cfg["mode"]: res}
    report.write_run_report(out_dir, results)
    (out_dir / "smoothing_plan.json").write_text(
        json.dumps(plan.__dict__, default=list, indent=2) + "\n", encoding="utf-8")
    grid = _alpha_grid(cfg)
    if curve is None:
        curve = [
            evaluate_bpd_bound(tr, smoothing.SmoothingPlan.for_alpha(a),
                               delta=cfg["delta"], C_bits=C_bits).bound
            for a in grid
        ]
    report.write_alpha_curve(grid, curve, res.bound, out_dir)
    print(report.bound_table(results))
    print(f"outputs in {out_dir}")
    return EXIT_OK


def cmd_compress(args) -> int:
    defaults = {
        "weights": None, "deflate": None, "levels": 256, "out": None,
    }
    cfg = _resolve(args, defaults)
    out_dir = run_directory(cfg["out"], "compress")
    write_resolved_config(out_dir, "compress", cfg)
    if (cfg["weights"] is None) == (cfg["deflate"] is None):
        raise ValueError("pass exactly one of --weights or --deflate")
    if cfg["weights"]:
        w = np.load(cfg["weights"]) if str(cfg["weights"]).endswith(".npy") \
            else np.loadtxt(cfg["weights"])
        artifact = coding.compress_weights(w, cfg["levels"])
    else:
        data = Path(cfg["deflate"]).read_bytes()
        artifact = coding.deflate_artifact(data)
    coding.write_artifact(artifact, out_dir / "artifact.tcar")
    summary = {
        "scheme": artifact.scheme,
        "payload_bits": artifact.payload_bits,
        "header_bits": artifact.header_bits,
        "total_bits": artifact.total_bits,
        "symbol_count": artifact.symbol_count,
    }
    (out_dir / "artifact.json").write_text(json.dumps(summary, indent=2) + "\n",
                                           encoding="utf-8")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_gen_sequences(args) -> int:
    defaults = {
        "complexity": 4, "length": 30, "count": 984, "seed": None, "out": None,
    }
    cfg = _resolve(args, defaults)
    out_dir = run_directory(cfg["out"], "gen-sequences")
    write_resolved_config(out_dir, "gen-sequences", cfg)
    structured = seqgen.gen_structured(cfg["complexity"], cfg["length"],
                                       cfg["count"], seed=cfg["seed"])
    random_ds = seqgen.gen_random_baseline(structured, seed=cfg["seed"] + 1)
    for ds in (structured, random_ds):
        corpus.write_corpus(seqgen.tokenize_dataset(ds),
                            out_dir / f"{ds.kind}.corpus")
    print(f"984-style datasets written to {out_dir}")
    return EXIT_OK


def cmd_memorization(args) -> int:
    defaults = {
        "levels": "64,16,8,4,2", "complexity": 4, "length": 30, "count": 984,
        "seed": None, "window": 13, "epochs": 60, "lr": 0.5, "out": None,
    }
    cfg = _resolve(args, defaults)
    rows = seqgen.memorization_experiment(
        _int_list(cfg["levels"]), complexity=cfg["complexity"],
        length=cfg["length"], count=cfg["count"], seed=cfg["seed"],
        window=cfg["window"], epochs=cfg["epochs"], lr=cfg["lr"],
    )
    out_dir = run_directory(cfg["out"], "memorization")
    write_resolved_config(out_dir, "memorization", cfg)
    report.write_memorization_report(rows, out_dir)
    print(f"{'kind':<12} {'levels':>8} {'accuracy':>10}")
    for r in rows:
        label = r["levels"] or "full"
        print(f"{r['kind']:<12} {label:>8} {r['accuracy']:>10.3f}")
    print(f"outputs in {out_dir}")
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    defaults = {"tokens": 1_000_000, "vocab": 512, "seed": None, "out": None}
    cfg = _resolve(args, defaults)
    out_dir = run_directory(cfg["out"], "gen-corpus")
    write_resolved_config(out_dir, "gen-corpus", cfg)
    stream = corpus.synthetic_corpus(cfg["tokens"], vocab_size=cfg["vocab"],
                                     seed=cfg["seed"])
    corpus.write_corpus(stream, out_dir / "corpus.txt")
    print(f"{len(stream)} tokens over V={cfg['vocab']} written to {out_dir}")
    return EXIT_OK


def cmd_validate_bound(args) -> int:
    defaults = {"sequences": 1000, "seed": 0, "out": None}
    cfg = _resolve(args, defaults)
    rep = run_bound_validation(n_sequences=cfg["sequences"], seed=cfg["seed"])
    out_dir = run_directory(cfg["out"], "validate-bound")
    write_resolved_config(out_dir, "validate-bound", cfg)
    payload = {
        "n_sequences": rep.n_sequences,
        "delta": rep.delta,
        "full_failures": rep.full_failures,
        "subsample_failures": rep.subsample_failures,
        "empirical_only_failures": rep.empirical_only_failures,
    }
    (out_dir / "validation.json").write_text(json.dumps(payload, indent=2) + "\n",
                                             encoding="utf-8")
    print(json.dumps(payload))
    ok = (rep.full_rate <= rep.delta and rep.subsample_rate <= rep.delta)
    return EXIT_OK if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokencert",
        description="Token-level generalization-bound certification toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, helptext):
        p = sub.add_parser(name, help=helptext)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--out", help="output directory (default runs/<command>)")
        return p

    p = add("eval-bound", cmd_eval_bound, "certify a risk trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--c-bits", type=float)
    p.add_argument("--artifact", help="compressed artifact supplying C(h)")
    p.add_argument("--delta", type=float)
    p.add_argument("--alpha-mode",
                   choices=("global", "grid", "per-token", "from-trace"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--alpha-grid", help="comma list overriding the search grid")
    p.add_argument("--buckets", type=int)
    p.add_argument("--top-k", help="comma-separated k values to certify")
    p.add_argument("--no-subsample-correction", action="store_true", default=None)
    p.add_argument("--require-nonvacuous", action="store_true", default=None)

    p = add("report", cmd_report, "aggregate run directories into tables")
    p.add_argument("--run-root", required=True)

    p = add("train-markov", cmd_train_markov, "train and certify a Markov chain")
    p.add_argument("--corpus", required=True)
    p.add_argument("--order", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--subsample", type=int)
    p.add_argument("--seed", type=int, required=True)

    p = add("train-toy", cmd_train_toy, "train and certify toy structured models")
    p.add_argument("--corpus", required=True)
    p.add_argument("--parametrization",
                   help="comma list of dense,lora,kronecker,monarch")
    p.add_argument("--context", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--levels", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--nblocks", type=int)
    p.add_argument("--subspace-dim", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--subsample", type=int)
    p.add_argument("--tracked-k")

    p = add("optimize-alpha", cmd_optimize_alpha, "optimize prediction smoothing")
    p.add_argument("--trace", required=True)
    p.add_argument("--c-bits", type=float)
    p.add_argument("--artifact")
    p.add_argument("--delta", type=float)
    p.add_argument("--mode", choices=("grid", "per-token"))
    p.add_argument("--alpha-grid", help="comma list overriding the search grid")
    p.add_argument("--buckets", type=int)

    p = add("compress", cmd_compress, "quantize+code weights or size a checkpoint")
    p.add_argument("--weights", help=".npy or text vector to quantize+code")
    p.add_argument("--deflate", help="file to size under the pinned DEFLATE setting")
    p.add_argument("--levels", type=int)

    p = add("gen-sequences", cmd_gen_sequences, "emit structured/random datasets")
    p.add_argument("--complexity", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int, required=True)

    p = add("memorization", cmd_memorization, "quantization forgetting sweep")
    p.add_argument("--levels")
    p.add_argument("--complexity", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--window", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)

    p = add("gen-corpus", cmd_gen_corpus, "synthesize a desk-scale token corpus")
    p.add_argument("--tokens", type=int)
    p.add_argument("--vocab", type=int)
    p.add_argument("--seed", type=int, required=True)

    p = add("validate-bound", cmd_validate_bound, "Monte Carlo certificate check")
    p.add_argument("--sequences", type=int)
    p.add_argument("--seed", type=int)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except TraceFormatError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except UnsupportedKError as exc:
        print(f"unsupported k: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
