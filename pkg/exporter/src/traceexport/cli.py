"""Exporter command line: emit traces, size checkpoints."""

from __future__ import annotations

import argparse
import json
import sys

from .export import ExportJob, export_trace
from .formats import checkpoint_size, parse_config_file


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="traceexport",
        description="Export risk traces from autoregressive checkpoints",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="run a model over a corpus, emit a trace")
    p.add_argument("--config", help="key=value config file; flags override")
    p.add_argument("--model", help="stub:uniform | stub:echo | hf:<path>")
    p.add_argument("--corpus")
    p.add_argument("--out", required=True,
                   help="trace path; .rtrc writes the binary form")
    p.add_argument("--tracked-k", default=None, help="comma list, e.g. 1,10,100")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-context", type=int, default=None)
    p.add_argument("--eot-token-id", type=int, default=None)

    s = sub.add_parser("size", help="checkpoint size under the pinned DEFLATE")
    s.add_argument("--checkpoint", required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "size":
            print(json.dumps({"deflate_bits": checkpoint_size(args.checkpoint)}))
            return 0
        cfg = {
            "model": None, "corpus": None, "tracked_k": "1,10,100",
            "n": 10_000, "seed": 0, "max_context": None, "eot_token_id": None,
        }
        if args.config:
            file_cfg = parse_config_file(args.config)
            unknown = set(file_cfg) - set(cfg)
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
            cfg.update(file_cfg)
        for key in cfg:
            flag = getattr(args, key, None)
            if flag is not None:
                cfg[key] = flag
        if not cfg["model"] or not cfg["corpus"]:
            raise ValueError("--model and --corpus are required")
        job = ExportJob(
            model_spec=cfg["model"],
            corpus_path=cfg["corpus"],
            tracked_k=tuple(int(k) for k in str(cfg["tracked_k"]).split(",") if k),
            n_subsample=int(cfg["n"]),
            seed=int(cfg["seed"]),
            max_context=cfg["max_context"],
            eot_token_id=cfg["eot_token_id"],
        )
        path = export_trace(job, args.out)
        print(f"trace written to {path}")
        return 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
