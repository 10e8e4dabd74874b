"""Run configuration: key-value files, flag overrides, run persistence.

Config files are plain ``key = value`` lines (``#`` comments allowed);
values parse as JSON scalars when they can and stay strings otherwise.
Every run writes its fully resolved configuration as JSON next to its
outputs so a report is reproducible from the config plus input files.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

ENV_OUT_ROOT = "TOKENCERT_OUT_ROOT"


def parse_config_file(path: str | Path) -> dict:
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            try:
                out[key] = json.loads(value)
            except json.JSONDecodeError:
                out[key] = value
    return out


def resolve_config(args: dict, config_path: str | None, defaults: dict) -> dict:
    """defaults < config file < explicit CLI flags (None means unset)."""
    resolved = dict(defaults)
    if config_path:
        file_cfg = parse_config_file(config_path)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_cfg)
    resolved.update({k: v for k, v in args.items() if v is not None})
    return resolved


def run_directory(explicit: str | None, command: str) -> Path:
    if explicit:
        root = Path(explicit)
    else:
        base = os.environ.get(ENV_OUT_ROOT, "runs")
        root = Path(base) / command
    root.mkdir(parents=True, exist_ok=True)
    return root


def write_resolved_config(out_dir: Path, command: str, resolved: dict) -> Path:
    """Everything the computation depends on; output location is excluded
    so reruns into different directories stay bit-identical."""
    path = out_dir / "config.json"
    payload = {"command": command,
               **{k: resolved[k] for k in sorted(resolved) if k != "out"}}
    path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n",
                    encoding="utf-8")
    return path
