"""Report rendering: human tables, delimited files, and figures.

Every report path emits three artifacts side by side: a machine-readable
JSON/CSV pair and a rendered matplotlib figure, so runs can be inspected
without re-executing anything.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bounds import BoundResult  # noqa: E402

_COLUMNS = (
    "metric", "bound", "vacuity_threshold", "non_vacuous", "empirical_term",
    "complexity_term", "subsample_term", "complexity_bits", "delta", "m", "n",
    "delta_hat",
)


def bound_table(results: dict[str, BoundResult]) -> str:
    """Fixed-width human table, one row per labeled result."""
    header = f"{'label':<24} {'metric':<8} {'bound':>12} {'threshold':>12} {'verdict':>12}"
    rows = [header, "-" * len(header)]
    for label, res in results.items():
        verdict = "non-vacuous" if res.non_vacuous else "VACUOUS"
        rows.append(
            f"{label:<24} {res.metric:<8} {res.bound:>12.4f} "
            f"{res.vacuity_threshold:>12.4f} {verdict:>12}"
        )
    return "\n".join(rows)


def write_bound_json(results: dict[str, BoundResult], path: Path) -> None:
    payload = {label: res.as_dict() for label, res in results.items()}
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def write_bound_csv(results: dict[str, BoundResult], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("label",) + _COLUMNS)
        for label, res in results.items():
            d = res.as_dict()
            writer.writerow([label] + [d[c] for c in _COLUMNS])


def plot_bound_terms(results: dict[str, BoundResult], path: Path) -> None:
    """Stacked decomposition of each bound against its vacuity threshold."""
    labels = list(results)
    fig, ax = plt.subplots(figsize=(max(4.0, 1.6 * len(labels)), 3.6))
    xs = range(len(labels))
    emp = [results[k].empirical_term for k in labels]
    conc = [results[k].complexity_term for k in labels]
    sub = [results[k].subsample_term for k in labels]
    ax.bar(xs, emp, label="empirical", color="#4878d0")
    ax.bar(xs, conc, bottom=emp, label="concentration", color="#ee854a")
    ax.bar(xs, sub, bottom=[e + c for e, c in zip(emp, conc)],
           label="subsample", color="#6acc64")
    for i, k in enumerate(labels):
        ax.hlines(results[k].vacuity_threshold, i - 0.45, i + 0.45,
                  colors="crimson", linestyles="--",
                  label="random guess" if i == 0 else None)
    ax.set_xticks(list(xs), labels, rotation=20, ha="right")
    ax.set_ylabel("bound (bits or error)")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_run_report(out_dir: Path, results: dict[str, BoundResult]) -> None:
    """The full report triple next to whatever the command produced."""
    write_bound_json(results, out_dir / "bound.json")
    write_bound_csv(results, out_dir / "bound.csv")
    plot_bound_terms(results, out_dir / "bound_terms.png")


def collect_runs(run_root: Path) -> list[dict]:
    """Rows from every bound.json under a directory tree."""
    rows = []
    for path in sorted(run_root.rglob("bound.json")):
        data = json.loads(path.read_text(encoding="utf-8"))
        for label, entry in data.items():
            entry = dict(entry)
            entry["label"] = label
            entry["run"] = str(path.parent.relative_to(run_root))
            rows.append(entry)
    return rows


def write_summary(rows: list[dict], out_dir: Path) -> None:
    """Aggregate tables (Markdown and CSV) plus a comparison figure."""
    bpd = sorted((r for r in rows if r["metric"] == "bpd"), key=lambda r: r["bound"])
    topk = sorted((r for r in rows if r["metric"] != "bpd"),
                  key=lambda r: (r["metric"], r["bound"]))

    md = ["# Certified bounds", ""]
    for title, section in (("Bits per token", bpd), ("Top-k error", topk)):
        md.append(f"## {title}")
        md.append("")
        if not section:
            md.append("_no runs_")
            md.append("")
            continue
        md.append("| run | label | metric | bound | threshold | verdict | C bits |")
        md.append("|---|---|---|---:|---:|---|---:|")
        for r in section:
            verdict = "non-vacuous" if r["non_vacuous"] else "vacuous"
            md.append(
                f"| {r['run']} | {r['label']} | {r['metric']} | {r['bound']:.4f} "
                f"| {r['vacuity_threshold']:.4f} | {verdict} | {r['complexity_bits']:.0f} |"
            )
        md.append("")
    (out_dir / "summary.md").write_text("\n".join(md), encoding="utf-8")

    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("run", "label") + _COLUMNS)
        for r in bpd + topk:
            writer.writerow([r["run"], r["label"]] + [r[c] for c in _COLUMNS])

    if rows:
        fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(rows)), 3.6))
        names = [f"{r['run']}:{r['label']}" for r in bpd + topk]
        values = [r["bound"] for r in bpd + topk]
        thresholds = [r["vacuity_threshold"] for r in bpd + topk]
        xs = range(len(names))
        ax.bar(xs, values, color="#4878d0")
        ax.plot(xs, thresholds, "v", color="crimson", label="random guess")
        ax.set_xticks(list(xs), names, rotation=30, ha="right", fontsize=7)
        ax.set_ylabel("certified bound")
        ax.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        fig.savefig(out_dir / "summary.png", dpi=150)
        plt.close(fig)


def write_alpha_curve(alphas, bounds, chosen_bound, out_dir: Path) -> None:
    """Bound versus global smoothing level, with the optimized plan marked."""
    with open(out_dir / "alpha_curve.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("alpha", "bound"))
        writer.writerows(zip(alphas, bounds))
    fig, ax = plt.subplots(figsize=(4.5, 3.4))
    ax.semilogx(alphas, bounds, marker="o", ms=3, label="global alpha")
    ax.axhline(chosen_bound, color="#2ca02c", ls="--", label="optimized plan")
    ax.set_xlabel("smoothing level alpha")
    ax.set_ylabel("certified BPD bound")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(out_dir / "alpha_curve.png", dpi=150)
    plt.close(fig)


def write_memorization_report(rows: list[dict], out_dir: Path) -> None:
    with open(out_dir / "memorization.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("kind", "levels", "accuracy"))
        for r in rows:
            writer.writerow((r["kind"], r["levels"], r["accuracy"]))
    by_kind: dict[str, list] = {}
    for r in rows:
        by_kind.setdefault(r["kind"], []).append(r)
    fig, ax = plt.subplots(figsize=(4.5, 3.4))
    for kind, entries in by_kind.items():
        quant = sorted((e for e in entries if e["levels"]), key=lambda e: e["levels"])
        xs = [e["levels"] for e in quant]
        ys = [e["accuracy"] for e in quant]
        full = [e["accuracy"] for e in entries if not e["levels"]]
        line, = ax.semilogx(xs, ys, marker="o", ms=4, label=kind, base=2)
        if full:
            ax.axhline(full[0], color=line.get_color(), ls=":", lw=1)
    ax.set_xlabel("quantization levels")
    ax.set_ylabel("training accuracy")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(out_dir / "memorization.png", dpi=150)
    plt.close(fig)
