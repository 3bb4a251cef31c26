"""Post-run reporting: delimited summaries plus rendered figures.

`render_report` reads a finished run directory and writes a `report/`
folder next to it (or into a chosen directory) holding small CSV files and
matplotlib PNGs for the run's scenario type. `summarize` produces the
one-line-per-fact terminal summary the CLI prints.

The run directory itself is never modified beyond adding the report folder;
the signed manifest covers only `calls.jsonl` and `exports/`, so reports can
be regenerated freely without breaking verification.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from pathlib import Path

from .errors import ConfigError, InvalidField
from .runtime import render_csv


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _load_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as err:
        raise InvalidField(f"run directory is missing {path.name}") from err


def _run_type(run_dir: Path) -> str:
    config = _load_json(run_dir / "config.json")
    try:
        return config["run"]["type"]
    except (KeyError, TypeError) as err:
        raise ConfigError("config.json lacks run.type") from err


def _write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_csv(header, rows))
    return path


def _save_fig(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    return path


# -- per-type reports -----------------------------------------------------------


def _report_panel(run_dir: Path, out: Path) -> list:
    report = _load_json(run_dir / "exports" / "report.json")
    graph = _load_json(run_dir / "exports" / "graph.json")
    written = []
    rows = [
        [pid, rec["utterances"], rec["claims"],
         rec["stance_mix"]["supporting"], rec["stance_mix"]["challenging"],
         rec["stance_mix"]["neutral"]]
        for pid, rec in report["personas"].items()
    ]
    written.append(_write_csv(
        out / "personas.csv",
        ["persona", "utterances", "claims", "supporting", "challenging", "neutral"],
        rows))

    plt = _plt()
    if rows:
        fig, ax = plt.subplots(figsize=(8, 4))
        names = [r[0] for r in rows]
        supporting = [r[3] for r in rows]
        challenging = [r[4] for r in rows]
        neutral = [r[5] for r in rows]
        ax.bar(names, supporting, label="supporting")
        ax.bar(names, challenging, bottom=supporting, label="challenging")
        ax.bar(names, neutral,
               bottom=[s + c for s, c in zip(supporting, challenging)],
               label="neutral")
        ax.set_ylabel("claims")
        ax.set_title("stance mix per persona")
        ax.tick_params(axis="x", rotation=45)
        ax.legend()
        written.append(_save_fig(fig, out / "stance_mix.png"))
        plt.close(fig)

    kinds = Counter(e["kind"] for e in graph["edges"])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    labels = sorted(kinds) or ["(none)"]
    ax.bar(labels, [kinds.get(k, 0) for k in labels])
    ax.set_ylabel("edges")
    ax.set_title(f"edge kinds (convergence {report['convergence_ratio']:.2f})")
    written.append(_save_fig(fig, out / "edge_kinds.png"))
    plt.close(fig)
    return written


def _report_social(run_dir: Path, out: Path) -> list:
    metrics = _load_json(run_dir / "exports" / "metrics.json")
    posts = []
    posts_path = run_dir / "exports" / "posts.jsonl"
    if posts_path.exists():
        for line in posts_path.read_text(encoding="utf-8").splitlines():
            if line:
                posts.append(json.loads(line))
    written = []
    written.append(_write_csv(
        out / "cascades.csv", ["root", "author", "size", "reach"],
        [[c["root"], c["author"], c["size"], c["reach"]]
         for c in metrics["cascades"]]))
    engagement_rows = []
    for agent, counts in metrics["engagement"].items():
        for kind, n in counts.items():
            engagement_rows.append([agent, kind, n])
    written.append(_write_csv(out / "engagement.csv",
                              ["agent", "kind", "actions"], engagement_rows))

    plt = _plt()
    per_round = Counter(p["round_created"] for p in posts)
    rounds = list(range(metrics["rounds"]))
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(rounds, [per_round.get(r, 0) for r in rounds], marker="o", ms=3)
    ax.set_xlabel("round")
    ax.set_ylabel("posts created")
    ax.set_title("activity per round")
    written.append(_save_fig(fig, out / "activity.png"))
    plt.close(fig)

    sizes = [c["size"] for c in metrics["cascades"]]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if sizes:
        ax.hist(sizes, bins=min(20, max(sizes)), edgecolor="black")
    ax.set_xlabel("cascade size")
    ax.set_ylabel("count")
    ax.set_title("cascade sizes")
    written.append(_save_fig(fig, out / "cascade_sizes.png"))
    plt.close(fig)
    return written


def _report_curated_feed(run_dir: Path, out: Path) -> list:
    metrics = _load_json(run_dir / "exports" / "metrics.json")
    written = []
    rows = [[key, metrics[key]] for key in
            ("ranker", "weeks", "users", "impressions", "clicks", "click_rate",
             "opinion_variance", "exposure_entropy_bits", "kendall_tau_mean")]
    rows += [[f"share_topic_{i:02d}", share]
             for i, share in enumerate(metrics["per_topic_share"])]
    written.append(_write_csv(out / "metrics.csv", ["metric", "value"], rows))

    clicks_by_week: Counter = Counter()
    shown_by_week: Counter = Counter()
    with open(run_dir / "exports" / "impressions.csv", encoding="utf-8") as fh:
        for record in csv.DictReader(fh):
            week = int(record["week"])
            shown_by_week[week] += 1
            clicks_by_week[week] += int(record["click"])

    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    shares = metrics["per_topic_share"]
    ax.bar(range(len(shares)), shares)
    ax.set_xlabel("topic")
    ax.set_ylabel("exposure share")
    ax.set_title(f"topic exposure ({metrics['ranker']})")
    written.append(_save_fig(fig, out / "topic_share.png"))
    plt.close(fig)

    weeks = sorted(shown_by_week)
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(weeks, [clicks_by_week[w] / shown_by_week[w] for w in weeks],
            marker="o", ms=3)
    ax.set_xlabel("week")
    ax.set_ylabel("click rate")
    ax.set_title("weekly click rate")
    written.append(_save_fig(fig, out / "click_rate.png"))
    plt.close(fig)
    return written


def _report_multigen(run_dir: Path, out: Path) -> list:
    with open(run_dir / "exports" / "traces.csv", encoding="utf-8") as fh:
        traces = list(csv.DictReader(fh))
    written = []
    if traces:
        last = traces[-1]
        rows = [[key, last[key]] for key in
                ("generation", "producer_best", "producer_mean",
                 "detector_best", "detector_mean")]
    else:
        rows = []
    written.append(_write_csv(out / "final.csv", ["metric", "value"], rows))

    plt = _plt()
    fig, ax = plt.subplots(figsize=(8, 4))
    gens = [int(t["generation"]) for t in traces]
    for column, style in (("producer_best", "-"), ("producer_mean", "--"),
                          ("detector_best", "-"), ("detector_mean", "--")):
        ax.plot(gens, [float(t[column]) for t in traces], style, label=column)
    ax.set_xlabel("generation")
    ax.set_ylabel("fitness")
    ax.set_title("fitness across generations")
    ax.legend()
    written.append(_save_fig(fig, out / "fitness.png"))
    plt.close(fig)
    return written


_REPORTERS = {
    "panel": _report_panel,
    "social": _report_social,
    "curated_feed": _report_curated_feed,
    "multigen": _report_multigen,
}


# -- public entry points ------------------------------------------------------------


def summarize(run_dir: Path | str) -> list:
    """Key facts of a finished run as printable lines."""
    run_dir = Path(run_dir)
    kind = _run_type(run_dir)
    record = _load_json(run_dir / "record.json")
    lines = [
        f"type: {kind}",
        f"status: {record['status']}",
        f"steps: {record['steps']['total']} "
        f"(acts {record['steps']['acts']}, "
        f"boundaries {record['steps']['round_boundaries']})",
        f"gateway calls: {record['call_transcript']['entries']}",
        f"content hash: {record['export_manifest']['content_hash']}",
    ]
    exports = run_dir / "exports"
    if kind == "panel":
        report = _load_json(exports / "report.json")
        totals = report["totals"]
        lines += [
            f"claims: {sum(totals['claims_by_stance'].values())} "
            f"{totals['claims_by_stance']}",
            f"edges: {sum(totals['edges_by_kind'].values())} {totals['edges_by_kind']}",
            f"convergence ratio: {report['convergence_ratio']:.4f}",
            f"unresolved disagreements: {len(report['unresolved_disagreements'])}",
        ]
    elif kind == "social":
        metrics = _load_json(exports / "metrics.json")
        lines += [
            f"posts: {metrics['totals']['posts']}",
            f"reconciliation: {metrics['reconciliation']}",
            f"largest cascade: size {metrics['cascade_summary']['max_size']}, "
            f"reach {metrics['cascade_summary']['max_reach']}",
        ]
    elif kind == "curated_feed":
        metrics = _load_json(exports / "metrics.json")
        lines += [
            f"ranker: {metrics['ranker']}",
            f"impressions: {metrics['impressions']} (click rate "
            f"{metrics['click_rate']:.4f})",
            f"opinion variance: {metrics['opinion_variance']:.6f}",
            f"exposure entropy: {metrics['exposure_entropy_bits']:.4f} bits",
            f"mean kendall tau: {metrics['kendall_tau_mean']:.4f}",
        ]
    elif kind == "multigen":
        with open(exports / "traces.csv", encoding="utf-8") as fh:
            traces = list(csv.DictReader(fh))
        if traces:
            last = traces[-1]
            lines += [
                f"generations: {len(traces)}",
                f"final producer best/mean: {last['producer_best']}/"
                f"{last['producer_mean']}",
                f"final detector best/mean: {last['detector_best']}/"
                f"{last['detector_mean']}",
            ]
    return lines


def render_report(run_dir: Path | str, out_dir: Path | str | None = None) -> list:
    """Write the CSV + figure report for a run; returns the created paths."""
    run_dir = Path(run_dir)
    kind = _run_type(run_dir)
    reporter = _REPORTERS.get(kind)
    if reporter is None:
        raise InvalidField(f"no report renderer for scenario type {kind!r}")
    out = Path(out_dir) if out_dir is not None else run_dir / "report"
    return reporter(run_dir, out)
