"""Command-line entry point: ``perseus {score,attack,observe,run,report}``.

Every subcommand reads one JSON experiment config; command-line flags
override its keys. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from perseus.attacks import (
    PerturbationRecord,
    heterophily_attack,
    perturbed_ratio_curve,
    random_flip_attack,
    sbm_generate,
)
from perseus.errors import PerseusError
from perseus.graph import (
    Graph,
    SplitMasks,
    largest_connected_component,
    load_graph,
    random_split,
    read_edge_list,
    save_graph,
    write_edge_list,
)
from perseus.metrics import SHORT_NAMES, jaccard_matrix, random_table, score_graph
from perseus.model import TrainConfig, run_perseus

log = logging.getLogger("perseus")

DEFAULT_RATES = [0.05, 0.10, 0.15, 0.20, 0.25]
ATTACK_KINDS = ("heterophily", "random", "none", "import")


class UsageError(Exception):
    """Bad command line or config; exits with status 2."""


@dataclass
class ExperimentConfig:
    graph: dict
    metrics: list[str]
    attack: dict
    train: TrainConfig
    split: dict = field(default_factory=dict)
    baseline: bool = False
    curriculum: bool = True
    grid_step: float = 0.05
    out: Path = Path("results")
    base_dir: Path = Path(".")

    @property
    def rates(self) -> list[float]:
        return [float(r) for r in self.attack.get("rates", DEFAULT_RATES)]

    @property
    def seeds(self) -> list[int]:
        return [int(s) for s in self.attack.get("seeds", [0])]

    def path(self, value) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p


def load_config(path, overrides: argparse.Namespace | None = None) -> ExperimentConfig:
    """Parse the JSON config at ``path`` and apply command-line overrides."""
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from None
    base_dir = Path(path).resolve().parent
    o = overrides or argparse.Namespace()

    graph = data.get("graph") or {}
    if "synthetic" not in graph and "features" not in graph:
        raise UsageError("config.graph needs either 'synthetic' or 'edges'/'features' paths")

    metrics = list(data.get("metrics", ["glo"]))
    if getattr(o, "metric", None):
        metrics = list(o.metric)
    for name in metrics:
        if name not in SHORT_NAMES:
            raise UsageError(f"unknown metric {name!r}; choose from {sorted(SHORT_NAMES)}")

    attack = dict(data.get("attack") or {"kind": "none"})
    kind = attack.setdefault("kind", "heterophily")
    if kind not in ATTACK_KINDS:
        raise UsageError(f"unknown attack kind {kind!r}; choose from {ATTACK_KINDS}")
    if getattr(o, "seed", None) is not None:
        attack["seeds"] = [o.seed]
    rates = attack.get("rates", DEFAULT_RATES)
    if not rates or any(not 0 < float(r) <= 1 for r in rates):
        raise UsageError("attack rates must be a nonempty list within (0, 1]")
    if not attack.get("seeds", [0]):
        raise UsageError("at least one seed is required")

    train = dict(data.get("train") or {})
    if "glohom" in data:
        train["glohom"] = data["glohom"]
    try:
        train_cfg = TrainConfig.from_dict(train)
    except (TypeError, PerseusError) as exc:
        raise UsageError(f"bad training config: {exc}") from None

    out = Path(getattr(o, "out", None) or data.get("out", "results"))
    if not out.is_absolute() and getattr(o, "out", None) is None:
        out = base_dir / out
    cfg = ExperimentConfig(
        graph=graph,
        metrics=metrics,
        attack=attack,
        train=train_cfg,
        split=data.get("split") or {},
        baseline=bool(data.get("baseline", False)),
        curriculum=not getattr(o, "no_curriculum", False),
        grid_step=float(data.get("grid_step", 0.05)),
        out=out,
        base_dir=base_dir,
    )
    for key in ("edges", "features", "labels"):
        if key in graph and not cfg.path(graph[key]).exists():
            raise UsageError(f"graph.{key} not found: {graph[key]}")
    return cfg


def build_graph(cfg: ExperimentConfig, seed=0) -> Graph:
    """Clean input graph: a loaded dataset or a seeded synthetic SBM."""
    spec = cfg.graph
    if "synthetic" in spec:
        syn = dict(spec["synthetic"])
        syn.setdefault("seed", seed)
        g = sbm_generate(**syn)
    else:
        labels = spec.get("labels")
        g = load_graph(
            cfg.path(spec["edges"]),
            cfg.path(spec["features"]),
            cfg.path(labels) if labels else None,
        )
    if spec.get("lcc", False):
        g, _ = largest_connected_component(g)
    return g


def attacked_graph(cfg: ExperimentConfig, clean: Graph, rate, seed):
    """Perturbed graph and record for one grid cell; record is None for imports without one."""
    kind = cfg.attack["kind"]
    if kind == "heterophily":
        return heterophily_attack(clean, rate, seed)
    if kind == "random":
        return random_flip_attack(clean, rate, seed)
    if kind == "import":
        if "edges" not in cfg.attack:
            raise UsageError("attack.kind 'import' needs attack.edges")
        edges = read_edge_list(cfg.path(cfg.attack["edges"]), clean.n)
        record = None
        if "record" in cfg.attack:
            record = PerturbationRecord.from_json(cfg.path(cfg.attack["record"]))
        return clean.with_edges(edges), record
    return clean, None


def grid(cfg: ExperimentConfig):
    if cfg.attack["kind"] in ("none", "import"):
        rate = float(cfg.attack.get("rate", 0.0))
        return [(rate, s) for s in cfg.seeds]
    return [(r, s) for r in cfg.rates for s in cfg.seeds]


def cell_tag(rate, seed) -> str:
    return f"r{rate:.2f}_s{seed}"


def get_split(cfg: ExperimentConfig, g: Graph, seed) -> SplitMasks:
    if "path" in cfg.split:
        return SplitMasks.from_json(cfg.path(cfg.split["path"]), g.n)
    return random_split(g, cfg.split.get("ratios", (0.1, 0.1, 0.8)), seed)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_score(cfg: ExperimentConfig) -> list[Path]:
    """Write one ``scores_<metric>.csv`` per requested metric."""
    g = build_graph(cfg, cfg.seeds[0])
    cfg.out.mkdir(parents=True, exist_ok=True)
    J = jaccard_matrix(g) if {"jac", "glo"} & set(cfg.metrics) else None
    written = []
    for name in cfg.metrics:
        table = score_graph(g, name, cfg.train.glohom, J=J)
        path = cfg.out / f"scores_{name}.csv"
        table.to_csv(path)
        written.append(path)
    return written


def cmd_attack(cfg: ExperimentConfig) -> list[Path]:
    """Write ``attacks/<cell>/{edges.tsv,record.json}`` for every (rate, seed)."""
    if cfg.attack["kind"] not in ("heterophily", "random"):
        raise UsageError("attack subcommand needs attack.kind 'heterophily' or 'random'")
    written = []
    for rate, seed in grid(cfg):
        clean = build_graph(cfg, seed)
        g, record = attacked_graph(cfg, clean, rate, seed)
        d = cfg.out / "attacks" / cell_tag(rate, seed)
        d.mkdir(parents=True, exist_ok=True)
        save_graph(clean, d / "clean_edges.tsv", d / "features.csv", d / "labels.csv" if clean.y is not None else None)
        write_edge_list(g.edges, d / "edges.tsv")
        record.to_json(d / "record.json")
        written.append(d)
    return written


def cmd_observe(cfg: ExperimentConfig) -> dict:
    """Perturbed-edge ratio curves per metric (plus a random ranking) per cell."""
    if cfg.attack["kind"] == "none":
        raise UsageError("observe needs an attack (generated or imported with a record)")
    if cfg.attack["kind"] == "import" and "record" not in cfg.attack:
        raise UsageError("observe on an imported graph needs attack.record")
    summary = {}
    for rate, seed in grid(cfg):
        clean = build_graph(cfg, seed)
        g, record = attacked_graph(cfg, clean, rate, seed)
        d = cfg.out / "observe" / cell_tag(rate, seed)
        d.mkdir(parents=True, exist_ok=True)
        J = jaccard_matrix(g)
        aucs = {}
        tables = {name: score_graph(g, name, cfg.train.glohom, J=J) for name in cfg.metrics}
        tables["random"] = random_table(g, seed)
        for name, table in tables.items():
            curve = perturbed_ratio_curve(table, record, cfg.grid_step)
            curve.to_csv(d / f"curve_{name}.csv")
            aucs[name] = curve.auc()
        (d / "auc.json").write_text(json.dumps(aucs, indent=2, sort_keys=True))
        summary[cell_tag(rate, seed)] = aucs
    return summary


def _run_cell(args):
    cfg, metric, rate, seed = args
    row = {"metric": metric, "rate": rate, "seed": seed}
    try:
        clean = build_graph(cfg, seed)
        g, _ = attacked_graph(cfg, clean, rate, seed)
        split = get_split(cfg, g, seed)
        train = replace(cfg.train, seed=seed)
        if metric == "plain":
            result = run_perseus(g, cfg=train, split=split, curriculum=False)
        else:
            result = run_perseus(g, metric, train, split)
        row.update(
            status="ok",
            test_acc=result.test_acc,
            val_acc=result.val_acc,
            train_loss=result.train_loss,
            val_loss=result.val_loss,
            stages=result.stages,
            epochs=len(result.epoch_log),
        )
    except (PerseusError, UsageError, ValueError, ArithmeticError) as exc:
        row.update(status="error", error=f"{type(exc).__name__}: {exc}")
    return row


def cell_path(out: Path, metric, rate, seed) -> Path:
    return out / "cells" / f"{metric}__{cell_tag(rate, seed)}.json"


def worker_count(n_tasks) -> int:
    try:
        cap = int(os.environ.get("PERSEUS_THREADS", "1"))
    except ValueError:
        raise UsageError("PERSEUS_THREADS must be an integer") from None
    return max(1, min(cap, n_tasks))


def cmd_run(cfg: ExperimentConfig) -> dict:
    """Train every (metric, rate, seed) cell, skipping cells already on disk."""
    metrics = list(cfg.metrics) if cfg.curriculum else []
    if cfg.baseline or not cfg.curriculum:
        metrics.append("plain")
    (cfg.out / "cells").mkdir(parents=True, exist_ok=True)
    todo = []
    for metric in metrics:
        for rate, seed in grid(cfg):
            if not cell_path(cfg.out, metric, rate, seed).exists():
                todo.append((cfg, metric, rate, seed))
    log.info("%d cells to run", len(todo))
    workers = worker_count(len(todo))

    def persist(row):
        path = cell_path(cfg.out, row["metric"], row["rate"], row["seed"])
        path.write_text(json.dumps(row, indent=2, sort_keys=True))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_run_cell, todo):
                persist(row)
    else:
        for task in todo:
            persist(_run_cell(task))
    return write_report(cfg.out)


def read_cells(out: Path) -> list[dict]:
    rows = [json.loads(p.read_text()) for p in sorted((out / "cells").glob("*.json"))]
    return sorted(rows, key=lambda r: (r["metric"], r["rate"], r["seed"]))


def aggregate(rows) -> list[dict]:
    """Mean and sample standard deviation of test accuracy per (metric, rate)."""
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        if row.get("status") == "ok":
            groups.setdefault((row["metric"], row["rate"]), []).append(row["test_acc"])
    out = []
    for (metric, rate), accs in sorted(groups.items()):
        std = statistics.stdev(accs) if len(accs) > 1 else 0.0
        out.append({"metric": metric, "rate": rate, "n": len(accs), "mean": statistics.fmean(accs), "std": std})
    return out


def write_report(out: Path) -> dict:
    rows = read_cells(out)
    report = {"rows": rows, "aggregates": aggregate(rows)}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    fields = ["metric", "rate", "seed", "status", "test_acc", "val_acc", "train_loss", "val_loss", "stages", "epochs", "error"]
    with open(out / "report.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)
    return report


METRIC_ORDER = ["plain", "cen", "jac", "glo"]


def pivot(aggregates) -> tuple[list[str], list[float], dict]:
    metrics = sorted({a["metric"] for a in aggregates}, key=lambda m: (METRIC_ORDER.index(m) if m in METRIC_ORDER else 99, m))
    rates = sorted({a["rate"] for a in aggregates})
    cells = {(a["metric"], a["rate"]): f"{100 * a['mean']:.2f}±{100 * a['std']:.2f}" for a in aggregates}
    return metrics, rates, cells


def cmd_report(out: Path) -> str:
    """Pivot table of test accuracy (%), metric by rate; missing cells are ``*``."""
    out = Path(out)
    if not (out / "cells").is_dir() or not any((out / "cells").glob("*.json")):
        raise UsageError(f"no result cells under {out}")
    report = write_report(out)
    metrics, rates, cells = pivot(report["aggregates"])
    header = ["metric"] + [f"{r:.2f}" for r in rates]
    body = [[m] + [cells.get((m, r), "*") for r in rates] for m in metrics]
    with open(out / "report_table.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(body)
    widths = [max(len(str(row[i])) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(widths[i]) for i, c in enumerate(row)).rstrip() for row in [header] + body]
    text = "\n".join(lines) + "\n"
    (out / "report_table.txt").write_text(text)
    return text


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perseus", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment JSON config")
        p.add_argument("--out", help="output directory (overrides config 'out')")
        p.add_argument("--seed", type=int, help="run a single seed")
        p.add_argument("--metric", action="append", choices=sorted(SHORT_NAMES), help="repeatable")
        return p

    common(sub.add_parser("score", help="write per-edge difficulty tables"))
    common(sub.add_parser("attack", help="generate perturbed graphs and records"))
    common(sub.add_parser("observe", help="perturbed-edge ratio curves per metric"))
    p = common(sub.add_parser("run", help="train over the (metric, rate, seed) grid"))
    p.add_argument("--no-curriculum", action="store_true", help="train the plain model only")
    p = sub.add_parser("report", help="pivot table from a results directory")
    p.add_argument("--out", required=True, help="results directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "report":
            sys.stdout.write(cmd_report(Path(args.out)))
            return 0
        cfg = load_config(args.config, args)
        if args.command == "score":
            for path in cmd_score(cfg):
                print(path)
        elif args.command == "attack":
            for path in cmd_attack(cfg):
                print(path)
        elif args.command == "observe":
            print(json.dumps(cmd_observe(cfg), indent=2, sort_keys=True))
        elif args.command == "run":
            report = cmd_run(cfg)
            for agg in report["aggregates"]:
                print(f"{agg['metric']}\t{agg['rate']:.2f}\t{agg['mean']:.4f}±{agg['std']:.4f}\t(n={agg['n']})")
        return 0
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"perseus: error: {exc}", file=sys.stderr)
        return 2
    except (PerseusError, OSError, ValueError) as exc:
        print(f"perseus: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
