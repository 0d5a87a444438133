"""Command-line entry points: ``run``, ``sweep`` and ``report``.

Configs are YAML trees. Unknown keys are rejected before any compute.
Command-line flags override file values, which override defaults.

Exit codes: 0 success, 1 runtime failure, 2 configuration error,
3 data error (missing or malformed input/result files).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .augment import AugmentationSpec
from .buffer import WeightingPolicy
from .metrics import aggregate, average_accuracy, elbow_point, forgetting, run_sweep
from .mlp import Hyperparams
from .streams import DataError, DatasetSpec, StreamSpec
from .strategies import StrategyConfig, run_stream


class ConfigError(ValueError):
    pass


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _build(cls, tree, path, list_keys=()):
    """Instantiate dataclass ``cls`` from a mapping, naming any unknown key."""
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(tree).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(tree) - names)
    if unknown:
        raise ConfigError(f"unknown key {path + '.' if path else ''}{unknown[0]!s}")
    kwargs = {k: (tuple(v) if k in list_keys and isinstance(v, list) else v) for k, v in tree.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    n_experiences: int = 5
    shuffle_classes: bool = True
    strategies: tuple = (StrategyConfig(),)
    memory: tuple = (200,)
    policies: tuple = (WeightingPolicy(),)
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    hyper: Hyperparams = field(default_factory=Hyperparams)
    seeds: tuple = (0,)
    out: str = "results"
    jobs: int = 1

    @property
    def stream_spec(self) -> StreamSpec:
        return StreamSpec(self.dataset, self.n_experiences, self.shuffle_classes)

    def series(self):
        """``(label, strategy, policy)`` triples; the policy only matters for replay."""
        out = []
        for strat in self.strategies:
            for pol in (self.policies if strat.kind == "replay" else self.policies[:1]):
                label = f"replay/{pol.kind}" if strat.kind == "replay" else strat.kind
                if all(label != o[0] for o in out):
                    out.append((label, strat, pol))
        return out

    def to_dict(self) -> dict:
        """Plain tree that :func:`parse_config` maps back to this config."""
        strat_kinds = [s.kind for s in self.strategies]
        strat = dataclasses.asdict(self.strategies[0])
        strat["kind"] = strat_kinds[0] if len(strat_kinds) == 1 else strat_kinds
        strat["hidden"] = list(strat["hidden"])
        pol_kinds = [p.kind for p in self.policies]
        aug = dataclasses.asdict(self.augmentation)
        aug["transforms"] = list(aug["transforms"])
        aug["crop_scale"] = list(aug["crop_scale"])
        return {
            "dataset": dataclasses.asdict(self.dataset),
            "n_experiences": self.n_experiences,
            "shuffle_classes": self.shuffle_classes,
            "strategy": strat,
            "memory": list(self.memory) if len(self.memory) > 1 else self.memory[0],
            "policy": {"kind": pol_kinds[0] if len(pol_kinds) == 1 else pol_kinds,
                       "factor": self.policies[0].factor},
            "augmentation": aug,
            "hyper": dataclasses.asdict(self.hyper),
            "seeds": list(self.seeds),
            "out": self.out,
            "jobs": self.jobs,
        }


TOP_KEYS = {"dataset", "n_experiences", "shuffle_classes", "strategy", "memory", "policy",
            "augmentation", "hyper", "seeds", "out", "jobs"}


def parse_config(tree: dict | None) -> ExperimentConfig:
    tree = dict(tree or {})
    unknown = sorted(set(tree) - TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]}")
    kwargs = {}
    if "dataset" in tree:
        kwargs["dataset"] = _build(DatasetSpec, tree["dataset"], "dataset")
    for key in ("n_experiences", "jobs"):
        if key in tree:
            if not isinstance(tree[key], int) or tree[key] < 1:
                raise ConfigError(f"{key} must be a positive integer")
            kwargs[key] = tree[key]
    if "shuffle_classes" in tree:
        kwargs["shuffle_classes"] = bool(tree["shuffle_classes"])
    if "strategy" in tree:
        strat = dict(tree["strategy"] or {})
        kinds = _as_list(strat.pop("kind", "replay"))
        kwargs["strategies"] = tuple(_build(StrategyConfig, {**strat, "kind": k}, "strategy", ("hidden",))
                                     for k in kinds)
    if "policy" in tree:
        pol = dict(tree["policy"] or {})
        kinds = _as_list(pol.pop("kind", "balanced"))
        kwargs["policies"] = tuple(_build(WeightingPolicy, {**pol, "kind": k}, "policy") for k in kinds)
    if "memory" in tree:
        sizes = _as_list(tree["memory"])
        if not sizes or not all(isinstance(m, int) and m >= 0 for m in sizes):
            raise ConfigError("memory must be a non-negative integer or a list of them")
        kwargs["memory"] = tuple(sizes)
    if "augmentation" in tree:
        kwargs["augmentation"] = _build(AugmentationSpec, tree["augmentation"], "augmentation",
                                        ("transforms", "crop_scale"))
    if "hyper" in tree:
        kwargs["hyper"] = _build(Hyperparams, tree["hyper"], "hyper")
    if "seeds" in tree:
        seeds = _as_list(tree["seeds"])
        if not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
            raise ConfigError("seeds must be non-negative integers")
        kwargs["seeds"] = tuple(seeds)
    if "out" in tree:
        kwargs["out"] = str(tree["out"])
    return ExperimentConfig(**kwargs)


def load_config(path, seeds=None, jobs=None, out=None) -> ExperimentConfig:
    """Read a YAML config and apply command-line overrides."""
    if path is None:
        tree = {}
    else:
        try:
            tree = yaml.safe_load(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if tree is not None and not isinstance(tree, dict):
            raise ConfigError(f"config {path} must hold a mapping at top level")
    cfg = parse_config(tree)
    overrides = {}
    if seeds:
        overrides["seeds"] = tuple(seeds)
    if jobs is not None:
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        overrides["jobs"] = jobs
    if out is not None:
        overrides["out"] = str(out)
    return dataclasses.replace(cfg, **overrides)


# ---------------------------------------------------------------- commands

def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def matrix_csv(matrix) -> str:
    return "".join(",".join(_fmt(v) for v in row) + "\n" for row in np.asarray(matrix))


def cmd_run(cfg: ExperimentConfig) -> int:
    if len(cfg.seeds) != 1:
        raise ConfigError(f"run takes exactly one seed, got {list(cfg.seeds)}")
    if len(cfg.memory) != 1:
        raise ConfigError("run takes a single memory size; use sweep for a list")
    series = cfg.series()
    if len(series) != 1:
        raise ConfigError("run takes a single strategy and policy; use sweep for several")
    label, strat, pol = series[0]
    seed = cfg.seeds[0]
    stream = cfg.stream_spec.build(seed)
    matrix, _ = run_stream(strat, stream, cfg.hyper, cfg.memory[0], pol, cfg.augmentation, seed)
    out = Path(cfg.out)
    _write(out / "matrix.csv", matrix_csv(matrix))
    summary = {
        "strategy": label,
        "memory_size": cfg.memory[0],
        "seed": seed,
        "average_accuracy": average_accuracy(matrix),
        "forgetting": [float(f) for f in forgetting(matrix)] if len(matrix) > 1 else [],
        "config": cfg.to_dict(),
    }
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_sweep(cfg: ExperimentConfig) -> int:
    results = [run_sweep(strat, cfg.stream_spec, cfg.memory, pol, cfg.augmentation, cfg.seeds, cfg.hyper,
                         label=label, jobs=cfg.jobs)
               for label, strat, pol in cfg.series()]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["strategy", "memory_size", "seed", "avg_accuracy"])
    for label, m, s, acc in sorted(r for res in results for r in res.rows()):
        writer.writerow([label, m, s, _fmt(acc)])
    curve = {}
    for res in results:
        for label in res.labels():
            cells = [c for c in res.cells if c.label == label]
            points = [{"memory_size": c.memory_size, "mean": c.mean, "std": c.std, "n_seeds": len(c.seeds)}
                      for c in cells]
            elbow = None
            positive = [(c.memory_size, c.mean) for c in cells if c.memory_size > 0]
            if len(positive) >= 3:
                found = elbow_point(positive)
                if found is not None:
                    elbow = dataclasses.asdict(found)
            curve[label] = {"points": points, "elbow": elbow}
    out = Path(cfg.out)
    _write(out / "sweep.csv", buf.getvalue())
    payload = {"series": dict(sorted(curve.items())), "config": cfg.to_dict()}
    _write(out / "curve.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


def read_sweep_csv(path) -> dict:
    """``{(label, memory_size): {seed: accuracy}}`` from a sweep.csv file."""
    cells = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (row["strategy"], int(row["memory_size"]))
            cells.setdefault(key, {})[int(row["seed"])] = float(row["avg_accuracy"])
    return cells


def format_table(cells: dict) -> str:
    """Rows = memory sizes, columns = series, cells = ``mean±std`` in percent."""
    labels = sorted({k[0] for k in cells})
    sizes = sorted({k[1] for k in cells})
    header = ["memory"] + labels
    rows = []
    for m in sizes:
        row = [str(m)]
        for label in labels:
            if (label, m) in cells:
                mean, std = aggregate(cells[(label, m)])
                row.append(f"{100 * mean:.2f}±{100 * std:.2f}")
            else:
                row.append("-")
        rows.append(row)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [header] + rows]
    return "\n".join(lines) + "\n"


def cmd_report(results_dir) -> int:
    results_dir = Path(results_dir)
    sweep = results_dir / "sweep.csv"
    if sweep.is_file():
        cells = read_sweep_csv(sweep)
    else:
        summaries = sorted(results_dir.glob("**/summary.json")) if results_dir.is_dir() else []
        if not summaries:
            raise DataError(f"no sweep.csv or summary.json under {results_dir}")
        cells = {}
        for p in summaries:
            s = json.loads(p.read_text())
            cells.setdefault((s["strategy"], int(s["memory_size"])), {})[int(s["seed"])] = s["average_accuracy"]
    if not cells:
        raise DataError(f"{results_dir} holds no results")
    sys.stdout.write(format_table(cells))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="replaykit", description="Replay-based continual learning experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "train one configuration and write matrix.csv + summary.json"),
                            ("sweep", "sweep memory sizes and write sweep.csv + curve.json")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, action="append", help="run seed (repeatable); overrides the config")
        p.add_argument("--jobs", type=int, help="worker processes for sweep cells")
        p.add_argument("--out", help="output directory")
    p = sub.add_parser("report", help="print a mean±std table from a results directory")
    p.add_argument("results_dir")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.results_dir)
        cfg = load_config(args.config, args.seed, args.jobs, args.out)
        return cmd_run(cfg) if args.command == "run" else cmd_sweep(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime-failure exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
