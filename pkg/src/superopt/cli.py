"""Command-line entry point: dataset, optimize, train, eval, bruteforce, rerun.

Scores are reported as percentages: episode loss x 100, i.e. the best cost
found divided by the starting cost.  100% means no improvement; lower is
better.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .cost import CostWeights, TestSuite
from .hd import DEFAULT_TEST_IDS, DEFAULT_TRAIN_IDS, TASKS, default_start, generate_starts, get_task, make_suite
from .isa import DEFAULT_TABLE, Program
from .proposal import ProposalParams
from .reinforce import Dataset, TaskData, TrainConfig, TrainState, evaluate, train
from .search import SearchConfig, format_trace_csv, format_trace_json, run_search

log = logging.getLogger("superopt")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass
class Config:
    weights: CostWeights = field(default_factory=CostWeights)
    budget_T: int = 200
    train: TrainConfig = field(default_factory=TrainConfig)
    train_ids: list[int] = field(default_factory=lambda: list(DEFAULT_TRAIN_IDS))
    test_ids: list[int] = field(default_factory=lambda: list(DEFAULT_TEST_IDS))
    starts_per_task: int = 5
    gen_budget: int = 200
    suite_random: int = 16
    dataset_dir: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "weights": self.weights.to_json(),
            "search": {"budget_T": self.budget_T},
            "train": self.train.to_json(),
            "split": {"train": self.train_ids, "test": self.test_ids},
            "dataset": {
                "starts_per_task": self.starts_per_task,
                "gen_budget": self.gen_budget,
                "suite_random": self.suite_random,
            },
            "paths": {"dataset": self.dataset_dir},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Config":
        cfg = cls()
        if "weights" in doc:
            cfg.weights = CostWeights.from_json(doc["weights"])
        cfg.budget_T = int(doc.get("search", {}).get("budget_T", cfg.budget_T))
        if "train" in doc:
            cfg.train = TrainConfig.from_json(doc["train"])
        split = doc.get("split", {})
        cfg.train_ids = [int(i) for i in split.get("train", cfg.train_ids)]
        cfg.test_ids = [int(i) for i in split.get("test", cfg.test_ids)]
        ds = doc.get("dataset", {})
        cfg.starts_per_task = int(ds.get("starts_per_task", cfg.starts_per_task))
        cfg.gen_budget = int(ds.get("gen_budget", cfg.gen_budget))
        cfg.suite_random = int(ds.get("suite_random", cfg.suite_random))
        cfg.dataset_dir = doc.get("paths", {}).get("dataset", cfg.dataset_dir)
        return cfg


def load_config(path: Optional[str]) -> Config:
    if path is None:
        return Config()
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}", EXIT_IO)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_IO)
    try:
        return Config.from_json(doc)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid config {path}: {exc}", EXIT_USAGE)


def _write(path: Path, text: str) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _write_manifest(
    out: Path, command: str, args: dict, cfg: Optional[Config], outputs: list[str], extra: Optional[dict] = None
) -> None:
    doc = {
        "format_version": 1,
        "code_version": __version__,
        "command": command,
        "args": args,
        "config": None if cfg is None else cfg.to_json(),
        "outputs": sorted(outputs),
        **(extra or {}),
    }
    _write(out / "manifest.json", _json(doc))


def _load_params(args) -> ProposalParams:
    if args.uniform or args.params is None:
        if not args.uniform:
            raise CliError("give --params PATH or --uniform", EXIT_USAGE)
        return ProposalParams.uniform()
    try:
        return ProposalParams.load(args.params, DEFAULT_TABLE)
    except FileNotFoundError:
        raise CliError(f"params file not found: {args.params}", EXIT_IO)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read params {args.params}: {exc}", EXIT_IO)


# -- dataset ---------------------------------------------------------------

def save_dataset(out: Path, tasks: dict[int, TaskData], cfg: Config, shortfalls: dict[int, bool]) -> tuple[list[str], dict]:
    """Write the task files; returns the file list and the manifest's dataset section."""
    written = []
    for tid, data in sorted(tasks.items()):
        base = Path("tasks") / str(tid)
        _write(out / base / "suite.json", _json(data.suite.to_json()))
        _write(out / base / "reference.json", _json(get_task(tid).reference_program.to_json()))
        written += [str(base / "suite.json"), str(base / "reference.json")]
        for i, prog in enumerate(data.starts):
            name = base / "starts" / f"{i:03d}.json"
            _write(out / name, _json(prog.to_json()))
            written.append(str(name))

    def split_of(tid):
        return "train" if tid in cfg.train_ids else "test" if tid in cfg.test_ids else "unused"

    section = {
        "tasks": [
            {"id": tid, "name": d.name, "starts": len(d.starts), "shortfall": shortfalls.get(tid, False),
             "split": split_of(tid)}
            for tid, d in sorted(tasks.items())
        ],
        "split": {"train": cfg.train_ids, "test": cfg.test_ids},
    }
    return written, section


def load_dataset(path: str | Path, cfg: Optional[Config] = None) -> Dataset:
    root = Path(path)
    try:
        meta = json.loads((root / "manifest.json").read_text())
        tasks = {}
        for entry in meta["tasks"]:
            tid = int(entry["id"])
            base = root / "tasks" / str(tid)
            suite = TestSuite.load(base / "suite.json")
            starts = [
                Program.from_json(json.loads(p.read_text()))
                for p in sorted((base / "starts").glob("*.json"))
            ]
            tasks[tid] = TaskData(tid, entry["name"], suite, starts)
    except FileNotFoundError as exc:
        raise CliError(f"dataset not found: {exc.filename}", EXIT_IO)
    except (OSError, KeyError, ValueError) as exc:
        raise CliError(f"cannot read dataset {root}: {exc}", EXIT_IO)
    split = meta["split"] if cfg is None else {"train": cfg.train_ids, "test": cfg.test_ids}
    missing = [i for i in split["train"] + split["test"] if i not in tasks]
    if missing:
        raise CliError(f"dataset lacks tasks {missing}", EXIT_DATA)
    return Dataset([tasks[i] for i in split["train"]], [tasks[i] for i in split["test"]])


def cmd_dataset(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    params = ProposalParams.uniform()
    gen = SearchConfig(cfg.gen_budget, cfg.weights, args.seed)
    tasks, short = {}, {}
    for task in TASKS:
        ss = generate_starts(task, params, cfg.starts_per_task, gen)
        suite = make_suite(task, cfg.suite_random, args.seed)
        tasks[task.id] = TaskData(task.id, task.name, suite, ss.starts)
        short[task.id] = ss.shortfall
        log.info("task %d: %d starts%s", task.id, len(ss.starts), " (shortfall)" if ss.shortfall else "")
    written, section = save_dataset(out, tasks, cfg, short)
    _write_manifest(
        out, "dataset", {"config": args.config, "seed": args.seed, "allow_shortfall": args.allow_shortfall},
        cfg, written, section,
    )
    lacking = sorted(t for t, s in short.items() if s)
    print(f"wrote {len(tasks)} tasks to {out}")
    if lacking and not args.allow_shortfall:
        print(f"shortfall on tasks {lacking}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


# -- optimize --------------------------------------------------------------

def cmd_optimize(args) -> int:
    if args.budget < 1:
        raise CliError("--budget must be >= 1", EXIT_USAGE)
    cfg = load_config(args.config)
    try:
        task = get_task(args.task)
    except KeyError:
        raise CliError(f"unknown task {args.task}", EXIT_USAGE)
    params = _load_params(args)
    if args.start:
        try:
            start = Program.from_json(json.loads(Path(args.start).read_text()))
        except FileNotFoundError:
            raise CliError(f"start program not found: {args.start}", EXIT_IO)
    else:
        start = default_start(task)
    suite = make_suite(task, cfg.suite_random, args.suite_seed)
    trace = run_search(suite, start, params, SearchConfig(args.budget, cfg.weights, args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "trace.csv", format_trace_csv(trace))
    _write(out / "trace.json", format_trace_json(trace))
    _write(out / "best.json", _json(trace.best_program.to_json()))
    summary = {
        "format_version": 1,
        "task": task.id,
        "best_cost": trace.best_cost.to_json(),
        "initial_cost": trace.initial_cost.to_json(),
        "episode_loss": trace.episode_loss,
        "degenerate": trace.degenerate,
        "best_program": str(trace.best_program),
    }
    _write(out / "summary.json", _json(summary))
    _write_manifest(
        out, "optimize",
        {"task": args.task, "start": args.start, "params": args.params, "uniform": args.uniform,
         "budget": args.budget, "seed": args.seed, "suite_seed": args.suite_seed, "config": args.config},
        cfg, ["trace.csv", "trace.json", "best.json", "summary.json"],
    )
    flag = " (degenerate start)" if trace.degenerate else ""
    print(f"task {task.id}: best cost {trace.best_cost.total:.4f} from {trace.initial_cost.total:.4f}, "
          f"score {100 * trace.episode_loss:.2f}%{flag}  best: {trace.best_program}")
    return EXIT_OK


# -- train -----------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train = TrainConfig.from_json({**cfg.train.to_json(), "seed": args.seed})
    dataset_dir = args.dataset or cfg.dataset_dir
    if dataset_dir is None:
        raise CliError("no dataset: pass --dataset or set paths.dataset in the config", EXIT_USAGE)
    dataset = load_dataset(dataset_dir, cfg)
    if not any(t.starts for t in dataset.train_tasks):
        raise CliError("dataset has no training starts", EXIT_DATA)
    out = Path(args.out)
    scfg = SearchConfig(cfg.budget_T, cfg.weights, 0)

    resume, history = None, []
    if args.resume:
        try:
            doc = json.loads(Path(args.resume).read_text())
        except FileNotFoundError:
            raise CliError(f"checkpoint not found: {args.resume}", EXIT_IO)
        resume = TrainState.from_json(doc["state"], DEFAULT_TABLE)
        history = [tuple(h) for h in doc["history"]]

    outputs = ["report.csv", "episodes.csv", "params.json"]

    def on_epoch(state: TrainState, report) -> None:
        full = history + report.history
        if args.no_checkpoints:
            return
        name = f"checkpoints/epoch_{state.epoch:03d}.json"
        doc = {"format_version": 1, "state": state.to_json(), "history": [list(h) for h in full]}
        _write(out / name, _json(doc))
        if name not in outputs:
            outputs.append(name)

    report = train(dataset, ProposalParams.uniform(), cfg.train, scfg, jobs=args.jobs,
                   resume=resume, on_epoch=on_epoch, stop_after=args.stop_after)
    full = history + report.history
    report.history = full
    _write(out / "report.csv", report.history_csv())
    _write(out / "episodes.csv", report.episodes_csv())
    _write(out / "params.json", _json(report.params.to_json()))
    _write_manifest(
        out, "train",
        {"config": args.config, "dataset": dataset_dir, "seed": args.seed, "resume": args.resume,
         "stop_after": args.stop_after, "no_checkpoints": args.no_checkpoints, "jobs": 1},
        cfg, outputs,
    )
    for epoch, split, loss in full[-2:]:
        print(f"epoch {epoch} {split}: {100 * loss:.2f}%")
    return EXIT_OK


# -- eval ------------------------------------------------------------------

def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    params = _load_params(args)
    dataset_dir = args.dataset or cfg.dataset_dir
    if dataset_dir is None:
        raise CliError("no dataset: pass --dataset or set paths.dataset in the config", EXIT_USAGE)
    dataset = load_dataset(dataset_dir, cfg)
    splits = ["train", "test"] if args.split == "both" else [args.split]
    seeds = [args.seed + i for i in range(args.seeds)]
    scfg = SearchConfig(args.budget or cfg.budget_T, cfg.weights, 0)
    rows, episodes = [], []
    for split in splits:
        tasks = dataset.train_tasks if split == "train" else dataset.test_tasks
        res = evaluate(tasks, params, scfg, seeds, jobs=args.jobs)
        episodes += [(split, *e) for e in res.losses]
        for tid in sorted(res.per_task):
            rows.append((split, str(tid), res.per_task[tid]))
        rows.append((split, "mean", res.mean))
        if res.degenerate:
            print(f"{split}: {res.degenerate} degenerate episodes reported as 0%", file=sys.stderr)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["split", "task", "mean_loss", "score_pct"])
    for split, tid, loss in rows:
        w.writerow([split, tid, repr(loss), f"{100 * loss:.2f}"])
    text = buf.getvalue()
    if args.out:
        out = Path(args.out)
        _write(out / "eval.csv", text)
        ep = io.StringIO()
        w = csv.writer(ep, lineterminator="\n")
        w.writerow(["split", "task", "start", "seed", "loss"])
        for split, tid, si, seed, loss in episodes:
            w.writerow([split, tid, si, seed, repr(loss)])
        _write(out / "episodes.csv", ep.getvalue())
        _write_manifest(
            out, "eval",
            {"config": args.config, "params": args.params, "uniform": args.uniform, "dataset": dataset_dir,
             "split": args.split, "seeds": args.seeds, "seed": args.seed, "budget": args.budget, "jobs": 1},
            cfg, ["eval.csv", "episodes.csv"],
        )
    for split, tid, loss in rows:
        label = f"{split} mean" if tid == "mean" else f"{split} task {tid:>2}"
        print(f"{label:<16} {100 * loss:7.2f}%")
    return EXIT_OK


# -- bruteforce ------------------------------------------------------------

def cmd_bruteforce(args) -> int:
    from .bruteforce import brute_force_optimum

    cfg = load_config(args.config)
    try:
        task = get_task(args.task)
    except KeyError:
        raise CliError(f"unknown task {args.task}", EXIT_USAGE)
    cost, prog = brute_force_optimum(make_suite(task, cfg.suite_random, args.suite_seed), cfg.weights)
    print(f"task {task.id}: optimum over <=2 instructions: cost {cost.total!r} ({prog})")
    return EXIT_OK


# -- rerun -----------------------------------------------------------------

def cmd_rerun(args) -> int:
    try:
        doc = json.loads(Path(args.manifest).read_text())
    except FileNotFoundError:
        raise CliError(f"manifest not found: {args.manifest}", EXIT_IO)
    command = doc["command"]
    if command not in COMMANDS or command == "rerun":
        raise CliError(f"manifest has unknown command {command!r}", EXIT_USAGE)
    ns = argparse.Namespace(**{**doc["args"], "out": args.out, "jobs": args.jobs})
    cfg_snapshot = doc.get("config")
    if cfg_snapshot is not None:
        # rerun from the recorded snapshot, not whatever the config file holds now
        snap = Path(args.out) / ".rerun-config.json"
        _write(snap, json.dumps(cfg_snapshot))
        ns.config = str(snap)
        try:
            return run_command(command, ns, keep_config=doc["args"].get("config"))
        finally:
            snap.unlink(missing_ok=True)
    return run_command(command, ns)


def run_command(command: str, ns, keep_config=None) -> int:
    code = COMMANDS[command](ns)
    if keep_config is not None or ns.__dict__.get("config"):
        # manifests must name the original config path, not the rerun snapshot
        man = Path(ns.out) / "manifest.json"
        if man.exists():
            doc = json.loads(man.read_text())
            doc["args"]["config"] = keep_config
            _write(man, _json(doc))
    return code


COMMANDS = {
    "dataset": cmd_dataset,
    "optimize": cmd_optimize,
    "train": cmd_train,
    "eval": cmd_eval,
    "bruteforce": cmd_bruteforce,
    "rerun": cmd_rerun,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _env_seed() -> int:
    raw = os.environ.get("SUPEROPT_SEED")
    try:
        return int(raw) if raw else 0
    except ValueError:
        return 0


def build_parser() -> argparse.ArgumentParser:
    seed = _env_seed()
    p = _Parser(
        prog="superopt",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("dataset", help="generate starting points for every task")
    d.add_argument("--config")
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=seed)
    d.add_argument("--allow-shortfall", action="store_true")

    o = sub.add_parser("optimize", help="superoptimize one program")
    o.add_argument("--task", type=int, required=True)
    o.add_argument("--start", help="program JSON (default: the shipped unoptimized start for task 1, else the reference)")
    g = o.add_mutually_exclusive_group()
    g.add_argument("--params")
    g.add_argument("--uniform", action="store_true")
    o.add_argument("--budget", type=int, default=400)
    o.add_argument("--seed", type=int, default=seed)
    o.add_argument("--suite-seed", type=int, default=0)
    o.add_argument("--config")
    o.add_argument("--out", required=True)

    t = sub.add_parser("train", help="learn proposal logits with REINFORCE")
    t.add_argument("--config")
    t.add_argument("--dataset")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None, help="overrides train.seed (default: config, else SUPEROPT_SEED)")
    t.add_argument("--resume", help="checkpoint JSON to continue from")
    t.add_argument("--stop-after", type=int, help="stop after this many epochs")
    t.add_argument("--no-checkpoints", action="store_true")
    t.add_argument("--jobs", type=int, default=1)

    e = sub.add_parser("eval", help="score params on a split (percent of starting cost, lower is better)")
    g = e.add_mutually_exclusive_group()
    g.add_argument("--params")
    g.add_argument("--uniform", action="store_true")
    e.add_argument("--dataset")
    e.add_argument("--split", choices=["train", "test", "both"], default="test")
    e.add_argument("--seeds", type=int, default=20)
    e.add_argument("--seed", type=int, default=seed, help="first evaluation seed")
    e.add_argument("--budget", type=int)
    e.add_argument("--config")
    e.add_argument("--out")
    e.add_argument("--jobs", type=int, default=1)

    b = sub.add_parser("bruteforce", help="cheapest program of at most two instructions")
    b.add_argument("--task", type=int, required=True)
    b.add_argument("--suite-seed", type=int, default=0)
    b.add_argument("--config")

    r = sub.add_parser("rerun", help="replay a command from its manifest.json")
    r.add_argument("manifest")
    r.add_argument("--out", required=True)
    r.add_argument("--jobs", type=int, default=1)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "train" and args.seed is None and os.environ.get("SUPEROPT_SEED"):
        args.seed = _env_seed()
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"superopt: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
