"""Command-line entry point: ``spectemp {run,bench,niah,validate,grpo,synth}``.

Exit codes: 0 success, 1 validation failures, 2 configuration or input
errors, 3 a session aborted because a model backend failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

from .adapters import HashEmbeddingProvider, NoisyOracle, OracleDraft, OracleTarget, RemoteModel
from .config import ADAPTERS, AppConfig, apply_overrides, load_config
from .datakit import (
    NiahSpec,
    Task,
    aggregate_metrics,
    failure_histogram,
    jitter_segments,
    read_records,
    session_to_record,
    synth_niah,
    synth_population,
    trajectory_from_gold,
    validate_trajectory,
    write_csv,
    write_niah_matrix,
    write_records,
)
from .errors import ConfigError, GroupError, MalformedRecord, SessionAborted
from .grpo import evaluate, joint_ratio, kl_estimate, read_rollouts, write_rollouts
from .orchestrator import SessionConfig, SessionResult, mean_iterations, run_session
from .rewards import answer_reward, score_session
from .seeding import derive_seed

logger = logging.getLogger("spectemp")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3

_STRATEGY_RE = re.compile(r"^\s*(\d+)\s*\+\s*(\d+)\s*[x×]\s*(\d+)\s*$")


def parse_strategy(text: str) -> tuple[int, int, int]:
    """``"10+2x3"`` -> ``(10, 2, 3)``."""
    m = _STRATEGY_RE.match(text)
    if not m:
        raise ConfigError(f"strategy must look like INIT+PERxTMAX, got {text!r}")
    return int(m.group(1)), int(m.group(2)), int(m.group(3))


def _float_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as e:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from e
    if not vals:
        raise ConfigError("empty list")
    return vals


def _int_list(text: str) -> tuple[int, ...]:
    vals = _float_list(text)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"expected integers, got {text!r}")
    return tuple(int(v) for v in vals)


# -- shared plumbing -----------------------------------------------------------

def session_config(cfg: AppConfig, **changes) -> SessionConfig:
    s = dataclasses.replace(cfg.session, **changes)
    try:
        return SessionConfig(s.init_frames, s.per_iter_frames, s.t_max, s.dense_fps,
                             cfg.cost, cfg.seed)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def build_models(cfg: AppConfig, task: Task):
    if cfg.adapter == "oracle":
        return OracleTarget(task.gold), OracleDraft(task.gold)
    if cfg.adapter == "noisy":
        seed = derive_seed(cfg.seed, "noise")
        return (NoisyOracle(OracleTarget(task.gold), cfg.noise, seed),
                NoisyOracle(OracleDraft(task.gold), cfg.noise, seed))
    tgt, drf = cfg.remote_configs()
    return RemoteModel(tgt), RemoteModel(drf)


def run_task(cfg: AppConfig, scfg: SessionConfig, task: Task) -> SessionResult:
    target, draft = build_models(cfg, task)
    return run_session(scfg, target, draft, task.timeline, task.question, task.options)


def fan_out(fn: Callable, items: Sequence, workers: int) -> list:
    """Map in order; results line up with ``items`` whatever finishes first."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def population(cfg: AppConfig, n: Optional[int] = None) -> list[Task]:
    p = cfg.population
    n = p.n if n is None else n
    if n < 1:
        raise ConfigError("population is empty")
    try:
        return synth_population(n, p.mix, derive_seed(cfg.seed, "population"),
                                reveal_weights=p.reveal_weights, dim=p.dim)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _out_dir(cfg: AppConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def format_transcript(result: SessionResult) -> str:
    lines = [f"question: {result.question}", f"config: {result.config_label}"]
    for r in result.rounds:
        if r.kind == "round":
            lines.append(f"  [round {r.index}] draft saw {r.dense_count} dense frames -> {r.draft_text}")
            lines.append(f"  [round {r.index}] proposed {list(r.proposed)}")
        tag = {"init": "init", "round": f"round {r.index}", "final": "final"}[r.kind]
        note = " (recovered: whole timeline)" if r.recovered else ""
        lines.append(f"  [{tag}] target: {r.target_text}{note}")
    lines.append(f"answer: {result.answer!r}  terminated_by={result.terminated_by}  "
                 f"rounds={result.rounds_used}  target_frames={result.total_target_frames}  "
                 f"latency={result.latency.total:.4f}s")
    return "\n".join(lines)


# -- subcommands ---------------------------------------------------------------

def cmd_run(cfg: AppConfig, args) -> int:
    weights = cfg.population.reveal_weights
    if args.reveal_round is not None:
        if args.reveal_round < 0:
            raise ConfigError("--reveal-round must be >= 0")
        weights = tuple(1.0 if i == args.reveal_round else 0.0
                        for i in range(max(len(weights), args.reveal_round + 1)))
    pcfg = dataclasses.replace(cfg, population=dataclasses.replace(cfg.population,
                                                                   reveal_weights=weights))
    tasks = population(pcfg, args.task_index + 1)
    task = tasks[args.task_index]
    scfg = session_config(cfg)
    result = run_task(cfg, scfg, task)
    transcript = format_transcript(result)
    print(transcript)
    provider = HashEmbeddingProvider(task.dim, task.embed_seed)
    tr, dr = score_session(result, task.gold, provider, task.timeline, scfg.per_iter_frames)
    print(f"target reward: {json.dumps(tr.to_dict(), sort_keys=True)}")
    print(f"draft reward:  {json.dumps(dr.to_dict(), sort_keys=True)}")
    out = _out_dir(cfg)
    (out / "transcript.txt").write_text(transcript + "\n", encoding="utf-8")
    write_records(out / "trajectory.jsonl", [session_to_record(task, result, cfg.adapter)])
    return EXIT_OK


def cmd_bench(cfg: AppConfig, args) -> int:
    strategies = tuple(args.strategies) if args.strategies else cfg.bench.strategies
    parsed = [parse_strategy(s) for s in strategies]
    tasks = population(cfg, args.n)
    golds = [t.gold for t in tasks]
    out = _out_dir(cfg)
    rows = []
    first_results = None
    for label, (k, m, tmax) in zip(strategies, parsed):
        scfg = session_config(cfg, init_frames=k, per_iter_frames=m, t_max=tmax)
        results = fan_out(lambda t: run_task(cfg, scfg, t), tasks, cfg.workers)
        first_results = first_results or results
        rep = aggregate_metrics(results, golds)
        rows.append({"strategy": scfg.label, "budget": scfg.budget, "n": rep.n,
                     "accuracy": rep.accuracy, "latency_s": rep.latency_s,
                     "frames": rep.frames,
                     "max_frames": max(r.total_target_frames for r in results),
                     "iterations": rep.iterations, "efficiency": rep.efficiency})
        print(f"{scfg.label:>10}  acc={rep.accuracy:6.2f}%  lat={rep.latency_s:.3f}s  "
              f"frames={rep.frames:.2f}  iters={rep.iterations:.2f}  eff={rep.efficiency}")
    write_csv(out / "bench.csv", rows)

    sweep = tuple(args.t_max_sweep) if args.t_max_sweep else cfg.bench.t_max_sweep
    if sweep:
        k, m, _ = parsed[0]
        srows = []
        for tmax in sweep:
            scfg = session_config(cfg, init_frames=k, per_iter_frames=m, t_max=tmax)
            results = fan_out(lambda t: run_task(cfg, scfg, t), tasks, cfg.workers)
            rep = aggregate_metrics(results, golds)
            srows.append({"t_max": tmax, "strategy": scfg.label, "accuracy": rep.accuracy,
                          "latency_s": rep.latency_s, "frames": rep.frames,
                          "iterations": mean_iterations(results), "efficiency": rep.efficiency})
            print(f"t_max={tmax}  iters={srows[-1]['iterations']:.3f}")
        write_csv(out / "sweep.csv", srows)

    if args.trajectories:
        write_records(out / "trajectories.jsonl",
                      [session_to_record(t, r, cfg.adapter) for t, r in zip(tasks, first_results)])
    return EXIT_OK


def cmd_niah(cfg: AppConfig, args) -> int:
    nc = cfg.niah
    depths = _float_list(args.depths) if args.depths else nc.depths
    lengths = _int_list(args.lengths) if args.lengths else nc.lengths
    if any(not 0.0 <= d <= 1.0 for d in depths) or any(n < 2 for n in lengths):
        raise ConfigError("depths must lie in [0, 1] and lengths must be >= 2")
    if args.baseline:
        scfg = session_config(cfg, init_frames=nc.baseline_frames, t_max=0)
    else:
        scfg = session_config(cfg)
    cells = [(d, n) for d in depths for n in lengths]
    try:
        tasks = [synth_niah(NiahSpec(n, d, nc.width), nc.dim, derive_seed(cfg.seed, "niah"))
                 for d, n in cells]
    except ValueError as e:
        raise ConfigError(str(e)) from e
    results = fan_out(lambda t: run_task(cfg, scfg, t), tasks, cfg.workers)
    acc = {cell: answer_reward(r.answer, t.gold.answer) for cell, t, r in zip(cells, tasks, results)}
    out = _out_dir(cfg)
    name = "niah_baseline.csv" if args.baseline else "niah.csv"
    write_niah_matrix(out / name, depths, lengths, acc)
    for n in lengths:
        col = [acc[(d, n)] for d in depths]
        print(f"length {n:>5}: accuracy {sum(col) / len(col):.3f}")
    return EXIT_OK


def cmd_validate(cfg: AppConfig, args) -> int:
    threshold = args.threshold if args.threshold is not None else cfg.validate_threshold
    try:
        records = read_records(args.path)
    except OSError as e:
        print(f"error: cannot read {args.path}: {e.strerror or e}", file=sys.stderr)
        return EXIT_CONFIG
    reports = [validate_trajectory(r, threshold, args.frame_limit) for r in records]
    passed = sum(r.passed for r in reports)
    print(f"records: {len(reports)}  passed: {passed}  failed: {len(reports) - passed}")
    for code, count in sorted(failure_histogram(reports).items()):
        print(f"  {code}: {count}")
    for r in reports:
        if not r.passed:
            logger.info("%s: %s", r.record_id, ", ".join(f"{f.code}@{f.round}" for f in r.failures))
    if passed == len(reports) or args.lenient:
        return EXIT_OK
    return EXIT_FAIL


def cmd_grpo(cfg: AppConfig, args) -> int:
    gcfg = cfg.grpo
    changes = {k: v for k, v in (("beta", args.beta), ("clip_eps", args.clip_eps)) if v is not None}
    if changes:
        try:
            gcfg = dataclasses.replace(gcfg, **changes)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    try:
        rollouts = read_rollouts(args.path)
    except OSError as e:
        raise ConfigError(f"cannot read {args.path}: {e.strerror or e}") from e
    except ValueError as e:
        raise ConfigError(str(e)) from e
    report = evaluate(rollouts, gcfg)
    for gid, adv in report.advantages.items():
        print(f"group {gid}: advantages " + ", ".join(f"{a:+.6f}" for a in adv))
    print(f"surrogate: {report.surrogate:.9g}")
    print(f"kl: {report.kl:.9g}")
    print(f"objective: {report.objective:.9g}  (beta={gcfg.beta:g}, clip_eps={gcfg.clip_eps:g})")
    pos = {gid: 0 for gid in report.advantages}
    extra = []
    for r in rollouts:
        a = report.advantages[r.group_id][pos[r.group_id]]
        pos[r.group_id] += 1
        extra.append({"advantage": a, "ratio": joint_ratio(r, gcfg.max_ratio),
                      "kl": kl_estimate(r.logp_ref - r.logp_new)})
    out = _out_dir(cfg)
    write_rollouts(out / "rollouts_scored.jsonl", rollouts, extra)
    return EXIT_OK


def cmd_synth(cfg: AppConfig, args) -> int:
    tasks = population(cfg, args.n)
    recs = [trajectory_from_gold(t, cfg.session.per_iter_frames) for t in tasks]
    if args.jitter:
        recs = [jitter_segments(r, args.jitter) for r in recs]
    out = _out_dir(cfg)
    n = write_records(out / "synthetic.jsonl", recs)
    print(f"wrote {n} records to {out / 'synthetic.jsonl'}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "bench": cmd_bench, "niah": cmd_niah,
            "validate": cmd_validate, "grpo": cmd_grpo, "synth": cmd_synth}


# -- argument parsing ------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common options")
    g.add_argument("--config", metavar="FILE", help="TOML config file; flags override its values")
    g.add_argument("--seed", type=int, help="root seed for every random component (default 0)")
    g.add_argument("--out", metavar="DIR", help="output directory (default ./spectemp-out)")
    g.add_argument("--adapter", choices=ADAPTERS, help="model backend (default oracle)")
    g.add_argument("--workers", type=int, help="parallel sessions (default 1)")
    g.add_argument("--remote-url", metavar="URL", help="chat-completion base URL for both models")
    g.add_argument("--remote-model", metavar="NAME", help="model name sent to the remote backend")
    g.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")


def _session_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("session overrides")
    g.add_argument("--init-frames", type=int, help="uniform frames for the first target call")
    g.add_argument("--per-iter-frames", type=int, help="frames the draft passes on per round")
    g.add_argument("--t-max", type=int, help="maximum speculation rounds")
    g.add_argument("--dense-fps", type=float, help="dense sampling rate inside a segment")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectemp",
        description="Speculative temporal reasoning: run sessions, benchmarks and data checks.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("run", help="run one session and print its transcript")
    _common(p)
    _session_flags(p)
    p.add_argument("--task-index", type=int, default=0, help="which synthetic task to run (default 0)")
    p.add_argument("--reveal-round", type=int, help="force the task's reveal round")

    p = sub.add_parser("bench", help="compare frame strategies on a synthetic population")
    _common(p)
    _session_flags(p)
    p.add_argument("--n", type=int, help="population size (default 200)")
    p.add_argument("--strategies", nargs="+", metavar="K+MxT",
                   help="strategies such as 10+2x3 (default 10+2x3 4+4x3 13+1x3)")
    p.add_argument("--t-max-sweep", type=int, nargs="+", metavar="T",
                   help="also sweep t_max with the first strategy and write sweep.csv")
    p.add_argument("--trajectories", action="store_true",
                   help="write trajectories.jsonl for the first strategy")

    p = sub.add_parser("niah", help="needle-in-a-haystack accuracy grid")
    _common(p)
    _session_flags(p)
    p.add_argument("--depths", metavar="LIST", help="comma-separated depth fractions in [0, 1]")
    p.add_argument("--lengths", metavar="LIST", help="comma-separated haystack lengths in frames")
    p.add_argument("--baseline", action="store_true",
                   help="uniform-only baseline: 16 frames, no speculation rounds")

    p = sub.add_parser("validate", help="check a trajectory file")
    _common(p)
    p.add_argument("path", help="JSON-lines trajectory file")
    p.add_argument("--threshold", type=float, help="segment IoU threshold (default 0.5)")
    p.add_argument("--frame-limit", type=int, help="maximum frames per draft turn")
    p.add_argument("--lenient", action="store_true", help="exit 0 even when records fail")

    p = sub.add_parser("grpo", help="score a rollout file with the group-relative objective")
    _common(p)
    p.add_argument("path", help="JSON-lines rollout file")
    p.add_argument("--beta", type=float, help="KL coefficient (default 0.04)")
    p.add_argument("--clip-eps", type=float, help="ratio clip range (default 0.2)")

    p = sub.add_parser("synth", help="write self-consistent synthetic trajectories")
    _common(p)
    p.add_argument("--n", type=int, help="number of records (default 200)")
    p.add_argument("--jitter", type=float, default=0.0,
                   help="shift every segment by this fraction of its length")
    return parser


def resolve_config(args) -> AppConfig:
    cfg = load_config(args.config) if args.config else AppConfig()
    cfg = apply_overrides(
        cfg, seed=args.seed, out=args.out, adapter=args.adapter, workers=args.workers,
        init_frames=getattr(args, "init_frames", None),
        per_iter_frames=getattr(args, "per_iter_frames", None),
        t_max=getattr(args, "t_max", None), dense_fps=getattr(args, "dense_fps", None))
    if args.remote_url or args.remote_model:
        flags = {k: v for k, v in (("base_url", args.remote_url), ("model", args.remote_model)) if v}
        cfg = dataclasses.replace(
            cfg, remote_target={**(cfg.remote_target or {}), **flags},
            remote_draft={**cfg.remote_draft, **flags} if cfg.remote_draft else None)
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except SessionAborted as e:
        print(f"error: session aborted after {len(e.rounds)} round(s): {e}", file=sys.stderr)
        return EXIT_ABORT
    except (ConfigError, GroupError, MalformedRecord) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
