"""Operator-facing command line: `simulate <subcommand> --spec FILE`.

Spec files are YAML with a `config` section (experiment fields), an
optional `seeds` list (or `seed_count`), an optional `sweep` section
mapping config fields to value lists, and presentation options. Any field
is overridable from the command line with dotted `--set` paths. Every
output directory is keyed by config hash and seed so that stored runs can
be replayed and checked byte-for-byte.

Exit codes: 0 success, 2 configuration error, 3 verification/gate
failure, 4 round budget exhausted.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import struct
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from .adversary import make_strategy
from .aerid import decode_correctness, decode_received, run_aerid
from .agreement import evaluate, run_agreement
from .coin import coin_flip, expected_unique_ranks, init_coin, unique_rank_count
from .engine import ConfigError, ExperimentConfig, RoundBudgetExceeded
from .graph import (CoreExtractionError, GenerationError, extract_core,
                    generate_regular_expander, spectral_profile, write_graph_file)
from .walk import WalkContext, classify_tokens, endpoint_distribution_test, run_walk_protocol

DEFAULT_OUT_ENV = "SIMULATE_OUT"
SWEEP_CAP_DEFAULT = 256


# ---------------------------------------------------------------- spec files

def _set_dotted(tree: dict, path: str, raw: str) -> None:
    keys = path.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = yaml.safe_load(raw)


def load_spec(path: str | None, overrides: list[str]) -> dict:
    spec: dict = {}
    if path:
        with open(path) as fh:
            spec = yaml.safe_load(fh) or {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        _set_dotted(spec, key, val)
    spec.setdefault("config", {})
    return spec


def spec_seeds(spec: dict) -> list[int]:
    if "seeds" in spec:
        return [int(s) for s in spec["seeds"]]
    count = int(spec.get("seed_count", 1))
    base = int(spec["config"].get("seed", 0))
    return [base + i for i in range(count)]


def make_config(spec: dict, seed: int) -> ExperimentConfig:
    data = dict(spec["config"])
    data["seed"] = seed
    return ExperimentConfig.from_dict(data)


def expand_sweep(spec: dict) -> list[dict]:
    axes = spec.get("sweep") or {}
    specs = [spec]
    for field_name, values in axes.items():
        nxt = []
        for s in specs:
            for v in values:
                child = json.loads(json.dumps(s))
                child["config"][field_name] = v
                nxt.append(child)
        specs = nxt
    cap = int(spec.get("sweep_cap", SWEEP_CAP_DEFAULT))
    if len(specs) * len(spec_seeds(spec)) > cap:
        raise ConfigError(f"sweep cross-product exceeds cap {cap}")
    return specs


# ------------------------------------------------------------- persistence

def run_dir(out_root: Path, config: ExperimentConfig) -> Path:
    p = out_root / config.config_hash() / str(config.seed)
    p.mkdir(parents=True, exist_ok=True)
    return p


def save_transcript(path: Path, transcript, fmt: str = "jsonl") -> None:
    if fmt == "binary":
        with open(path, "wb") as fh:
            payload = transcript.canonical_bytes()
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)
    else:
        with open(path, "w") as fh:
            fh.write(json.dumps({"config_hash": transcript.config_hash,
                                 "seed": transcript.seed,
                                 "digest": transcript.digest()}) + "\n")
            for ev in transcript.events:
                fh.write(json.dumps([repr(x) for x in ev]) + "\n")


def save_run(out_root: Path, config: ExperimentConfig, transcript,
             metrics: dict, trace_rows: list[dict], fmt: str = "jsonl") -> Path:
    d = run_dir(out_root, config)
    metrics = dict(metrics)
    metrics["config_hash"] = config.config_hash()
    metrics["seed"] = config.seed
    metrics["config"] = asdict(config)
    metrics["transcript_digest"] = transcript.digest()
    ext = "bin" if fmt == "binary" else "jsonl"
    save_transcript(d / f"transcript.{ext}", transcript, fmt)
    with open(d / "metrics.json", "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True, default=str)
    if trace_rows:
        with open(d / "trace.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(trace_rows[0]))
            w.writeheader()
            w.writerows(trace_rows)
    return d


def _trace_from_transcript(transcript) -> list[dict]:
    rows = []
    for ev in transcript.events:
        rows.append({"event": ev[0],
                     "args": ";".join(str(x) for x in ev[1:])})
    return rows


# ------------------------------------------------------------- subcommands

def cmd_gen_graph(spec: dict, out_root: Path) -> int:
    for seed in spec_seeds(spec):
        cfg = make_config(spec, seed)
        g = generate_regular_expander(cfg.n, cfg.d, cfg.seed)
        prof = spectral_profile(g)
        d = out_root / cfg.config_hash() / str(seed)
        d.mkdir(parents=True, exist_ok=True)
        write_graph_file(g, d / "graph.txt")
        report = {"n": g.n, "d": g.d, "seed": seed,
                  "config_hash": cfg.config_hash(),
                  "lambda2": prof.second_eigenvalue_modulus,
                  "cheeger_lower_bound": prof.cheeger_lower_bound,
                  "mixing_time_exact": prof.mixing_time,
                  "mixing_converged": prof.converged}
        with open(d / "spectral.json", "w") as fh:
            json.dump(report, fh, indent=2)
        print(f"graph n={g.n} d={g.d} seed={seed} lambda2={prof.second_eigenvalue_modulus:.4f} "
              f"t_mix={prof.mixing_time} -> {d}")
    return 0


def _one_walk(spec: dict, seed: int, out_root: Path, fmt: str) -> dict:
    cfg = make_config(spec, seed)
    ctx = WalkContext(cfg)
    adv = make_strategy(cfg.adversary_name, **cfg.adversary_params)
    res = run_walk_protocol(ctx, total=cfg.direct_total, adversary=adv)
    metrics = classify_tokens(res, ctx.core)
    metrics["tv_to_stationary"] = endpoint_distribution_test(res, ctx.core)
    metrics["rounds"] = res.rounds
    metrics["blacklist_events"] = ctx.stats.blacklist_events
    save_run(out_root, cfg, ctx.transcript, metrics,
             _trace_from_transcript(ctx.transcript), fmt)
    return metrics


def cmd_run_walk(spec: dict, out_root: Path) -> int:
    fmt = spec.get("transcript_format", "jsonl")
    for seed in spec_seeds(spec):
        m = _one_walk(spec, seed, out_root, fmt)
        print(f"walk seed={seed} good={m['good']} bad={m['bad']} "
              f"crossings={m['crossings']} tv={m['tv_to_stationary']:.4f}")
    return 0


def _one_aerid(spec: dict, seed: int, out_root: Path, fmt: str) -> dict:
    cfg = make_config(spec, seed)
    ctx = WalkContext(cfg)
    adv = make_strategy(cfg.adversary_name, **cfg.adversary_params)
    payloads = np.arange(cfg.n, dtype=np.int32) * 7 + 3   # distinct known payloads
    res = run_aerid(ctx, payloads, adversary=adv)
    mask = res.endpoints.lowcong if cfg.variant == "v2" else None
    dec = decode_received(res.endpoints, cfg.n, mask=mask)
    corr = decode_correctness(dec, payloads, ctx.byz_mask)
    metrics = {"variant": cfg.variant, "rounds": res.rounds,
               "good_receivers": corr["good_receivers"],
               "honest": corr["honest"],
               "mean_correct_fraction": corr["mean_correct_fraction"],
               "stage_good_max": res.stage_good_max}
    save_run(out_root, cfg, ctx.transcript, metrics,
             _trace_from_transcript(ctx.transcript), fmt)
    return metrics


def cmd_run_aerid(spec: dict, out_root: Path) -> int:
    fmt = spec.get("transcript_format", "jsonl")
    for seed in spec_seeds(spec):
        m = _one_aerid(spec, seed, out_root, fmt)
        print(f"aerid[{m['variant']}] seed={seed} good_receivers="
              f"{m['good_receivers']}/{m['honest']} "
              f"mean_correct={m['mean_correct_fraction']:.4f}")
    return 0


def _one_coin(spec: dict, seed: int, out_root: Path, fmt: str) -> dict:
    cfg = make_config(spec, seed)
    ctx = WalkContext(cfg)
    adv = make_strategy(cfg.adversary_name, **cfg.adversary_params)
    state = init_coin(ctx, adversary=adv)
    n = cfg.n
    good_phases, ones, decided, junk_fwd = 0, 0, 0, 0
    for i in range(1, n + 1):
        fo = coin_flip(state, i, adversary=adv)
        junk_fwd += fo.junk_forwarded_nonconforming
        if fo.good:
            good_phases += 1
            bits = fo.bits[~ctx.byz_mask]
            if np.all(bits == fo.sender_bit):
                decided += 1
            ones += int(fo.sender_bit == 1)
    metrics = {
        "good_phases": good_phases,
        "good_phase_unanimous": decided,
        "sender_bit_ones": ones,
        "unique_ranks": unique_rank_count(state.ranks),
        "expected_unique_ranks": expected_unique_ranks(n, state.n_honest),
        "junk_forwarded_nonconforming": junk_fwd,
        "flip_rounds_each": state.flip_rounds,
        "init_rounds": state.init_result.rounds,
    }
    save_run(out_root, cfg, ctx.transcript, metrics,
             _trace_from_transcript(ctx.transcript), fmt)
    return metrics


def cmd_run_coin(spec: dict, out_root: Path) -> int:
    fmt = spec.get("transcript_format", "jsonl")
    for seed in spec_seeds(spec):
        m = _one_coin(spec, seed, out_root, fmt)
        print(f"coin seed={seed} good_phases={m['good_phases']} "
              f"unanimous={m['good_phase_unanimous']} "
              f"unique_ranks={m['unique_ranks']} "
              f"junk_bad_forwarded={m['junk_forwarded_nonconforming']}")
    return 0


def _one_agreement(spec: dict, seed: int, out_root: Path, fmt: str) -> dict:
    cfg = make_config(spec, seed)
    ctx = WalkContext(cfg)
    adv = make_strategy(cfg.adversary_name, **cfg.adversary_params)
    inputs_mode = spec.get("inputs", "split")
    rng = np.random.default_rng([cfg.seed, 0x1207])
    if inputs_mode == "all_zero":
        inputs = np.zeros(cfg.n, dtype=np.int32)
    elif inputs_mode == "all_one":
        inputs = np.ones(cfg.n, dtype=np.int32)
    else:
        inputs = rng.integers(0, 2, size=cfg.n).astype(np.int32)
    res = run_agreement(ctx, inputs, adversary=adv)
    ev = evaluate(res, inputs, ctx.byz_mask)
    metrics = dict(ev)
    metrics["inputs_mode"] = inputs_mode
    metrics["rounds_walked"] = res.rounds_walked
    metrics["rounds_logical"] = res.rounds_logical
    metrics["agree_frac_by_phase"] = [p.agree_frac for p in res.phases]
    save_run(out_root, cfg, ctx.transcript, metrics,
             _trace_from_transcript(ctx.transcript), fmt)
    return metrics


def cmd_run_agreement(spec: dict, out_root: Path) -> int:
    fmt = spec.get("transcript_format", "jsonl")
    for seed in spec_seeds(spec):
        m = _one_agreement(spec, seed, out_root, fmt)
        print(f"agreement seed={seed} agree_frac={m['agree_frac']:.3f} "
              f"phase={m['agreed_phase']} validity_ok={m['validity_ok']}")
    return 0


_SWEEP_RUNNERS = {
    "walk": _one_walk,
    "aerid": _one_aerid,
    "coin": _one_coin,
    "agreement": _one_agreement,
}


def _sweep_task(args):
    kind, child, seed, out_root, fmt = args
    return _SWEEP_RUNNERS[kind](child, seed, Path(out_root), fmt)


def cmd_sweep(spec: dict, out_root: Path, jobs: int) -> int:
    kind = spec.get("run", "walk")
    if kind not in _SWEEP_RUNNERS:
        raise ConfigError(f"sweep run kind must be one of {sorted(_SWEEP_RUNNERS)}")
    fmt = spec.get("transcript_format", "jsonl")
    tasks = [(kind, child, seed, str(out_root), fmt)
             for child in expand_sweep(spec) for seed in spec_seeds(spec)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]
    summary: dict[str, list] = {}
    for m in results:
        for k, v in m.items():
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                summary.setdefault(k, []).append(v)
    agg = {k: {"mean": float(np.mean(v)), "min": float(np.min(v)),
               "max": float(np.max(v)), "count": len(v)}
           for k, v in summary.items()}
    out_root.mkdir(parents=True, exist_ok=True)
    with open(out_root / "sweep_summary.json", "w") as fh:
        json.dump({"run": kind, "tasks": len(tasks), "aggregate": agg}, fh,
                  indent=2, sort_keys=True)
    print(f"sweep run={kind} tasks={len(tasks)} -> {out_root / 'sweep_summary.json'}")
    return 0


def cmd_replay(metrics_path: Path, out_root: Path) -> int:
    with open(metrics_path) as fh:
        stored = json.load(fh)
    cfg = ExperimentConfig.from_dict(stored["config"])
    spec = {"config": stored["config"], "seeds": [cfg.seed]}
    if "inputs_mode" in stored:
        spec["inputs"] = stored["inputs_mode"]
    if "good_phases" in stored:
        runner = _one_coin
    elif "agree_frac" in stored:
        runner = _one_agreement
    elif "good_receivers" in stored:
        runner = _one_aerid
    else:
        runner = _one_walk
    replay_root = out_root / "replay"
    fresh = runner(spec, cfg.seed, replay_root, stored.get("format", "jsonl"))
    with open(replay_root / cfg.config_hash() / str(cfg.seed) / "metrics.json") as fh:
        fresh_full = json.load(fh)
    same_digest = fresh_full["transcript_digest"] == stored["transcript_digest"]
    same_metrics = all(fresh_full.get(k) == stored.get(k)
                       for k in stored if k not in ("config",))
    if same_digest and same_metrics:
        print(f"replay OK: digest {stored['transcript_digest'][:16]}... matches")
        return 0
    print("replay MISMATCH", file=sys.stderr)
    for k in stored:
        if fresh_full.get(k) != stored.get(k):
            print(f"  field {k}: stored={stored[k]!r} fresh={fresh_full.get(k)!r}",
                  file=sys.stderr)
    return 3


def cmd_plot(out_root: Path) -> int:
    """Render sweep/run summaries to CSV and a minimal SVG line chart."""
    rows = []
    for mp in sorted(out_root.glob("*/*/metrics.json")):
        with open(mp) as fh:
            m = json.load(fh)
        rows.append({"config_hash": m.get("config_hash"), "seed": m.get("seed"),
                     **{k: v for k, v in m.items()
                        if isinstance(v, (int, float)) and not isinstance(v, bool)}})
    if not rows:
        print("no metrics found under", out_root, file=sys.stderr)
        return 2
    keys = sorted({k for r in rows for k in r})
    with open(out_root / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
    metric = next((k for k in ("tv_to_stationary", "mean_correct_fraction",
                               "agree_frac", "good_phases") if any(k in r for r in rows)),
                  None)
    if metric:
        vals = [r[metric] for r in rows if metric in r]
        lo, hi = min(vals), max(vals)
        span = (hi - lo) or 1.0
        pts = " ".join(f"{20 + 560 * i / max(1, len(vals) - 1):.1f},"
                       f"{180 - 160 * (v - lo) / span:.1f}"
                       for i, v in enumerate(vals))
        svg = (f'<svg xmlns="http://www.w3.org/2000/svg" width="600" height="200">'
               f'<polyline fill="none" stroke="black" points="{pts}"/>'
               f'<text x="20" y="15">{metric} per run</text></svg>')
        (out_root / "summary.svg").write_text(svg)
    print(f"wrote {out_root / 'summary.csv'}")
    return 0


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simulate",
                                description="Deterministic walk-protocol simulator")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("gen-graph", "run-walk", "run-aerid", "run-coin",
                 "run-agreement", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--spec", help="YAML spec file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path config override")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--out", default=None)
    rp = sub.add_parser("replay")
    rp.add_argument("metrics", help="path to a stored metrics.json")
    rp.add_argument("--out", default=None)
    pp = sub.add_parser("plot")
    pp.add_argument("--out", default=None)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out_root = Path(args.out or os.environ.get(DEFAULT_OUT_ENV, "runs"))
    try:
        if args.command == "replay":
            return cmd_replay(Path(args.metrics), out_root)
        if args.command == "plot":
            return cmd_plot(out_root)
        spec = load_spec(args.spec, args.set)
        # validate eagerly so config errors exit 2 before any work
        for seed in spec_seeds(spec):
            make_config(spec, seed)
        dispatch = {
            "gen-graph": lambda: cmd_gen_graph(spec, out_root),
            "run-walk": lambda: cmd_run_walk(spec, out_root),
            "run-aerid": lambda: cmd_run_aerid(spec, out_root),
            "run-coin": lambda: cmd_run_coin(spec, out_root),
            "run-agreement": lambda: cmd_run_agreement(spec, out_root),
            "sweep": lambda: cmd_sweep(spec, out_root, args.jobs),
        }
        return dispatch[args.command]()
    except (ConfigError, CoreExtractionError, GenerationError) as exc:
        print(json.dumps({"error": "config", "detail": str(exc)}), file=sys.stderr)
        return 2
    except RoundBudgetExceeded as exc:
        print(json.dumps({"error": "budget", "detail": str(exc)}), file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
