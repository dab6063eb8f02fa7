"""Command-line front end: corpus generation, decoding, ablation, theory.

All outputs are deterministic functions of the arguments; CSV column orders
are fixed. Exit status is nonzero when any engine output diverges from the
autoregressive reference.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Sequence

from .bench import CorpusSpec, LosslessnessError, ablation_table, run_corpus
from .engine import ENGINE_KINDS, EngineConfig

ABLATION_CLI_FLAGS = (
    "disable_spine_branches",
    "disable_bigram",
    "disable_bypass",
    "disable_spine",
    "control_swap_sources",
)
from .models import SyntheticModelSpec
from .theory import (
    AcceptanceModel,
    BoundSetting,
    TreeShape,
    dominance_scan,
    monte_carlo_yield,
    setting_from_stats,
    spine_shape_tree,
    spine_yield,
    verify_bound,
)
from .tree import linear_allocation

VERIFY_BOUND_COLUMNS = (
    "setting_id", "p_s", "p_t", "m", "B",
    "tau_eq5", "tau_meas", "stderr", "tau_iso", "ratio",
)


def _fmt(value: float) -> str:
    return f"{value:.10g}"


def _write_csv(path: str | None, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    out = open(path, "w", newline="") if path else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if path:
            out.close()


def _load_config(path: str | None) -> EngineConfig:
    if path is None:
        return EngineConfig()
    return EngineConfig.from_json(Path(path).read_text())


def _cmd_corpus_gen(args: argparse.Namespace) -> int:
    spec = CorpusSpec(
        name=args.name,
        model=SyntheticModelSpec(
            kind=args.kind, seed=args.seed, vocab=args.vocab, repetition=args.repetition
        ),
        prompts=args.prompts,
        prompt_len=args.prompt_len,
        max_tokens=args.max_tokens,
    )
    Path(args.out).write_text(spec.to_json() + "\n")
    print(f"wrote corpus spec to {args.out}")
    return 0


def _cmd_decode(args: argparse.Namespace) -> int:
    from dataclasses import replace

    spec = CorpusSpec.from_json(Path(args.corpus).read_text())
    config = _load_config(args.config)
    toggles = {f: True for f in ABLATION_CLI_FLAGS if getattr(args, f)}
    if toggles:
        config = replace(config, **toggles)
    try:
        report = run_corpus(spec, args.engine, config, jobs=args.jobs)
    except LosslessnessError as err:
        print(f"LOSSLESSNESS VIOLATION: {err}", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json() + "\n")
    rows = [r.row() for r in report.results]
    _write_csv(
        str(out_dir / "per_prompt.csv"),
        list(rows[0].keys()),
        [[row[k] for k in rows[0].keys()] for row in rows],
    )
    (out_dir / "generated.jsonl").write_text(
        "".join(
            json.dumps({"prompt_id": r.prompt_id, "tokens": list(r.tokens)}) + "\n"
            for r in report.results
        )
    )
    print(
        f"engine={args.engine} corpus={spec.name} prompts={spec.prompts} "
        f"mean_tau={_fmt(report.mean_tau)} median_tau={_fmt(report.median_tau)}"
    )
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    spec = CorpusSpec.from_json(Path(args.corpus).read_text())
    config = _load_config(args.config)
    try:
        rows = ablation_table(spec, config, jobs=args.jobs)
    except LosslessnessError as err:
        print(f"LOSSLESSNESS VIOLATION: {err}", file=sys.stderr)
        return 2
    _write_csv(
        args.out,
        ("label", "mean_tau", "median_tau", "delta_rel"),
        [
            (r["label"], _fmt(r["mean_tau"]), _fmt(r["median_tau"]), _fmt(r["delta_rel"]))
            for r in rows
        ],
    )
    return 0


def _cmd_theory_yield(args: argparse.Namespace) -> int:
    widths = tuple(int(w) for w in args.widths.split(",")) if args.widths else ()
    shape = TreeShape(m=args.m, widths=widths, depth=args.depth, budget=args.budget)
    model = AcceptanceModel(p_s=args.ps, p_t=args.pt)
    report = spine_yield(model, shape)
    row = [
        _fmt(args.ps), _fmt(args.pt), args.m, args.depth, args.budget,
        _fmt(report.spine_term), _fmt(report.synergy_term), _fmt(report.bonus),
        _fmt(report.tau_eq),
    ]
    header = ["p_s", "p_t", "m", "D", "B", "spine_term", "synergy_term", "bonus", "tau_eq5"]
    if args.trials:
        mean, stderr = monte_carlo_yield(model, spine_shape_tree(shape), args.trials, seed=args.seed)
        header += ["tau_meas", "stderr"]
        row += [_fmt(mean), _fmt(stderr)]
    _write_csv(args.out, header, [row])
    return 0


def _cmd_theory_allocate(args: argparse.Namespace) -> int:
    widths = linear_allocation(args.ps, args.pt, args.m, args.bt)
    _write_csv(
        args.out,
        ("p_s", "p_t", "m", "branch_budget", "widths"),
        [[_fmt(args.ps), _fmt(args.pt), args.m, args.bt, " ".join(map(str, widths))]],
    )
    return 0


_DEFAULT_DOMINANCE_GRID = [
    (ratio * 0.033, 0.033, budget)
    for ratio in (2, 4, 8, 18)
    for budget in (10, 30, 60)
]


def _cmd_theory_dominance(args: argparse.Namespace) -> int:
    if args.grid == "default":
        points = _DEFAULT_DOMINANCE_GRID
    else:
        points = []
        for chunk in args.grid.split(";"):
            ps, pt, b = chunk.split(",")
            points.append((float(ps), float(pt), int(b)))
    rows = dominance_scan(points, depth=args.depth)
    _write_csv(
        args.out,
        ("p_s", "p_t", "B", "tau_spine", "best_m", "tau_iso", "best_k", "gap", "violation"),
        [
            (
                _fmt(r.p_s), _fmt(r.p_t), r.budget, _fmt(r.tau_spine), r.best_m,
                _fmt(r.tau_iso), r.best_k, _fmt(r.gap), int(r.violation),
            )
            for r in rows
        ],
    )
    violations = sum(r.violation for r in rows)
    if violations:
        print(f"{violations} dominance violations", file=sys.stderr)
        return 1
    return 0


def _cmd_theory_verify_bound(args: argparse.Namespace) -> int:
    settings: list[BoundSetting] = []
    config = _load_config(args.config)
    for corpus_path in args.corpus or []:
        spec = CorpusSpec.from_json(Path(corpus_path).read_text())
        try:
            report = run_corpus(spec, "spine", config, jobs=args.jobs)
        except LosslessnessError as err:
            print(f"LOSSLESSNESS VIOLATION: {err}", file=sys.stderr)
            return 2
        for result in report.results:
            settings.append(
                setting_from_stats(f"{spec.name}/{result.prompt_id}", result.stats, config)
            )
    if args.settings:
        for raw in json.loads(Path(args.settings).read_text()):
            settings.append(BoundSetting(**raw))
    if not settings:
        print("no settings: pass --corpus and/or --settings", file=sys.stderr)
        return 1
    report = verify_bound(settings, iso_fanout=args.iso_fanout, trials=args.trials, seed=args.seed)
    _write_csv(
        args.out,
        VERIFY_BOUND_COLUMNS,
        [
            (
                r.setting.setting_id, _fmt(r.setting.p_s), _fmt(r.setting.p_t),
                r.setting.m, r.setting.budget, _fmt(r.tau_eq), _fmt(r.tau_meas),
                _fmt(r.stderr), _fmt(r.tau_iso), _fmt(r.ratio),
            )
            for r in report.rows
        ],
    )
    if report.violations:
        print(f"{report.violations} bound violations", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinedec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("corpus-gen", help="write a corpus spec JSON")
    gen.add_argument("--name", required=True)
    gen.add_argument("--kind", choices=("markov-order-2", "template-repeater"), required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--vocab", type=int, required=True)
    gen.add_argument("--repetition", type=float, default=0.0)
    gen.add_argument("--prompts", type=int, default=8)
    gen.add_argument("--prompt-len", type=int, default=16)
    gen.add_argument("--max-tokens", type=int, default=256)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_corpus_gen)

    dec = sub.add_parser("decode", help="run an engine over a corpus")
    dec.add_argument("--corpus", required=True)
    dec.add_argument("--engine", choices=ENGINE_KINDS, default="spine")
    dec.add_argument("--config")
    dec.add_argument("--out", required=True)
    dec.add_argument("--jobs", type=int, default=1)
    for flag in ABLATION_CLI_FLAGS:
        dec.add_argument(f"--{flag.replace('_', '-')}", action="store_true")
    dec.set_defaults(func=_cmd_decode)

    abl = sub.add_parser("ablate", help="single-flag ablation table")
    abl.add_argument("--corpus", required=True)
    abl.add_argument("--config")
    abl.add_argument("--out")
    abl.add_argument("--jobs", type=int, default=1)
    abl.set_defaults(func=_cmd_ablate)

    theory = sub.add_parser("theory", help="analytic and Monte-Carlo topology analysis")
    tsub = theory.add_subparsers(dest="subcommand", required=True)

    ty = tsub.add_parser("yield", help="spine-tree yield bound")
    ty.add_argument("--ps", type=float, required=True)
    ty.add_argument("--pt", type=float, required=True)
    ty.add_argument("--m", type=int, required=True)
    ty.add_argument("--widths", "--w", dest="widths", default="")
    ty.add_argument("--depth", "--D", dest="depth", type=int, default=6)
    ty.add_argument("--budget", "--B", dest="budget", type=int, default=60)
    ty.add_argument("--trials", type=int, default=0)
    ty.add_argument("--seed", type=int, default=0)
    ty.add_argument("--out")
    ty.set_defaults(func=_cmd_theory_yield)

    ta = tsub.add_parser("allocate", help="depth-linear branch allocation")
    ta.add_argument("--ps", type=float, required=True)
    ta.add_argument("--pt", type=float, required=True)
    ta.add_argument("--m", type=int, required=True)
    ta.add_argument("--bt", type=int, required=True)
    ta.add_argument("--out")
    ta.set_defaults(func=_cmd_theory_allocate)

    td = tsub.add_parser("dominance", help="best-spine vs best-isotropic scan")
    td.add_argument("--grid", default="default", help='"default" or "ps,pt,B;ps,pt,B;..."')
    td.add_argument("--depth", type=int, default=6)
    td.add_argument("--out")
    td.set_defaults(func=_cmd_theory_dominance)

    tv = tsub.add_parser("verify-bound", help="yield bound vs measured/simulated runs")
    tv.add_argument("--corpus", action="append", help="corpus spec JSON (repeatable)")
    tv.add_argument("--settings", help="JSON list of explicit settings")
    tv.add_argument("--config")
    tv.add_argument("--iso-fanout", type=int, default=3)
    tv.add_argument("--trials", type=int, default=100_000)
    tv.add_argument("--seed", type=int, default=0)
    tv.add_argument("--jobs", type=int, default=1)
    tv.add_argument("--out")
    tv.set_defaults(func=_cmd_theory_verify_bound)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
