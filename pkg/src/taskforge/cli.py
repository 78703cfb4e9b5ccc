"""Command-line interface.

Subcommands: ``exec`` (run a program on an image), ``synth`` (build the two
question types), ``score`` (recompute and check a run's rewards and answer
keys), ``evolve`` (full loop), ``analyze`` (CSV + figures), ``library``
(write the bundled synthetic image set).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .imaging import ExecError, ExecLimits, execute, execute_all, load_png, save_png
from .lang import parse_program
from .orchestrator import LoopConfig, analyze_diversity, rescore_run, run_evolution
from .tasks import synth_pair, task_to_record


def _load_program(path: str, n_arg_sets: int = 4):
    source = Path(path).read_text("utf-8")
    report = parse_program(source, n_arg_sets=n_arg_sets)
    if not report.ok:
        for e in report.errors:
            print(f"{path}:{e.pos}: {e.category}: {e.message}", file=sys.stderr)
        raise SystemExit(2)
    return report.program


def cmd_exec(args) -> int:
    program = _load_program(args.program)
    image = load_png(Path(args.image).read_bytes())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    limits = ExecLimits()
    try:
        if args.args_index is None:
            outputs = execute_all(program, image, limits)
            for j, img in enumerate(outputs):
                (out_dir / f"output_{j}.png").write_bytes(save_png(img))
            print(f"wrote {len(outputs)} outputs to {out_dir}")
        else:
            j = args.args_index
            img = execute(program, program.arg_sets[j], image, limits)
            path = out_dir / f"output_{j}.png"
            path.write_bytes(save_png(img))
            print(f"wrote {path}")
    except ExecError as e:
        print(f"execution failed at step {e.step_index}: "
              f"{e.category}: {e}", file=sys.stderr)
        return 1
    return 0


def cmd_synth(args) -> int:
    program = _load_program(args.program)
    image = load_png(Path(args.image).read_bytes())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        outputs = execute_all(program, image, ExecLimits())
    except ExecError as e:
        print(f"execution failed: {e.category}: {e}", file=sys.stderr)
        return 1
    t0, t1 = synth_pair(program, image, outputs, args.seed)
    from .imaging import ImageStore
    store = ImageStore(out_dir / "images")
    store.put(image)
    for img in outputs:
        store.put(img)
    with (out_dir / "tasks.jsonl").open("w", encoding="utf-8") as fh:
        for task in (t0, t1):
            fh.write(json.dumps(task_to_record(task), sort_keys=True) + "\n")
    print(f"wrote 2 tasks and {len(outputs) + 1} images to {out_dir}")
    return 0


def cmd_score(args) -> int:
    result = rescore_run(args.run)
    print(f"rollouts checked:  {result['rollouts_checked']}")
    print(f"reward mismatches: {len(result['reward_mismatches'])}")
    print(f"answer keys checked:    {result['keys_checked']}")
    print(f"answer key mismatches:  {result['key_mismatches']}")
    for m in result["reward_mismatches"][:20]:
        print(f"  mismatch: {m}")
    ok = not result["reward_mismatches"] and result["key_mismatches"] == 0
    return 0 if ok else 1


def cmd_evolve(args) -> int:
    config = LoopConfig.from_json(Path(args.config).read_text("utf-8"))
    report = run_evolution(config, resume=args.resume)
    for it in report["iterations"]:
        print(f"iteration {it['iteration']}: "
              f"bank {it['bank_retained']} (mean acc "
              f"{it['bank_mean_acc'] if it['bank_mean_acc'] is not None else 'n/a'}), "
              f"queue {it['queue_size']}, mean r_C {it['mean_r_total']:.3f}")
    print(f"run written to {config.run_dir}")
    return 0


def cmd_analyze(args) -> int:
    from .report import write_analysis
    result = write_analysis(args.run, args.out)
    print(f"wrote {result['csv']}")
    for f in result["figures"]:
        print(f"wrote {f}")
    for t, d in result["diversity"].items():
        shown = f"{d:.4f}" if d is not None else "n/a"
        print(f"iteration {t}: mean pairwise BLEU distance {shown}")
    return 0


def cmd_library(args) -> int:
    from .seeds import build_test_library
    paths = build_test_library(args.out, count=args.count, side=args.side)
    print(f"wrote {len(paths)} images to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taskforge")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("exec", help="run a program on an image")
    q.add_argument("--program", required=True)
    q.add_argument("--image", required=True)
    q.add_argument("--args-index", type=int, default=None)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_exec)

    q = sub.add_parser("synth", help="synthesize the two question types")
    q.add_argument("--program", required=True)
    q.add_argument("--image", required=True)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_synth)

    q = sub.add_parser("score", help="recompute rewards and verify answer keys")
    q.add_argument("--run", required=True)
    q.add_argument("--recompute", action="store_true", default=True)
    q.set_defaults(func=cmd_score)

    q = sub.add_parser("evolve", help="run the co-evolution loop")
    q.add_argument("--config", required=True)
    q.add_argument("--resume", action="store_true")
    q.set_defaults(func=cmd_evolve)

    q = sub.add_parser("analyze", help="write CSV summary and figures for a run")
    q.add_argument("--run", required=True)
    q.add_argument("--out", default=None)
    q.set_defaults(func=cmd_analyze)

    q = sub.add_parser("library", help="write the bundled synthetic image library")
    q.add_argument("--out", required=True)
    q.add_argument("--count", type=int, default=32)
    q.add_argument("--side", type=int, default=512)
    q.set_defaults(func=cmd_library)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
