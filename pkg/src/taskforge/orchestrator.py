"""The co-evolution loop: challenger rollouts with task synthesis and reward
scoring, question-bank selection, solver training handoff, and run
persistence.

All run artifacts are JSONL/JSON with sorted keys so identical configs and
master seeds reproduce byte-identical logs. Wall-clock timings go to a
separate sidecar that is excluded from that guarantee.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import equeue, seeding
from .imaging import ExecError, ExecLimits, ImageStore, execute_all, load_png
from .lang import parse_program, render_canonical
from .policies import (LearnBatch, NoisyOracleSolver, PolicyError, RemoteConfig,
                       RemotePolicy, ScriptedChallenger, challenger_context,
                       solver_context)
from .rewards import (ChallengerBreakdown, RewardWeights, bleu_similarity,
                      challenger_format_reward, cluster_by_bleu,
                      difficulty_reward, diversity_reward, estimate_accuracy,
                      solver_total, validity_reward)
from .seeds import SEED_PROGRAMS
from .tasks import extract_fenced_blocks, grade_answer, synth_pair, \
    task_from_record, task_to_record


@dataclass
class LoopConfig:
    iterations: int = 3              # T
    steps_per_iteration: int = 10    # N_step
    batch_size: int = 128            # B rollouts per step
    solver_samples: int = 6          # K
    n_arg_sets: int = 4              # N
    n_examples: int = 2              # N_e in-context examples
    queue_capacity: int = 50         # M
    dedup_threshold: float = 0.25    # sigma_high
    weights: RewardWeights = field(default_factory=RewardWeights)
    limits: ExecLimits = field(default_factory=ExecLimits)
    master_seed: int = 0
    image_library: str = ""
    run_dir: str = ""
    challenger: dict = field(default_factory=lambda: {"type": "scripted",
                                                      "compose": True})
    solver: dict = field(default_factory=lambda: {"type": "noisy-oracle",
                                                  "p": 0.5, "increment": 0.0})

    def to_json(self) -> str:
        d = {k: v for k, v in self.__dict__.items()
             if k not in ("weights", "limits")}
        d["weights"] = dict(self.weights.__dict__)
        d["limits"] = dict(self.limits.__dict__)
        return json.dumps(d, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "LoopConfig":
        d = json.loads(text)
        weights = RewardWeights(**d.pop("weights", {}))
        limits = ExecLimits(**d.pop("limits", {}))
        return cls(weights=weights, limits=limits, **d)


@dataclass
class BankEntry:
    task: object
    r_diff: float
    acc: float
    provenance: dict


@dataclass
class LoopState:
    config: LoopConfig
    queue: equeue.ExampleQueue
    challenger: object
    solver: object
    store: ImageStore
    library: list                      # image file paths, sorted
    bank: list = field(default_factory=list)   # BankEntry, current iteration
    iteration: int = 0


def build_policy(spec: dict):
    kind = spec.get("type", "scripted")
    if kind == "scripted":
        return ScriptedChallenger(compose=spec.get("compose", True),
                                  insert_prob=spec.get("insert_prob", 0.35),
                                  compose_prob=spec.get("compose_prob", 0.5))
    if kind == "noisy-oracle":
        return NoisyOracleSolver(spec.get("p", 0.5),
                                 spec.get("increment", 0.0),
                                 spec.get("cap", 1.0))
    if kind == "remote":
        cfg = RemoteConfig(base_url=spec["base_url"],
                           path=spec.get("path", "/v1/chat/completions"),
                           model=spec.get("model", "default"),
                           auth_env=spec.get("auth_env"),
                           max_attempts=spec.get("max_attempts", 3),
                           backoff_base=spec.get("backoff_base", 1.0),
                           request_timeout=spec.get("request_timeout", 30.0),
                           transcript_path=spec.get("transcript_path"))
        return RemotePolicy(cfg, learn_log=spec.get("learn_log"))
    raise ValueError(f"unknown policy type {kind!r}")


def _image_summary(img) -> dict:
    mean = img.pixels.reshape(-1, 3).mean(axis=0)
    return {"width": img.width, "height": img.height,
            "mean_color": [round(float(c), 2) for c in mean]}


def _diversity_source(rollout: dict) -> str:
    """Text used for a rollout in the BLEU diversity batch: the canonical
    program when it parsed, otherwise whatever code-like text it produced."""
    if rollout.get("canonical_source"):
        return rollout["canonical_source"]
    blocks = extract_fenced_blocks(rollout.get("raw_output", ""))
    if len(blocks) == 1:
        return blocks[0]
    return rollout.get("raw_output", "")


def run_challenger_step(state: LoopState, iteration: int, step: int) -> dict:
    """One phase-1 step: B rollouts on a library image sampled for this step,
    per-rollout scoring, bank and queue updates, and a learn handoff."""
    cfg = state.config
    seed = cfg.master_seed

    img_rng = seeding.substream(seed, "image", iteration, step)
    lib_index = img_rng.randrange(len(state.library))
    image = load_png(Path(state.library[lib_index]).read_bytes())
    image_ref = state.store.put(image)
    summary = _image_summary(image)

    rollouts = []
    new_questions = []
    for i in range(cfg.batch_size):
        rollout = {"rollout": i}
        entries = state.queue.sample(min(cfg.n_examples, len(state.queue)),
                                     seeding.derive_seed(seed, "examples",
                                                         iteration, step, i))
        ctx = challenger_context([e.source for e in entries], image_ref, summary,
                                 seeding.derive_seed(seed, "challenger",
                                                     iteration, step, i))
        try:
            resp = state.challenger.generate(ctx)
            rollout["raw_output"] = resp.text
        except PolicyError as e:
            rollout["raw_output"] = ""
            rollout["policy_error"] = e.kind

        breakdown = ChallengerBreakdown()
        breakdown.r_format = challenger_format_reward(rollout["raw_output"])
        rollout["r_format"] = breakdown.r_format

        report = None
        outputs = None
        if breakdown.r_format:
            block = extract_fenced_blocks(rollout["raw_output"])[0]
            report = parse_program(block, n_arg_sets=cfg.n_arg_sets)
            rollout["parse_ok"] = report.ok
            if report.ok:
                rollout["canonical_source"] = render_canonical(report.program)
                try:
                    outputs = execute_all(report.program, image, cfg.limits)
                except ExecError as e:
                    outputs = e
            breakdown.r_valid, breakdown.reasons = validity_reward(
                report, outputs, cfg.limits, format_ok=True)
        else:
            rollout["parse_ok"] = False
            breakdown.r_valid, breakdown.reasons = 0, ["format-failed"]
        rollout["r_valid"] = breakdown.r_valid
        rollout["validity_reasons"] = list(breakdown.reasons)

        if breakdown.r_valid:
            program = report.program
            edited_refs = [state.store.put(o) for o in outputs]
            rollout["edited_refs"] = edited_refs
            t0, t1 = synth_pair(program, image, outputs,
                                seeding.derive_seed(seed, "synth",
                                                    iteration, step, i))
            diffs = []
            for task in (t0, t1):
                est = estimate_accuracy(task, state.solver, cfg.solver_samples,
                                        seeding.derive_seed(seed, "difficulty",
                                                            iteration, step, i,
                                                            task.kind))
                r_diff = difficulty_reward(est.acc)
                diffs.append(r_diff)
                prov = {"iteration": iteration, "step": step, "rollout": i,
                        "kind": task.kind}
                state.bank.append(BankEntry(task, r_diff, est.acc, prov))
                rec = task_to_record(task)
                rec.update({"r_diff": r_diff, "acc": est.acc, "provenance": prov})
                new_questions.append(rec)
            r_diff_mean = sum(diffs) / len(diffs)
            breakdown.r_diff = r_diff_mean
            rollout["acc"] = [e["acc"] for e in new_questions[-2:]]
            rollout["r_diff_pair"] = diffs
            rollout["r_diff_mean"] = r_diff_mean
            status, detail = state.queue.insert(
                rollout["canonical_source"], r_diff_mean,
                origin=f"generated:{iteration}:{step}")
            rollout["queue_insert"] = (status if status == "accepted"
                                       else f"rejected:{detail}")
        rollout["r_diff"] = breakdown.r_diff
        rollout["_breakdown"] = breakdown
        rollouts.append(rollout)

    sources = [_diversity_source(r) for r in rollouts]
    clusters = cluster_by_bleu(sources, cfg.dedup_threshold)
    rewards_div = diversity_reward(clusters.densities)
    items = []
    for rollout, r_div in zip(rollouts, rewards_div):
        breakdown = rollout.pop("_breakdown")
        breakdown.r_div = r_div
        rollout["r_div"] = r_div
        rollout["r_total"] = breakdown.total(cfg.weights)
        items.append({"context_ref": [iteration, step, rollout["rollout"]],
                      "response": rollout["raw_output"],
                      "reward": rollout["r_total"]})
    state.challenger.learn(LearnBatch("challenger", iteration, items))

    return {"iteration": iteration, "step": step, "image": image_ref,
            "library_index": lib_index, "rollouts": rollouts,
            "questions": new_questions}


def select_question_bank(entries, cap: int) -> list:
    """Stable descending sort by difficulty reward, truncated to cap."""
    return sorted(entries, key=lambda e: -e.r_diff)[:cap]


def run_solver_phase(state: LoopState, iteration: int, selected) -> list:
    """Grade the solver on the retained bank in N_step batches, handing each
    batch to its learn hook. Returns per-task grade records."""
    cfg = state.config
    n_batches = max(1, cfg.steps_per_iteration)
    records = []
    if not selected:
        return records
    per = -(-len(selected) // n_batches)  # ceil
    for b in range(n_batches):
        chunk = selected[b * per:(b + 1) * per]
        items = []
        for idx, entry in enumerate(chunk):
            ctx = solver_context(entry.task,
                                 seeding.derive_seed(cfg.master_seed,
                                                     "solver-train", iteration,
                                                     b, idx))
            try:
                resp = state.solver.generate(ctx)
                text = resp.text
            except PolicyError:
                text = ""
            g = grade_answer(entry.task, text)
            r_s = solver_total(g.formatted, g.correct, cfg.weights)
            records.append({"batch": b, "formatted": g.formatted,
                            "extracted": g.extracted, "correct": g.correct,
                            "r_s": r_s, "r_diff": entry.r_diff,
                            "acc": entry.acc,
                            "provenance": entry.provenance})
            items.append({"context_ref": entry.provenance, "response": text,
                          "reward": r_s, "truth": entry.task.correct_letter})
        if items:
            state.solver.learn(LearnBatch("solver", iteration, items))
    return records


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True) + "\n"


def _load_jsonl(path: Path) -> list:
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text("utf-8").splitlines()
            if line.strip()]


def _replay_step(state: LoopState, record: dict) -> None:
    """Rebuild bank and queue effects of an already-logged step."""
    for q in record["questions"]:
        state.bank.append(BankEntry(task_from_record(q), q["r_diff"], q["acc"],
                                    q["provenance"]))
    for r in record["rollouts"]:
        if r.get("r_valid") and "r_diff_mean" in r:
            state.queue.insert(r["canonical_source"], r["r_diff_mean"],
                               origin=f"generated:{record['iteration']}:"
                                      f"{record['step']}")


def run_evolution(config: LoopConfig, resume: bool = False) -> dict:
    """Execute the full loop and write the run directory; returns the report."""
    run_dir = Path(config.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(config.to_json(), "utf-8")

    library = sorted(Path(config.image_library).glob("*.png"))
    if not library:
        raise FileNotFoundError(
            f"no PNG images found in library {config.image_library!r}")

    state = LoopState(
        config=config,
        queue=equeue.init_with_seeds(SEED_PROGRAMS, config.queue_capacity,
                                     config.dedup_threshold),
        challenger=build_policy(config.challenger),
        solver=build_policy(config.solver),
        store=ImageStore(run_dir / "images"),
        library=[str(p) for p in library],
    )

    report = {"iterations": []}
    timings = []
    for t in range(1, config.iterations + 1):
        iter_dir = run_dir / f"iter_{t}"
        iter_dir.mkdir(exist_ok=True)
        steps_path = iter_dir / "steps.jsonl"
        questions_path = iter_dir / "questions.jsonl"
        solver_path = iter_dir / "solver.jsonl"
        done_path = iter_dir / "done.marker"

        state.bank = []
        existing = _load_jsonl(steps_path) if resume else []
        iteration_done = resume and done_path.exists()
        t_start = time.monotonic()
        if existing:
            # each step record embeds its questions, so replaying the step
            # lines rebuilds bank and queue exactly; questions.jsonl is then
            # rewritten from them to stay in sync
            for rec in existing:
                _replay_step(state, rec)
            with questions_path.open("w", encoding="utf-8") as fh:
                for rec in existing:
                    for q in rec["questions"]:
                        fh.write(_dump(q))
        if not iteration_done:
            start_step = len(existing)
            if not existing:
                steps_path.write_text("", "utf-8")
                questions_path.write_text("", "utf-8")
            for s in range(start_step, config.steps_per_iteration):
                record = run_challenger_step(state, t, s)
                with steps_path.open("a", encoding="utf-8") as fh:
                    fh.write(_dump(record))
                with questions_path.open("a", encoding="utf-8") as fh:
                    for q in record["questions"]:
                        fh.write(_dump(q))

        cap = config.batch_size * config.steps_per_iteration
        selected = select_question_bank(state.bank, cap)
        if iteration_done:
            solver_records = _load_jsonl(solver_path)
        else:
            solver_records = run_solver_phase(state, t, selected)
            with solver_path.open("w", encoding="utf-8") as fh:
                for rec in solver_records:
                    fh.write(_dump(rec))
            (iter_dir / "queue.jsonl").write_bytes(state.queue.snapshot())
            done_path.write_text("done\n", "utf-8")
        state.challenger.end_iteration(t)
        state.solver.end_iteration(t)
        timings.append({"iteration": t,
                        "seconds": round(time.monotonic() - t_start, 3)})

        report["iterations"].append(
            _iteration_summary(t, _load_jsonl(steps_path), selected,
                               solver_records, len(state.queue)))

    (run_dir / "queue.jsonl").write_bytes(state.queue.snapshot())
    (run_dir / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", "utf-8")
    (run_dir / "timing.json").write_text(
        json.dumps(timings, indent=2) + "\n", "utf-8")
    return report


def _iteration_summary(t: int, step_records, selected, solver_records,
                       queue_size: int) -> dict:
    rollouts = [r for rec in step_records for r in rec["rollouts"]]
    n = max(1, len(rollouts))
    reasons: dict = {}
    for r in rollouts:
        for reason in r.get("validity_reasons", []):
            reasons[reason] = reasons.get(reason, 0) + 1
    parsed = [r["canonical_source"] for r in rollouts if r.get("canonical_source")]
    return {
        "iteration": t,
        "rollouts": len(rollouts),
        "mean_r_format": sum(r["r_format"] for r in rollouts) / n,
        "mean_r_valid": sum(r["r_valid"] for r in rollouts) / n,
        "mean_r_diff": sum(r["r_diff"] for r in rollouts) / n,
        "mean_r_div": sum(r["r_div"] for r in rollouts) / n,
        "mean_r_total": sum(r["r_total"] for r in rollouts) / n,
        "bank_generated": sum(len(rec.get("questions", [])) for rec in step_records),
        "bank_retained": len(selected),
        "bank_mean_acc": (sum(e.acc for e in selected) / len(selected)
                          if selected else None),
        "bank_mean_r_diff": (sum(e.r_diff for e in selected) / len(selected)
                             if selected else None),
        "solver_mean_r_s": (sum(r["r_s"] for r in solver_records)
                            / len(solver_records) if solver_records else None),
        "queue_size": queue_size,
        "validity_reason_counts": reasons,
        "mean_pairwise_bleu_distance": _mean_pairwise_distance(parsed),
    }


def _mean_pairwise_distance(sources) -> float | None:
    if len(sources) < 2:
        return None
    total = 0.0
    count = 0
    for i in range(len(sources)):
        for j in range(i + 1, len(sources)):
            total += 1.0 - bleu_similarity(sources[i], sources[j])
            count += 1
    return total / count


def analyze_diversity(run_dir) -> dict:
    """Per-iteration mean pairwise BLEU distance over parsed programs."""
    run_dir = Path(run_dir)
    iter_dirs = sorted(run_dir.glob("iter_*"),
                       key=lambda p: int(p.name.split("_")[1]))
    if not iter_dirs:
        raise FileNotFoundError(f"no iteration logs under {run_dir}")
    out = {}
    for d in iter_dirs:
        records = _load_jsonl(d / "steps.jsonl")
        parsed = [r["canonical_source"] for rec in records
                  for r in rec["rollouts"] if r.get("canonical_source")]
        out[int(d.name.split("_")[1])] = _mean_pairwise_distance(parsed)
    return out


def rescore_run(run_dir) -> dict:
    """Recompute derivable rewards from the raw step logs and compare them to
    the logged values; also re-verifies every banked answer key."""
    run_dir = Path(run_dir)
    config = LoopConfig.from_json((run_dir / "config.json").read_text("utf-8"))
    mismatches = []
    checked = 0
    for steps_path in sorted(run_dir.glob("iter_*/steps.jsonl")):
        for rec in _load_jsonl(steps_path):
            rollouts = rec["rollouts"]
            sources = [_diversity_source(r) for r in rollouts]
            clusters = cluster_by_bleu(sources, config.dedup_threshold)
            divs = diversity_reward(clusters.densities)
            for r, r_div in zip(rollouts, divs):
                checked += 1
                where = (rec["iteration"], rec["step"], r["rollout"])
                if challenger_format_reward(r["raw_output"]) != r["r_format"]:
                    mismatches.append(("r_format",) + where)
                if abs(r_div - r["r_div"]) > 1e-12:
                    mismatches.append(("r_div",) + where)
                if "r_diff_pair" in r:
                    accs = r.get("acc", [])
                    for a, d in zip(accs, r["r_diff_pair"]):
                        if abs(difficulty_reward(a) - d) > 1e-12:
                            mismatches.append(("r_diff",) + where)
                total = (config.weights.lam_format * r["r_format"]
                         + config.weights.lam_valid * r["r_valid"]
                         + config.weights.lam_diff * r["r_diff"]
                         + config.weights.lam_div * r["r_div"])
                if abs(total - r["r_total"]) > 1e-12:
                    mismatches.append(("r_total",) + where)
    verify = reverify_run(run_dir)
    return {"rollouts_checked": checked, "reward_mismatches": mismatches,
            "keys_checked": verify["checked"],
            "key_mismatches": verify["mismatches"]}


def reverify_run(run_dir) -> dict:
    """Re-execute every banked question's program and check the answer key
    still points at the byte-identical pairing. Returns mismatch stats."""
    run_dir = Path(run_dir)
    config = LoopConfig.from_json((run_dir / "config.json").read_text("utf-8"))
    store = ImageStore(run_dir / "images")
    checked = 0
    mismatches = 0
    for qpath in sorted(run_dir.glob("iter_*/questions.jsonl")):
        for rec in _load_jsonl(qpath):
            task = task_from_record(rec)
            report = parse_program(task.program_source,
                                   n_arg_sets=config.n_arg_sets)
            if not report.ok:
                mismatches += 1
                checked += 1
                continue
            program = report.program
            original = store.get(task.original)
            expected = execute_all(program, original, config.limits)
            j = task.probe_index
            if task.kind == "type0":
                # option slot correct_option shows edited[j]
                ok = task.edited[task.correct_option] == expected[j].digest()
            else:
                # displayed target is first; correct option renders arg set j
                from .lang import render_param_set
                ok = (task.edited[0] == expected[j].digest()
                      and task.options[task.correct_option]
                      == render_param_set(program.arg_sets[j]))
            checked += 1
            mismatches += 0 if ok else 1
    return {"checked": checked, "mismatches": mismatches}
