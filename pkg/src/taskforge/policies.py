"""Policy contract plus three implementations: a scripted challenger that
mutates queue examples into new programs, a noisy-oracle solver for
desk-scale runs, and an adapter for chat-completions HTTP endpoints."""

from __future__ import annotations

import base64
import json
import os
import random
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import requests

from . import seeding
from .lang import (Lit, ParamSet, Program, Ref, Step, parse_program,
                   render_canonical)
from .tasks import OPTION_LETTERS, VqaTask, extract_fenced_blocks, load_template, \
    render_solver_prompt

DEFAULT_SAMPLING = {
    "temperature": 1.0,
    "top_p": 1.0,
    "top_k": 40,
    "presence_penalty": 2.0,
    "max_tokens": 2048,
}


@dataclass
class PromptContext:
    role: str                      # "challenger" | "solver"
    rendered_prompt: str
    images: list = field(default_factory=list)       # image refs
    image_bytes: Optional[list] = None               # PNG payloads, same order
    sampling: dict = field(default_factory=lambda: dict(DEFAULT_SAMPLING))
    stream_seed: int = 0
    image_summary: Optional[dict] = None             # dims + mean color
    n_options: Optional[int] = None                  # scripted-solver metadata
    answer_key: Optional[str] = None


@dataclass
class PolicyResponse:
    text: str
    latency: float = 0.0
    attempts: int = 1


@dataclass
class LearnBatch:
    role: str
    iteration: int
    items: list = field(default_factory=list)  # {context_ref, response, reward, truth}


class PolicyError(Exception):
    def __init__(self, kind: str, message: str, attempts: int = 1):
        super().__init__(message)
        self.kind = kind
        self.attempts = attempts


def policy_generate(policy, context: PromptContext) -> PolicyResponse:
    return policy.generate(context)


def solver_context(task: VqaTask, stream_seed: int, store=None) -> PromptContext:
    image_bytes = None
    refs = task.image_refs()
    if store is not None:
        image_bytes = [store.path(r).read_bytes() for r in refs]
    return PromptContext(
        role="solver",
        rendered_prompt=render_solver_prompt(task),
        images=refs,
        image_bytes=image_bytes,
        stream_seed=stream_seed,
        n_options=task.n_options,
        answer_key=task.correct_letter,
    )


def challenger_context(example_sources, image_ref: str, image_summary: dict,
                       stream_seed: int, image_png: Optional[bytes] = None) -> PromptContext:
    tpl = load_template("challenger")
    prompt = tpl.replace("{code_str1}", example_sources[0].rstrip("\n"))
    prompt = prompt.replace("{code_str2}",
                            example_sources[1 % len(example_sources)].rstrip("\n"))
    return PromptContext(
        role="challenger",
        rendered_prompt=prompt,
        images=[image_ref],
        image_bytes=[image_png] if image_png is not None else None,
        stream_seed=stream_seed,
        image_summary=image_summary,
    )


# ---------------------------------------------------------------------------
# Scripted challenger

_FACTOR_TABLE = [Fraction(k, 100) for k in
                 (40, 55, 70, 85, 115, 130, 150, 170, 190)]
_PIXELATE_TABLE = [2, 3, 4, 5, 6, 8, 10, 12]
_EXTRA_STEPS = (
    Step("invert", ()),
    Step("grayscale", ()),
    Step("flip", (Lit("h"),)),
    Step("flip", (Lit("v"),)),
    Step("brightness", (Lit(Fraction(13, 10)),)),
    Step("contrast", (Lit(Fraction(7, 10)),)),
    Step("pixelate", (Lit(8),)),
)


def _param_roles(prog: Program) -> dict:
    roles = {}
    for st in prog.steps:
        for pos, e in enumerate(st.args):
            if isinstance(e, Ref) and e.name not in roles:
                roles[e.name] = (st.op, pos)
    return roles


def _distinct_permutations(n: int, count: int, rng: random.Random) -> list:
    seen = []
    guard = 0
    while len(seen) < count and guard < 200:
        p = list(range(n))
        rng.shuffle(p)
        t = tuple(p)
        if t not in seen:
            seen.append(t)
        guard += 1
    # n*n >= 4 gives at least 24 permutations, so this always fills
    return seen


def _mutate_arg_sets(prog: Program, rng: random.Random) -> list:
    n_sets = len(prog.arg_sets)
    new_vals = [dict(ps.bindings) for ps in prog.arg_sets]
    handled: set = set()

    for st in prog.steps:
        if st.op in ("crop", "draw_rect"):
            names = [e.name for e in st.args[:4] if isinstance(e, Ref)]
            if len(names) == 4 and not (set(names) & handled):
                x0s = rng.sample(range(0, 400, 10), n_sets)
                for i in range(n_sets):
                    span_x = rng.randrange(300, 560, 10)
                    span_y = rng.randrange(300, 560, 10)
                    y0 = rng.randrange(0, 1000 - span_y, 10)
                    new_vals[i][names[0]] = x0s[i]
                    new_vals[i][names[1]] = y0
                    new_vals[i][names[2]] = x0s[i] + span_x
                    new_vals[i][names[3]] = y0 + span_y
                handled.update(names)
            if st.op == "draw_rect" and len(st.args) == 5 \
                    and isinstance(st.args[4], Ref) and st.args[4].name not in handled:
                wname = st.args[4].name
                for i in range(n_sets):
                    new_vals[i][wname] = rng.choice([3, 4, 5, 6, 7])
                handled.add(wname)

    roles = _param_roles(prog)
    for name in prog.params:
        if name in handled:
            continue
        op, pos = roles.get(name, (None, None))
        if op == "rotate":
            angles = rng.sample(range(5, 360, 5), n_sets)
            for i in range(n_sets):
                new_vals[i][name] = angles[i]
        elif op in ("brightness", "contrast"):
            factors = rng.sample(_FACTOR_TABLE, n_sets)
            for i in range(n_sets):
                new_vals[i][name] = factors[i]
        elif op == "pixelate":
            blocks = rng.sample(_PIXELATE_TABLE, n_sets)
            for i in range(n_sets):
                new_vals[i][name] = blocks[i]
        elif op == "resize":
            dims = rng.sample(range(128, 496, 16), n_sets)
            for i in range(n_sets):
                new_vals[i][name] = dims[i]
        elif op == "jigsaw" and pos == 1:
            n_grid = None
            for st in prog.steps:
                if st.op == "jigsaw":
                    first = st.args[0]
                    if isinstance(first, Lit):
                        n_grid = first.value
                    elif isinstance(first, Ref):
                        n_grid = new_vals[0].get(first.name)
                    break
            if isinstance(n_grid, int) and n_grid >= 2:
                perms = _distinct_permutations(n_grid * n_grid, n_sets, rng)
                for i in range(n_sets):
                    new_vals[i][name] = perms[i % len(perms)]
        elif op == "flip":
            for i in range(n_sets):
                new_vals[i][name] = rng.choice(("h", "v"))
        # jigsaw grid size and unknown roles keep their base values

    return [ParamSet(tuple((p, vals[p]) for p in prog.params))
            for vals in new_vals]


def _rename_params(prog: Program, taken) -> Program:
    mapping = {}
    for p in prog.params:
        new = p
        while new in taken or new in mapping.values():
            new += "2"
        mapping[p] = new

    def fix(e):
        return Ref(mapping[e.name]) if isinstance(e, Ref) else e

    steps = tuple(Step(s.op, tuple(fix(a) for a in s.args)) for s in prog.steps)
    arg_sets = tuple(ParamSet(tuple((mapping[k], v) for k, v in ps.bindings))
                     for ps in prog.arg_sets)
    return Program(tuple(mapping[p] for p in prog.params), steps, arg_sets)


def _concat_programs(a: Program, b: Program) -> Program:
    b = _rename_params(b, set(a.params))
    params = a.params + b.params
    steps = a.steps + b.steps
    arg_sets = tuple(ParamSet(sa.bindings + sb.bindings)
                     for sa, sb in zip(a.arg_sets, b.arg_sets))
    return Program(params, steps, arg_sets)


def _distinct_sets(arg_sets) -> bool:
    keys = {tuple((k, str(v)) for k, v in ps.bindings) for ps in arg_sets}
    return len(keys) == len(arg_sets)


class ScriptedChallenger:
    """Deterministic challenger double: jitters parameters of the in-context
    examples, occasionally inserts a whitelisted op, and (when enabled)
    concatenates two examples into a compound pipeline."""

    def __init__(self, compose: bool = True, insert_prob: float = 0.35,
                 compose_prob: float = 0.5, max_steps: int = 16):
        self.compose = compose
        self.insert_prob = insert_prob
        self.compose_prob = compose_prob
        self.max_steps = max_steps

    def _mutate(self, prog: Program, rng: random.Random) -> Program:
        for _ in range(5):
            sets = _mutate_arg_sets(prog, rng)
            if _distinct_sets(sets):
                return Program(prog.params, prog.steps, tuple(sets))
        return prog

    def generate(self, ctx: PromptContext) -> PolicyResponse:
        start = time.monotonic()
        rng = random.Random(seeding.derive_seed(ctx.stream_seed, "scripted-challenger"))
        examples = []
        for block in extract_fenced_blocks(ctx.rendered_prompt):
            report = parse_program(block)
            if report.ok:
                examples.append(report.program)
        if not examples:
            from .seeds import SEED_ROTATION
            examples = [parse_program(SEED_ROTATION).program]

        base = rng.choice(examples)
        prog = self._mutate(base, rng)
        if self.compose and len(examples) >= 2 and rng.random() < self.compose_prob:
            others = [e for e in examples if e is not base] or examples
            other = self._mutate(rng.choice(others), rng)
            if len(prog.steps) + len(other.steps) <= self.max_steps:
                candidate = _concat_programs(prog, other)
                if len(render_canonical(candidate)) <= 2000:
                    prog = candidate
        if rng.random() < self.insert_prob and len(prog.steps) < self.max_steps:
            prog = Program(prog.params, prog.steps + (rng.choice(_EXTRA_STEPS),),
                           prog.arg_sets)

        text = ("<thinking>compose variations of the given examples"
                "</thinking>\n```\n" + render_canonical(prog) + "```\n")
        return PolicyResponse(text, time.monotonic() - start)

    def learn(self, batch: LearnBatch) -> None:
        pass

    def end_iteration(self, iteration: int) -> None:
        pass


# ---------------------------------------------------------------------------
# Noisy-oracle solver

class NoisyOracleSolver:
    """Answers correctly with probability p, otherwise picks a uniform wrong
    letter; p rises by `increment` (capped) at each iteration boundary."""

    def __init__(self, p: float, increment: float = 0.0, cap: float = 1.0):
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        self.p = p
        self.increment = increment
        self.cap = cap

    def generate(self, ctx: PromptContext) -> PolicyResponse:
        if ctx.answer_key is None or ctx.n_options is None:
            raise PolicyError("malformed-response",
                              "noisy oracle needs answer metadata in the context")
        rng = random.Random(seeding.derive_seed(ctx.stream_seed, "noisy-oracle"))
        letters = OPTION_LETTERS[:ctx.n_options]
        if rng.random() < self.p:
            letter = ctx.answer_key
        else:
            wrong = [c for c in letters if c != ctx.answer_key]
            letter = rng.choice(wrong)
        return PolicyResponse("\\boxed{%s}" % letter)

    def learn(self, batch: LearnBatch) -> None:
        pass

    def end_iteration(self, iteration: int) -> None:
        self.p = min(self.cap, self.p + self.increment)


def noisy_oracle_solve(task: VqaTask, p: float, seed: int) -> str:
    return NoisyOracleSolver(p).generate(solver_context(task, seed)).text


# ---------------------------------------------------------------------------
# Remote chat-completions adapter

@dataclass
class RemoteConfig:
    base_url: str
    path: str = "/v1/chat/completions"
    model: str = "default"
    auth_env: Optional[str] = None   # env var holding the bearer token
    max_attempts: int = 3
    backoff_base: float = 1.0
    request_timeout: float = 30.0
    transcript_path: Optional[str] = None


def _image_part(png: bytes) -> dict:
    data = base64.b64encode(png).decode("ascii")
    return {"type": "image_url", "url": f"data:image/png;base64,{data}"}


def remote_generate(config: RemoteConfig, ctx: PromptContext) -> PolicyResponse:
    """POST to a chat-completions endpoint with capped exponential backoff."""
    content = [{"type": "text", "text": ctx.rendered_prompt}]
    for png in ctx.image_bytes or []:
        content.append(_image_part(png))
    body = {
        "model": config.model,
        "temperature": ctx.sampling.get("temperature", 1.0),
        "top_p": ctx.sampling.get("top_p", 1.0),
        "max_tokens": ctx.sampling.get("max_tokens", 2048),
        "messages": [{"role": "user", "content": content}],
    }
    headers = {"Content-Type": "application/json"}
    if config.auth_env and os.environ.get(config.auth_env):
        headers["Authorization"] = f"Bearer {os.environ[config.auth_env]}"

    url = config.base_url.rstrip("/") + config.path
    start = time.monotonic()
    last_kind, last_msg = "policy-unavailable", "no attempts made"
    for attempt in range(1, config.max_attempts + 1):
        try:
            resp = requests.post(url, json=body, headers=headers,
                                 timeout=config.request_timeout)
            if resp.status_code != 200:
                _log_transcript(config, body, resp.text)
                last_kind, last_msg = "http-status", f"HTTP {resp.status_code}"
                raise PolicyError(last_kind, last_msg)
            try:
                payload = resp.json()
            except ValueError as e:
                _log_transcript(config, body, resp.text)
                raise PolicyError("malformed-json", str(e), attempt)
            _log_transcript(config, body, payload)
            choices = payload.get("choices") or []
            if not choices:
                raise PolicyError("no-choices", "response carries no choices", attempt)
            text = choices[0].get("message", {}).get("content")
            if not isinstance(text, str):
                raise PolicyError("malformed-json", "missing message content", attempt)
            return PolicyResponse(text, time.monotonic() - start, attempt)
        except PolicyError as e:
            if e.kind in ("malformed-json", "no-choices"):
                raise
        except requests.Timeout:
            last_kind, last_msg = "timeout", "request timed out"
        except requests.RequestException as e:
            last_kind, last_msg = "policy-unavailable", str(e)
        if attempt < config.max_attempts:
            time.sleep(config.backoff_base * (2 ** (attempt - 1)))
    raise PolicyError(last_kind, f"exhausted {config.max_attempts} attempts: {last_msg}",
                      config.max_attempts)


def _log_transcript(config: RemoteConfig, request_body, response_payload) -> None:
    if not config.transcript_path:
        return
    with open(config.transcript_path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps({"request": request_body,
                             "response": response_payload},
                            sort_keys=True) + "\n")


class RemotePolicy:
    """Policy over a remote endpoint; learn batches are appended to a JSONL
    file for an external trainer."""

    def __init__(self, config: RemoteConfig, learn_log: Optional[str] = None):
        self.config = config
        self.learn_log = learn_log

    def generate(self, ctx: PromptContext) -> PolicyResponse:
        return remote_generate(self.config, ctx)

    def learn(self, batch: LearnBatch) -> None:
        if self.learn_log:
            with open(self.learn_log, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"role": batch.role,
                                     "iteration": batch.iteration,
                                     "items": batch.items}, sort_keys=True) + "\n")

    def end_iteration(self, iteration: int) -> None:
        pass
