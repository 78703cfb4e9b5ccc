"""Multiple-choice task synthesis from execution results, and answer grading.

Two question kinds are built from one (program, original, edited-images)
triple: parameter-to-image ("which output does this argument set produce?")
and image-to-parameter ("which argument set produced this output?"). Answer
keys come from execution, never from a model.
"""

from __future__ import annotations

import functools
import random
import re
from dataclasses import dataclass
from importlib import resources

from . import seeding
from .imaging import RasterImage
from .lang import Program, render_canonical, render_param_set

TYPE0 = "type0"
TYPE1 = "type1"

OPTION_LETTERS = "ABCDEFGHIJ"

_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)
_BOXED_RE = re.compile(r"\\boxed\{([^{}]*)\}")


@functools.lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return resources.files("taskforge.templates").joinpath(f"{name}.txt").read_text("utf-8")


def extract_fenced_blocks(text: str) -> list:
    """Bodies of all triple-backtick fenced blocks, in order."""
    return [m.group(1) for m in _FENCE_RE.finditer(text)]


@dataclass
class VqaTask:
    kind: str
    original: str               # image ref (content digest)
    edited: list                # N image refs in presentation order
    program_source: str         # canonical text
    probe_index: int            # j of the probed (arg set, image) pair
    options: list               # option payload strings in shuffled order
    correct_option: int
    rendered_prompt: str
    shuffle_seed: int

    @property
    def n_options(self) -> int:
        return len(self.options)

    @property
    def correct_letter(self) -> str:
        return OPTION_LETTERS[self.correct_option]

    def image_refs(self) -> list:
        return [self.original] + list(self.edited)


@dataclass(frozen=True)
class GradeResult:
    formatted: int
    extracted: str | None
    correct: int


def _options_block(payloads) -> str:
    return "\n".join(f"{OPTION_LETTERS[i]}. {p}" for i, p in enumerate(payloads))


def _render_type0_prompt(source: str, arg_chosen: str, n: int) -> str:
    if n == 4:
        return (load_template("type0")
                .replace("{code_str}", source.rstrip("\n"))
                .replace("{arg_chosen}", arg_chosen))
    labels = [f"image_{i + 1}" for i in range(n)]
    base = load_template("type0").replace("{code_str}", source.rstrip("\n")) \
                                 .replace("{arg_chosen}", arg_chosen)
    return re.sub(r"A\. image_1.*image_4", _options_block(labels), base,
                  flags=re.DOTALL)


def _render_type1_prompt(source: str, arg_payloads, n: int) -> str:
    base = load_template("type1").replace("{code_str}", source.rstrip("\n"))
    if n == 4:
        for i, payload in enumerate(arg_payloads):
            base = base.replace("{arg_%d}" % (i + 1), payload)
        return base
    return re.sub(r"A\. \{arg_1\}.*\{arg_4\}", _options_block(arg_payloads),
                  base, flags=re.DOTALL)


def synth_type0(program: Program, original: RasterImage, edited,
                probe_index: int, seed: int) -> VqaTask:
    """Candidate images are the N outputs under a seeded permutation; the
    correct option is the presentation slot holding output ``probe_index``."""
    n = len(program.arg_sets)
    if len(edited) != n:
        raise ValueError(f"expected {n} edited images, got {len(edited)}")
    if not 0 <= probe_index < n:
        raise ValueError("probe index out of range")
    rng = random.Random(seeding.derive_seed(seed, "shuffle", TYPE0))
    perm = list(range(n))
    rng.shuffle(perm)
    presentation = [edited[perm[slot]].digest() for slot in range(n)]
    correct = perm.index(probe_index)
    source = render_canonical(program)
    arg_chosen = render_param_set(program.arg_sets[probe_index])
    prompt = _render_type0_prompt(source, arg_chosen, n)
    return VqaTask(TYPE0, original.digest(), presentation, source, probe_index,
                   [f"image_{i + 1}" for i in range(n)], correct, prompt, seed)


def synth_type1(program: Program, original: RasterImage, edited,
                probe_index: int, seed: int) -> VqaTask:
    """The probed output is displayed first (image_1); options are the N
    argument-set renderings under a seeded permutation."""
    n = len(program.arg_sets)
    if len(edited) != n:
        raise ValueError(f"expected {n} edited images, got {len(edited)}")
    if not 0 <= probe_index < n:
        raise ValueError("probe index out of range")
    rng = random.Random(seeding.derive_seed(seed, "shuffle", TYPE1))
    rest = [i for i in range(n) if i != probe_index]
    rng.shuffle(rest)
    presentation = [edited[probe_index].digest()] + [edited[i].digest() for i in rest]
    perm = list(range(n))
    rng.shuffle(perm)
    payloads = [render_param_set(program.arg_sets[perm[slot]]) for slot in range(n)]
    correct = perm.index(probe_index)
    source = render_canonical(program)
    prompt = _render_type1_prompt(source, payloads, n)
    return VqaTask(TYPE1, original.digest(), presentation, source, probe_index,
                   payloads, correct, prompt, seed)


def synth_pair(program: Program, original: RasterImage, edited, seed: int):
    """One task of each kind sharing a seed-selected probe index."""
    n = len(program.arg_sets)
    rng = random.Random(seeding.derive_seed(seed, "probe"))
    j = rng.randrange(n)
    return (synth_type0(program, original, edited, j, seed),
            synth_type1(program, original, edited, j, seed))


def render_solver_prompt(task: VqaTask) -> str:
    return load_template("solver").replace("{question}", task.rendered_prompt)


def grade_answer(task: VqaTask, response: str) -> GradeResult:
    """Total grader. formatted=1 iff exactly one boxed token holding a valid
    option letter; a bare trailing letter grants accuracy only."""
    letters = OPTION_LETTERS[:task.n_options]
    boxed = _BOXED_RE.findall(response)
    extracted = None
    formatted = 0
    if boxed:
        content = boxed[-1].strip()
        if content in letters:
            extracted = content
            formatted = 1 if len(boxed) == 1 else 0
    else:
        words = re.findall(r"[A-Za-z]+", response)
        if words and len(words[-1]) == 1 and words[-1] in letters:
            extracted = words[-1]
    correct = 1 if extracted == task.correct_letter else 0
    return GradeResult(formatted, extracted, correct)


def task_to_record(task: VqaTask) -> dict:
    return {
        "kind": task.kind,
        "original": task.original,
        "edited": list(task.edited),
        "program_source": task.program_source,
        "probe_index": task.probe_index,
        "options": list(task.options),
        "correct_option": task.correct_option,
        "rendered_prompt": task.rendered_prompt,
        "shuffle_seed": task.shuffle_seed,
    }


def task_from_record(rec: dict) -> VqaTask:
    return VqaTask(rec["kind"], rec["original"], list(rec["edited"]),
                   rec["program_source"], rec["probe_index"],
                   list(rec["options"]), rec["correct_option"],
                   rec["rendered_prompt"], rec["shuffle_seed"])
