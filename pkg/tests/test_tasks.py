import random
import re

from taskforge.imaging import ExecLimits, execute_all
from taskforge.lang import parse_program, render_param_set
from taskforge.tasks import (GradeResult, extract_fenced_blocks, grade_answer,
                             render_solver_prompt, synth_pair, synth_type0,
                             synth_type1, task_from_record, task_to_record)

import util

ROTATE_SRC = ("param angle\nstep rotate $angle\n"
              "args angle=90\nargs angle=180\nargs angle=270\nargs angle=15\n")


def _fixture(seed=0):
    rng = random.Random(101)
    prog = parse_program(ROTATE_SRC).program
    img = util.random_image(rng, 48, 48)
    edited = execute_all(prog, img, ExecLimits())
    return prog, img, edited


def test_type0_bookkeeping():
    prog, img, edited = _fixture()
    for seed in range(20):
        for j in range(4):
            t = synth_type0(prog, img, edited, j, seed)
            assert t.n_options == 4
            assert t.options == ["image_1", "image_2", "image_3", "image_4"]
            # the correct slot holds the probed output image
            assert t.edited[t.correct_option] == edited[j].digest()
            assert t.original == img.digest()


def test_type1_bookkeeping():
    prog, img, edited = _fixture()
    for seed in range(20):
        for j in range(4):
            t = synth_type1(prog, img, edited, j, seed)
            # probed output displayed first; correct option renders arg set j
            assert t.edited[0] == edited[j].digest()
            assert t.options[t.correct_option] == \
                render_param_set(prog.arg_sets[j])
            assert sorted(t.options) == sorted(
                render_param_set(ps) for ps in prog.arg_sets)


def test_prompt_structure():
    prog, img, edited = _fixture()
    t0 = synth_type0(prog, img, edited, 1, 5)
    t1 = synth_type1(prog, img, edited, 1, 5)
    for t in (t0, t1):
        assert len(extract_fenced_blocks(t.rendered_prompt)) == 1
        for letter in "ABCD":
            assert re.search(rf"^{letter}\. ", t.rendered_prompt, re.M)
    assert "\\boxed{}" in render_solver_prompt(t0)


def test_same_inputs_same_task():
    prog, img, edited = _fixture()
    a = synth_type1(prog, img, edited, 2, 9)
    b = synth_type1(prog, img, edited, 2, 9)
    assert task_to_record(a) == task_to_record(b)


def test_pair_shares_probe():
    prog, img, edited = _fixture()
    seen = set()
    for seed in range(40):
        t0, t1 = synth_pair(prog, img, edited, seed)
        assert t0.probe_index == t1.probe_index
        seen.add(t0.probe_index)
    assert len(seen) > 1  # distinct seeds reach distinct probes


def test_self_check_by_reexecution():
    prog, img, edited = _fixture()
    for seed in range(10):
        t0, t1 = synth_pair(prog, img, edited, seed)
        redone = execute_all(prog, img, ExecLimits())
        j = t0.probe_index
        assert t0.edited[t0.correct_option] == redone[j].digest()
        assert t1.edited[0] == redone[j].digest()
        # exactly one option is execution-consistent
        matches = [k for k in range(4)
                   if t1.options[k] == render_param_set(prog.arg_sets[j])]
        assert matches == [t1.correct_option]


def test_anti_positional_bias():
    prog, img, edited = _fixture()
    counts0 = [0] * 4
    counts1 = [0] * 4
    n = 10_000
    for seed in range(n):
        t0, t1 = synth_pair(prog, img, edited, seed)
        counts0[t0.correct_option] += 1
        counts1[t1.correct_option] += 1
    for c in counts0 + counts1:
        assert abs(c / n - 0.25) <= 0.02


def test_grade_answer_examples():
    prog, img, edited = _fixture()
    t = synth_type0(prog, img, edited, 0, 0)
    right = t.correct_letter
    wrong = next(c for c in "ABCD" if c != right)

    g = grade_answer(t, f"reasoning...\\boxed{{{right}}}")
    assert (g.formatted, g.correct) == (1, 1)

    g = grade_answer(t, f"The answer is {right}")
    assert (g.formatted, g.correct) == (0, 1)

    g = grade_answer(t, "\\boxed{E}")
    assert (g.formatted, g.correct) == (0, 0)

    g = grade_answer(t, f"\\boxed{{{wrong}}} no wait \\boxed{{{right}}}")
    assert g.formatted == 0  # two boxed tokens
    assert g.correct == 1    # last boxed wins extraction

    g = grade_answer(t, f"\\boxed{{{wrong}}}")
    assert (g.formatted, g.correct) == (1, 0)

    g = grade_answer(t, "")
    assert g == GradeResult(0, None, 0)

    # boxed present but invalid: no fallback to trailing letter
    g = grade_answer(t, f"\\boxed{{answer}} so {right}")
    assert (g.formatted, g.correct) == (0, 0)


def test_record_roundtrip():
    prog, img, edited = _fixture()
    t = synth_type1(prog, img, edited, 3, 77)
    assert task_from_record(task_to_record(t)) == t
