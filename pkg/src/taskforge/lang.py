"""Line-oriented image-transformation language: lexer, parser, canonical renderer.

The language is deliberately closed: a fixed whitelist of operations, literal
arguments only (no arithmetic, no loops, no I/O), and a rigid three-section
layout::

    param NAME          # zero or more parameter declarations
    step OP ARG ...     # one or more pipeline steps
    args k=v, k2=v2     # exactly N argument-binding lines (default 4)

Step arguments are literals (integers, decimals with at most four fractional
digits, bracketed integer lists, or the direction keywords ``h``/``v``) or
``$name`` references to declared parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

Value = Union[int, Fraction, tuple, str]

MAX_SOURCE_CHARS = 2000
MAX_STEPS = 16
DEFAULT_ARG_SETS = 4

DIRECTION_KEYWORDS = ("h", "v")

# op name -> tuple of argument kinds: "num" (int or decimal), "int",
# "ints" (integer list), "dir" (h/v keyword)
OP_SIGNATURES: dict[str, tuple[str, ...]] = {
    "rotate": ("num",),
    "flip": ("dir",),
    "crop": ("int", "int", "int", "int"),
    "jigsaw": ("int", "ints"),
    "draw_rect": ("int", "int", "int", "int", "int"),
    "brightness": ("num",),
    "contrast": ("num",),
    "grayscale": (),
    "invert": (),
    "pixelate": ("int",),
    "resize": ("int", "int"),
}

ERROR_CATEGORIES = (
    "lex",
    "syntax",
    "unknown-op",
    "arity",
    "unresolved-param",
    "duplicate-args",
    "comment-present",
    "length-exceeded",
)


@dataclass(frozen=True)
class Token:
    kind: str  # "ident" | "number" | "punct" | "other"
    text: str
    pos: int


@dataclass(frozen=True)
class Lit:
    value: Value


@dataclass(frozen=True)
class Ref:
    name: str


Expr = Union[Lit, Ref]


@dataclass(frozen=True)
class Step:
    op: str
    args: tuple


@dataclass(frozen=True)
class ParamSet:
    bindings: tuple  # ((name, value), ...) in declaration order

    def value(self, name: str) -> Value:
        for k, v in self.bindings:
            if k == name:
                return v
        raise KeyError(name)

    def as_dict(self) -> dict:
        return dict(self.bindings)


@dataclass(frozen=True)
class Program:
    params: tuple
    steps: tuple
    arg_sets: tuple
    source_span: tuple = (0, 0)


@dataclass(frozen=True)
class ParseError:
    pos: int
    category: str
    message: str


@dataclass
class ParseReport:
    program: Optional[Program] = None
    errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.program is not None and not self.errors


_IDENT_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_IDENT_CONT = _IDENT_START | set("0123456789")
_PUNCT = set("$=,[]")


def tokenize(source: str) -> list[Token]:
    """Total lexer: whitespace separates tokens, unknown bytes pass through
    as single-character tokens."""
    toks: list[Token] = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c in " \t\r\n":
            i += 1
            continue
        start = i
        if c in _IDENT_START:
            i += 1
            while i < n and source[i] in _IDENT_CONT:
                i += 1
            toks.append(Token("ident", source[start:i], start))
        elif c.isdigit() or (c == "-" and i + 1 < n and source[i + 1].isdigit()):
            i += 1
            while i < n and source[i].isdigit():
                i += 1
            if i < n and source[i] == "." and i + 1 < n and source[i + 1].isdigit():
                i += 1
                while i < n and source[i].isdigit():
                    i += 1
            toks.append(Token("number", source[start:i], start))
        elif c in _PUNCT:
            toks.append(Token("punct", c, start))
            i += 1
        else:
            toks.append(Token("other", c, start))
            i += 1
    return toks


def canon_value(v: Value) -> Value:
    """Normalize a literal: whole-valued decimals collapse to ints."""
    if isinstance(v, Fraction):
        if v.denominator == 1:
            return int(v)
        return v
    return v


def _parse_number_token(tok: Token, errors: list) -> Optional[Value]:
    text = tok.text
    if "." in text:
        frac = text.split(".", 1)[1]
        if len(frac) > 4:
            errors.append(ParseError(tok.pos, "lex",
                                     f"decimal {text!r} has more than 4 fractional digits"))
            return None
        return canon_value(Fraction(text))
    return int(text)


class _LineParser:
    """Token-cursor over one logical line."""

    def __init__(self, toks: list, line_end: int, errors: list):
        self.toks = toks
        self.i = 0
        self.line_end = line_end
        self.errors = errors

    def peek(self) -> Optional[Token]:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self) -> Optional[Token]:
        t = self.peek()
        if t is not None:
            self.i += 1
        return t

    def fail(self, pos: int, category: str, message: str) -> None:
        self.errors.append(ParseError(pos, category, message))

    def expect_ident(self, what: str) -> Optional[Token]:
        t = self.next()
        if t is None or t.kind != "ident":
            self.fail(t.pos if t else self.line_end, "syntax", f"expected {what}")
            return None
        return t

    def parse_literal(self) -> Optional[Value]:
        t = self.next()
        if t is None:
            self.fail(self.line_end, "syntax", "expected a literal")
            return None
        if t.kind == "number":
            return _parse_number_token(t, self.errors)
        if t.kind == "ident" and t.text in DIRECTION_KEYWORDS:
            return t.text
        if t.text == "[":
            items = []
            while True:
                nt = self.next()
                if nt is None:
                    self.fail(self.line_end, "syntax", "unterminated list literal")
                    return None
                if nt.text == "]" and not items:
                    break
                if nt.kind != "number" or "." in nt.text:
                    self.fail(nt.pos, "syntax", "list literals hold integers only")
                    return None
                items.append(int(nt.text))
                sep = self.next()
                if sep is None:
                    self.fail(self.line_end, "syntax", "unterminated list literal")
                    return None
                if sep.text == "]":
                    break
                if sep.text != ",":
                    self.fail(sep.pos, "syntax", "expected ',' or ']' in list")
                    return None
            return tuple(items)
        self.fail(t.pos, "syntax", f"unexpected token {t.text!r}")
        return None

    def parse_expr(self) -> Optional[Expr]:
        t = self.peek()
        if t is not None and t.text == "$":
            self.next()
            name = self.expect_ident("parameter name after '$'")
            return Ref(name.text) if name else None
        lit = self.parse_literal()
        return Lit(lit) if lit is not None else None


def _literal_kind(v: Value) -> str:
    if isinstance(v, int):
        return "int"
    if isinstance(v, Fraction):
        return "dec"
    if isinstance(v, tuple):
        return "ints"
    return "dir"


def _kind_matches(expected: str, actual: str) -> bool:
    if expected == "num":
        return actual in ("int", "dec")
    return expected == actual


def parse_program(source: str,
                  n_arg_sets: int = DEFAULT_ARG_SETS,
                  max_steps: int = MAX_STEPS,
                  max_chars: int = MAX_SOURCE_CHARS) -> ParseReport:
    """Parse a full program. Total: every input yields a report, never an
    exception; all detectable errors are collected."""
    errors: list = []
    if len(source) > max_chars:
        errors.append(ParseError(max_chars, "length-exceeded",
                                 f"source exceeds {max_chars} characters"))
    hash_at = source.find("#")
    if hash_at >= 0:
        errors.append(ParseError(hash_at, "comment-present",
                                 "comments are not allowed"))

    params: list[str] = []
    steps: list[Step] = []
    arg_lines: list[tuple[int, list]] = []  # (pos, [(name_tok, value)])
    section = 0  # 0=params, 1=steps, 2=args

    offset = 0
    for raw in source.split("\n"):
        line_start = offset
        offset += len(raw) + 1
        toks = tokenize(raw)
        toks = [Token(t.kind, t.text, t.pos + line_start) for t in toks]
        if not toks:
            continue
        head = toks[0]
        lp = _LineParser(toks[1:], line_start + len(raw), errors)
        if head.text == "param":
            if section > 0:
                errors.append(ParseError(head.pos, "syntax",
                                         "param lines must precede steps and args"))
            name = lp.expect_ident("parameter name")
            if name is not None:
                if name.text in params:
                    errors.append(ParseError(name.pos, "syntax",
                                             f"duplicate param {name.text!r}"))
                else:
                    params.append(name.text)
            if lp.peek() is not None:
                errors.append(ParseError(lp.peek().pos, "syntax",
                                         "trailing tokens after param declaration"))
        elif head.text == "step":
            if section > 1:
                errors.append(ParseError(head.pos, "syntax",
                                         "step lines must precede args lines"))
            section = max(section, 1)
            op_tok = lp.expect_ident("operation name")
            if op_tok is None:
                continue
            op = op_tok.text
            if op not in OP_SIGNATURES:
                errors.append(ParseError(op_tok.pos, "unknown-op",
                                         f"unknown operation {op!r}"))
                continue
            exprs: list[Expr] = []
            bad = False
            while lp.peek() is not None:
                e = lp.parse_expr()
                if e is None:
                    bad = True
                    break
                exprs.append(e)
            if bad:
                continue
            sig = OP_SIGNATURES[op]
            if len(exprs) != len(sig):
                errors.append(ParseError(op_tok.pos, "arity",
                                         f"{op} takes {len(sig)} arguments, got {len(exprs)}"))
                continue
            for expected, e in zip(sig, exprs):
                if isinstance(e, Lit) and not _kind_matches(expected, _literal_kind(e.value)):
                    errors.append(ParseError(op_tok.pos, "arity",
                                             f"{op}: argument kind mismatch"))
            steps.append(Step(op, tuple(exprs)))
        elif head.text == "args":
            section = 2
            bindings: list = []
            while True:
                name = lp.expect_ident("binding name")
                if name is None:
                    break
                eq = lp.next()
                if eq is None or eq.text != "=":
                    errors.append(ParseError(name.pos, "syntax",
                                             "expected '=' in binding"))
                    break
                val = lp.parse_literal()
                if val is None:
                    break
                bindings.append((name, val))
                sep = lp.next()
                if sep is None:
                    arg_lines.append((head.pos, bindings))
                    break
                if sep.text != ",":
                    errors.append(ParseError(sep.pos, "syntax",
                                             "expected ',' between bindings"))
                    break
        else:
            errors.append(ParseError(head.pos, "syntax",
                                     f"unexpected line start {head.text!r}"))

    if not steps:
        errors.append(ParseError(0, "syntax", "program has no steps"))
    if len(steps) > max_steps:
        errors.append(ParseError(0, "length-exceeded",
                                 f"more than {max_steps} steps"))

    declared = set(params)
    for st in steps:
        for e in st.args:
            if isinstance(e, Ref) and e.name not in declared:
                errors.append(ParseError(0, "unresolved-param",
                                         f"'${e.name}' is not declared"))

    if len(arg_lines) != n_arg_sets:
        errors.append(ParseError(0, "syntax",
                                 f"expected {n_arg_sets} args lines, got {len(arg_lines)}"))

    arg_sets: list[ParamSet] = []
    for pos, bindings in arg_lines:
        names = [t.text for t, _ in bindings]
        if sorted(names) != sorted(params) or len(set(names)) != len(names):
            errors.append(ParseError(pos, "syntax",
                                     "args line must bind exactly the declared params"))
            continue
        ordered = tuple((p, canon_value(dict((t.text, v) for t, v in bindings)[p]))
                        for p in params)
        arg_sets.append(ParamSet(ordered))

    if len(arg_sets) == len(arg_lines):
        seen = set()
        for pos_bindings, ps in zip(arg_lines, arg_sets):
            key = tuple((k, str(canon_value(v))) for k, v in ps.bindings)
            if key in seen:
                errors.append(ParseError(pos_bindings[0], "duplicate-args",
                                         "duplicate parameter set"))
            seen.add(key)

    if errors:
        return ParseReport(None, errors)
    return ParseReport(Program(tuple(params), tuple(steps), tuple(arg_sets),
                               (0, len(source))), [])


def render_value(v: Value) -> str:
    v = canon_value(v)
    if isinstance(v, Fraction):
        # shortest exact decimal: scale to the smallest power-of-10 denominator
        k = 1
        while (v.numerator * 10 ** k) % v.denominator != 0:
            k += 1
        scaled = v.numerator * 10 ** k // v.denominator
        digits = str(abs(scaled)).rjust(k + 1, "0")
        sign = "-" if scaled < 0 else ""
        return f"{sign}{digits[:-k]}.{digits[-k:]}"
    if isinstance(v, tuple):
        return "[" + ",".join(str(x) for x in v) + "]"
    return str(v)


def _render_expr(e: Expr) -> str:
    if isinstance(e, Ref):
        return f"${e.name}"
    return render_value(e.value)


def render_param_set(ps: ParamSet) -> str:
    inner = ", ".join(f"{k}: {render_value(v)}" for k, v in ps.bindings)
    return "{" + inner + "}"


def render_canonical(program: Program) -> str:
    """Deterministic single-space rendering; bindings in declaration order."""
    lines = [f"param {p}" for p in program.params]
    for st in program.steps:
        parts = [f"step {st.op}"] + [_render_expr(e) for e in st.args]
        lines.append(" ".join(parts))
    for ps in program.arg_sets:
        body = ", ".join(f"{k}={render_value(v)}" for k, v in ps.bindings)
        lines.append(f"args {body}")
    return "\n".join(lines) + "\n"
