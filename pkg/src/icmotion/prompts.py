"""Structured prompt serialization and parsing.

Four prompt categories flow through the package: free-text descriptions,
edit instructions, parameterized-trajectory templates, and spatial-constraint
sentences. The last two have byte-exact serialized forms:

  {type:cubic_bezier, params:{start:[0.00,0.00], end:[5.22,3.77], P1:[-0.23,3.95], P2:[5.44,-0.17]}}

  A person walks from (0.00, 0.00) to (3.96, 6.19). Avoiding 3 obstacles at
  (2.47, 3.04, 0.44), ..., where r is the safety radius in meters.

Numbers always print with 2 decimals. Trajectory templates come in a minimal
flavor (smallest parameter set that pins down the curve) and a full flavor
that adds redundant fields (chord length and friends). The parser accepts an
exact minimal or exact full key set, nothing in between, and is whitespace
insensitive between tokens. Type tags serialize in ASCII ("quad_bezier");
the diacritic spelling ("quad_bézier") is accepted on input.

The template's (x, y) coordinate pairs name our ground-plane (x, z) axes;
the second template coordinate is the world Z value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .curves import (
    Arc,
    CubicBezier,
    Linear,
    ParamCurve,
    QuadBezier,
    Sinusoid,
    arc_from_endpoints,
    curve_end,
    curve_start,
)
from .errors import (
    CountMismatch,
    DegenerateTangent,
    NumberError,
    PromptSyntaxError,
    SchemaMismatch,
    UnknownCurveType,
)

QUANT_STEP = 0.01  # two printed decimals
QUANT_SLACK = 0.005 * math.sqrt(2.0)  # max positional error of a quantized 2-vector


class PromptKind(Enum):
    DESCRIPTION = "description"
    EDIT_INSTRUCTION = "edit_instruction"
    PARAM_TRAJECTORY = "param_trajectory"
    SPATIAL_CONSTRAINT = "spatial_constraint"


@dataclass
class PromptAST:
    """Parsed prompt. Which fields are populated depends on kind.

    PARAM_TRAJECTORY: curve_type (ASCII tag), params (canonical key order;
    values are float, (float, float), or "cw"/"ccw"), mode ("minimal"/"full").
    SPATIAL_CONSTRAINT: start, goal 2-tuples and obstacles as (x, z, r) triples.
    DESCRIPTION / EDIT_INSTRUCTION: raw text.
    """

    kind: PromptKind
    curve_type: str | None = None
    params: dict[str, object] = field(default_factory=dict)
    mode: str = "minimal"
    start: tuple[float, float] | None = None
    goal: tuple[float, float] | None = None
    obstacles: list[tuple[float, float, float]] = field(default_factory=list)
    text: str | None = None


MINIMAL_SCHEMAS: dict[str, tuple[str, ...]] = {
    "linear": ("start", "end", "speed"),
    "arc": ("start", "end", "center", "dir"),
    "quad_bezier": ("start", "end", "P1"),
    "cubic_bezier": ("start", "end", "P1", "P2"),
    "sinusoidal": ("start", "end", "A", "f"),
}

FULL_SCHEMAS: dict[str, tuple[str, ...]] = {
    "linear": ("start", "end", "speed", "chord_len"),
    "arc": ("start", "end", "center", "radius", "angle", "dir", "arc_len"),
    "quad_bezier": ("start", "end", "P1", "chord_len", "offset_ratio"),
    "cubic_bezier": ("start", "end", "P1", "P2", "chord_len"),
    "sinusoidal": ("start", "end", "A", "f", "chord_len"),
}

_VECTOR_KEYS = frozenset({"start", "end", "center", "P1", "P2"})
_DIR_VALUES = ("cw", "ccw")


# ------------------------------------------------------------- serialization


def _num(x: float) -> str:
    text = f"{float(x):.2f}"
    return "0.00" if text == "-0.00" else text


def _vec(p) -> str:
    return f"[{_num(p[0])},{_num(p[1])}]"


def _chord(a, b) -> float:
    return float(np.linalg.norm(np.asarray(b, dtype=np.float64) - np.asarray(a)))


def trajectory_params(c: ParamCurve, mode: str = "minimal") -> dict[str, object]:
    """Template parameters for a curve, in canonical key order.

    Full mode adds redundant fields. offset_ratio is the signed perpendicular
    offset of P1 from the chord as a fraction of chord length, positive to
    the left of start->end.
    """
    if mode not in ("minimal", "full"):
        raise ValueError(f"mode must be 'minimal' or 'full', got {mode!r}")
    start, end = curve_start(c), curve_end(c)
    if isinstance(c, Linear):
        out: dict[str, object] = {
            "start": tuple(start),
            "end": tuple(end),
            "speed": float(c.speed),
        }
    elif isinstance(c, Arc):
        out = {"start": tuple(start), "end": tuple(end), "center": tuple(c.center)}
        if mode == "full":
            out["radius"] = float(c.radius)
            out["angle"] = float(c.angle)
        out["dir"] = c.direction
        if mode == "full":
            out["arc_len"] = float(c.radius * c.angle)
        return out
    elif isinstance(c, QuadBezier):
        out = {"start": tuple(start), "end": tuple(end), "P1": tuple(c.p1)}
        if mode == "full":
            chord = _chord(start, end)
            if chord < 1e-12:
                raise DegenerateTangent("quadratic chord has zero length")
            d = end - start
            normal = np.array([-d[1], d[0]]) / chord
            out["chord_len"] = chord
            out["offset_ratio"] = float(np.dot(c.p1 - start, normal)) / chord
        return out
    elif isinstance(c, CubicBezier):
        out = {
            "start": tuple(start),
            "end": tuple(end),
            "P1": tuple(c.p1),
            "P2": tuple(c.p2),
        }
    elif isinstance(c, Sinusoid):
        out = {
            "start": tuple(start),
            "end": tuple(end),
            "A": float(c.amplitude),
            "f": float(c.frequency),
        }
    else:
        raise TypeError(f"not a curve: {type(c).__name__}")
    if mode == "full":
        out["chord_len"] = _chord(start, end)
    return out


def _curve_tag(c: ParamCurve) -> str:
    if isinstance(c, Linear):
        return "linear"
    if isinstance(c, Arc):
        return "arc"
    if isinstance(c, QuadBezier):
        return "quad_bezier"
    if isinstance(c, CubicBezier):
        return "cubic_bezier"
    if isinstance(c, Sinusoid):
        return "sinusoidal"
    raise TypeError(f"not a curve: {type(c).__name__}")


def ast_from_curve(c: ParamCurve, mode: str = "minimal") -> PromptAST:
    return PromptAST(
        kind=PromptKind.PARAM_TRAJECTORY,
        curve_type=_curve_tag(c),
        params=trajectory_params(c, mode),
        mode=mode,
    )


def serialize_trajectory_ast(ast: PromptAST) -> str:
    if ast.kind is not PromptKind.PARAM_TRAJECTORY:
        raise ValueError("expected a trajectory AST")
    pairs = []
    for key, value in ast.params.items():
        if key in _VECTOR_KEYS:
            pairs.append(f"{key}:{_vec(value)}")
        elif key == "dir":
            pairs.append(f"{key}:{value}")
        else:
            pairs.append(f"{key}:{_num(value)}")
    inner = ", ".join(pairs)
    return "{type:" + str(ast.curve_type) + ", params:{" + inner + "}}"


def serialize_trajectory(c: ParamCurve, mode: str = "minimal") -> str:
    """Curve -> template string, numbers at 2 decimals."""
    return serialize_trajectory_ast(ast_from_curve(c, mode))


def _point_str(p) -> str:
    return f"({_num(p[0])}, {_num(p[1])})"


def serialize_spatial_ast(ast: PromptAST) -> str:
    if ast.kind is not PromptKind.SPATIAL_CONSTRAINT:
        raise ValueError("expected a spatial AST")
    head = f"A person walks from {_point_str(ast.start)} to {_point_str(ast.goal)}."
    if not ast.obstacles:
        return head
    triples = ", ".join(
        f"({_num(x)}, {_num(z)}, {_num(r)})" for (x, z, r) in ast.obstacles
    )
    return (
        f"{head} Avoiding {len(ast.obstacles)} obstacles at {triples},"
        " where r is the safety radius in meters."
    )


def serialize_spatial(scene) -> str:
    """ObstacleScene -> constraint sentence. Zero obstacles drop the clause."""
    ast = PromptAST(
        kind=PromptKind.SPATIAL_CONSTRAINT,
        start=(float(scene.start[0]), float(scene.start[1])),
        goal=(float(scene.goal[0]), float(scene.goal[1])),
        obstacles=[
            (float(o.center[0]), float(o.center[1]), float(o.safety_radius))
            for o in scene.obstacles
        ],
    )
    return serialize_spatial_ast(ast)


# ------------------------------------------------------------------- parsing


class _Scanner:
    """Character cursor with whitespace skipping. All failures raise package
    prompt errors, never built-in exceptions, so arbitrary input is safe."""

    def __init__(self, s: str):
        self.s = s
        self.i = 0
        self.n = len(s)

    def skip_ws(self) -> None:
        while self.i < self.n and self.s[self.i] in " \t\r\n":
            self.i += 1

    def at_end(self) -> bool:
        self.skip_ws()
        return self.i >= self.n

    def peek(self) -> str:
        self.skip_ws()
        return self.s[self.i] if self.i < self.n else ""

    def expect(self, ch: str) -> None:
        self.skip_ws()
        if self.i < self.n and self.s[self.i] == ch:
            self.i += 1
            return
        raise PromptSyntaxError(f"expected {ch!r}", self.i)

    @staticmethod
    def _word_char(ch: str) -> bool:
        return (ch.isascii() and (ch.isalnum() or ch == "_")) or ch == "é"

    def word(self) -> tuple[str, int]:
        self.skip_ws()
        j = self.i
        while j < self.n and self._word_char(self.s[j]):
            j += 1
        if j == self.i:
            raise PromptSyntaxError("expected a word", self.i)
        w = self.s[self.i : j]
        pos = self.i
        self.i = j
        return w, pos

    def keyword(self, expected: str) -> None:
        w, pos = self.word()
        if w != expected:
            raise PromptSyntaxError(f"expected {expected!r}, got {w!r}", pos)

    def number(self) -> float:
        self.skip_ws()
        start = self.i
        j = self.i
        if j < self.n and self.s[j] == "-":
            j += 1
        d0 = j
        while j < self.n and self.s[j].isdigit() and self.s[j].isascii():
            j += 1
        if j == d0:
            raise NumberError(f"expected a number at position {start}")
        if j < self.n and self.s[j] == ".":
            j += 1
            d1 = j
            while j < self.n and self.s[j].isdigit() and self.s[j].isascii():
                j += 1
            if j == d1:
                raise NumberError(f"bare decimal point at position {start}")
        text = self.s[start:j]
        self.i = j
        value = float(text)
        if not math.isfinite(value):
            raise NumberError(f"non-finite literal {text!r}")
        return value

    def integer(self) -> int:
        self.skip_ws()
        start = self.i
        j = self.i
        while j < self.n and self.s[j].isdigit() and self.s[j].isascii():
            j += 1
        if j == start:
            raise PromptSyntaxError("expected a count", start)
        self.i = j
        return int(self.s[start:j])

    def vector(self) -> tuple[float, float]:
        self.expect("[")
        a = self.number()
        self.expect(",")
        b = self.number()
        self.expect("]")
        return (a, b)

    def require_end(self) -> None:
        if not self.at_end():
            raise PromptSyntaxError("trailing characters", self.i)


def _schema_for(tag: str, keys: list[str]) -> tuple[str, tuple[str, ...]]:
    key_set = set(keys)
    if len(key_set) != len(keys):
        dupes = sorted({k for k in keys if keys.count(k) > 1})
        raise SchemaMismatch(f"duplicate keys {dupes} for {tag}")
    if key_set == set(MINIMAL_SCHEMAS[tag]):
        return "minimal", MINIMAL_SCHEMAS[tag]
    if key_set == set(FULL_SCHEMAS[tag]):
        return "full", FULL_SCHEMAS[tag]
    minimal = set(MINIMAL_SCHEMAS[tag])
    missing = sorted(minimal - key_set)
    extra = sorted(key_set - set(FULL_SCHEMAS[tag]))
    raise SchemaMismatch(
        f"keys {sorted(key_set)} match neither the minimal nor full {tag} template"
        f" (missing from minimal: {missing}; unknown: {extra})"
    )


def parse_trajectory(s: str) -> PromptAST:
    """Template string -> trajectory AST. Whitespace between tokens is free.

    Raises PromptSyntaxError (with position) on structural damage,
    UnknownCurveType for a bad tag, SchemaMismatch for a key set that is
    neither exactly minimal nor exactly full (or a mistyped value), and
    NumberError for bad or non-finite numerals.
    """
    sc = _Scanner(s)
    sc.expect("{")
    sc.keyword("type")
    sc.expect(":")
    tag_raw, _ = sc.word()
    tag = tag_raw.replace("é", "e")
    if tag not in MINIMAL_SCHEMAS:
        raise UnknownCurveType(f"unknown curve type {tag_raw!r}")
    sc.expect(",")
    sc.keyword("params")
    sc.expect(":")
    sc.expect("{")
    keys: list[str] = []
    values: dict[str, object] = {}
    if sc.peek() != "}":
        while True:
            key, _ = sc.word()
            sc.expect(":")
            head = sc.peek()
            if head == "[":
                value: object = sc.vector()
            elif _Scanner._word_char(head) and not head.isdigit():
                value = sc.word()[0]
            else:
                value = sc.number()
            keys.append(key)
            if key not in values:
                values[key] = value
            if sc.peek() != ",":
                break
            sc.expect(",")
    sc.expect("}")
    sc.expect("}")
    sc.require_end()

    mode, order = _schema_for(tag, keys)
    params: dict[str, object] = {}
    for key in order:
        value = values[key]
        if key in _VECTOR_KEYS:
            if not isinstance(value, tuple):
                raise SchemaMismatch(f"{key} expects a 2-vector")
        elif key == "dir":
            if value not in _DIR_VALUES:
                raise SchemaMismatch(f"dir expects cw or ccw, got {value!r}")
        else:
            if not isinstance(value, float):
                raise SchemaMismatch(f"{key} expects a number")
        params[key] = value
    return PromptAST(
        kind=PromptKind.PARAM_TRAJECTORY, curve_type=tag, params=params, mode=mode
    )


def parse_spatial(s: str) -> PromptAST:
    """Constraint sentence -> spatial AST.

    Raises PromptSyntaxError on structural damage and CountMismatch when the
    stated obstacle count disagrees with the listed triples.
    """
    sc = _Scanner(s)
    for w in ("A", "person", "walks", "from"):
        sc.keyword(w)
    sc.expect("(")
    start = (sc.number(),)
    sc.expect(",")
    start = start + (sc.number(),)
    sc.expect(")")
    sc.keyword("to")
    sc.expect("(")
    goal = (sc.number(),)
    sc.expect(",")
    goal = goal + (sc.number(),)
    sc.expect(")")
    sc.expect(".")
    if sc.at_end():
        return PromptAST(
            kind=PromptKind.SPATIAL_CONSTRAINT, start=start, goal=goal, obstacles=[]
        )
    sc.keyword("Avoiding")
    stated = sc.integer()
    sc.keyword("obstacles")
    sc.keyword("at")
    obstacles: list[tuple[float, float, float]] = []
    while True:
        sc.expect("(")
        x = sc.number()
        sc.expect(",")
        z = sc.number()
        sc.expect(",")
        r = sc.number()
        sc.expect(")")
        obstacles.append((x, z, r))
        sc.expect(",")
        if sc.peek() != "(":
            break
    for w in ("where", "r", "is", "the", "safety", "radius", "in", "meters"):
        sc.keyword(w)
    sc.expect(".")
    sc.require_end()
    if stated != len(obstacles):
        raise CountMismatch(
            f"sentence states {stated} obstacles but lists {len(obstacles)}"
        )
    return PromptAST(
        kind=PromptKind.SPATIAL_CONSTRAINT, start=start, goal=goal, obstacles=obstacles
    )


# ------------------------------------------------------------ reconstruction


def curve_from_ast(ast: PromptAST) -> ParamCurve:
    """Rebuild the curve a trajectory AST describes.

    Works from the minimal parameter set; full-mode extras are redundant and
    ignored. Values carry the 2-decimal print quantization.
    """
    if ast.kind is not PromptKind.PARAM_TRAJECTORY:
        raise ValueError("expected a trajectory AST")
    p = ast.params
    tag = ast.curve_type
    if tag == "linear":
        return Linear(p["start"], p["end"], float(p["speed"]))
    if tag == "arc":
        return arc_from_endpoints(p["start"], p["end"], p["center"], str(p["dir"]))
    if tag == "quad_bezier":
        return QuadBezier(p["start"], p["P1"], p["end"])
    if tag == "cubic_bezier":
        return CubicBezier(p["start"], p["P1"], p["P2"], p["end"])
    if tag == "sinusoidal":
        c = Sinusoid(p["start"], p["end"], float(p["A"]), float(p["f"]))
        c.validate()
        return c
    raise UnknownCurveType(f"unknown curve type {tag!r}")


def description_ast(text: str) -> PromptAST:
    return PromptAST(kind=PromptKind.DESCRIPTION, text=text)


def edit_ast(text: str) -> PromptAST:
    return PromptAST(kind=PromptKind.EDIT_INSTRUCTION, text=text)
