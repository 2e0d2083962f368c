"""Differential equations as residual expression trees.

A residual is the full left-hand side of the equation with everything moved
over, so the target value is zero at every collocation point. Leaves refer
to derivative features of the target function (by index into the declared
feature list), latent sources, named coefficients, or constants. Evaluation
is elementwise over collocation points, and broadcasting over a trailing
sample axis is supported so Monte-Carlo batches evaluate in one pass.
"""

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IndexOutOfRange,
    MissingCoefficient,
    NonFinite,
    SchemaError,
    UnknownFunction,
    UnknownPreset,
)
from .kernel import ArdParams

MAX_DEPTH = 64


@dataclass(frozen=True)
class Feature:
    index: int


@dataclass(frozen=True)
class Source:
    index: int


@dataclass(frozen=True)
class Coeff:
    name: str


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Add:
    left: object
    right: object


@dataclass(frozen=True)
class Sub:
    left: object
    right: object


@dataclass(frozen=True)
class Mul:
    left: object
    right: object


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class IntPow:
    arg: object
    exponent: int


@dataclass(frozen=True)
class Sin:
    arg: object


@dataclass(frozen=True)
class Cos:
    arg: object


@dataclass
class SourceSpec:
    name: str
    kernel: ArdParams = None
    share_u_params: bool = True


@dataclass
class CoeffSpec:
    name: str
    init: float = 1.0
    positive: bool = True

    def __post_init__(self):
        if self.positive and self.init <= 0:
            raise SchemaError(f"coeffs.{self.name}.init", "must be > 0 for a positive coefficient")


@dataclass
class EquationSpec:
    """Declarative equation: derivative features, sources, coefficients, residual."""

    features: list          # list of DerivOp tuples, deduplicated, declaration order
    sources: list           # list of SourceSpec
    coeffs: list            # list of CoeffSpec
    expr: object
    feature_names: list = None  # parallel to features; used by the config schema

    def __post_init__(self):
        self.features = [tuple(int(o) for o in f) for f in self.features]
        if len(set(self.features)) != len(self.features):
            raise SchemaError("features", "duplicate derivative operators")
        if self.feature_names is None:
            self.feature_names = [_default_feature_name(f) for f in self.features]
        _validate_expr(self.expr, len(self.features), len(self.sources),
                       {c.name for c in self.coeffs}, depth=0)

    @property
    def dim(self):
        return len(self.features[0]) if self.features else 1


def _default_feature_name(op):
    if all(o == 0 for o in op):
        return "val"
    return "f_" + "_".join(str(o) for o in op)


def _validate_expr(node, n_features, n_sources, coeff_names, depth):
    if depth > MAX_DEPTH:
        raise SchemaError("expr", f"tree depth exceeds {MAX_DEPTH}")
    if isinstance(node, Feature):
        if not 0 <= node.index < n_features:
            raise IndexOutOfRange(f"feature index {node.index} out of range")
    elif isinstance(node, Source):
        if not 0 <= node.index < n_sources:
            raise IndexOutOfRange(f"source index {node.index} out of range")
    elif isinstance(node, Coeff):
        if node.name not in coeff_names:
            raise MissingCoefficient(f"coefficient {node.name!r} not declared")
    elif isinstance(node, Const):
        pass
    elif isinstance(node, (Add, Sub, Mul)):
        _validate_expr(node.left, n_features, n_sources, coeff_names, depth + 1)
        _validate_expr(node.right, n_features, n_sources, coeff_names, depth + 1)
    elif isinstance(node, (Neg, Sin, Cos)):
        _validate_expr(node.arg, n_features, n_sources, coeff_names, depth + 1)
    elif isinstance(node, IntPow):
        if node.exponent < 2:
            raise SchemaError("expr", "IntPow exponent must be >= 2")
        _validate_expr(node.arg, n_features, n_sources, coeff_names, depth + 1)
    else:
        raise SchemaError("expr", f"unknown node {type(node).__name__}")


def referenced_features(expr):
    """Indices of Feature leaves reachable from expr."""
    out = set()

    def walk(node):
        if isinstance(node, Feature):
            out.add(node.index)
        elif isinstance(node, (Add, Sub, Mul)):
            walk(node.left)
            walk(node.right)
        elif isinstance(node, (Neg, Sin, Cos, IntPow)):
            walk(node.arg)

    walk(expr)
    return out


def _eval(node, feats, srcs, coeffs):
    if isinstance(node, Feature):
        return feats[node.index]
    if isinstance(node, Source):
        return srcs[node.index]
    if isinstance(node, Coeff):
        try:
            return coeffs[node.name]
        except KeyError:
            raise MissingCoefficient(f"coefficient {node.name!r} missing") from None
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Add):
        return _eval(node.left, feats, srcs, coeffs) + _eval(node.right, feats, srcs, coeffs)
    if isinstance(node, Sub):
        return _eval(node.left, feats, srcs, coeffs) - _eval(node.right, feats, srcs, coeffs)
    if isinstance(node, Mul):
        return _eval(node.left, feats, srcs, coeffs) * _eval(node.right, feats, srcs, coeffs)
    if isinstance(node, Neg):
        return -_eval(node.arg, feats, srcs, coeffs)
    if isinstance(node, IntPow):
        return _eval(node.arg, feats, srcs, coeffs) ** node.exponent
    if isinstance(node, Sin):
        return np.sin(_eval(node.arg, feats, srcs, coeffs))
    if isinstance(node, Cos):
        return np.cos(_eval(node.arg, feats, srcs, coeffs))
    raise SchemaError("expr", f"unknown node {type(node).__name__}")


def eval_residual(spec, feature_vals, source_vals, coeff_vals):
    """Elementwise residual over collocation points (and any trailing axes)."""
    r = _eval(spec.expr, list(feature_vals), list(source_vals), dict(coeff_vals))
    r = np.asarray(r, dtype=float)
    if not np.isfinite(r).all():
        raise NonFinite("residual evaluation produced NaN/Inf")
    return r


def eval_residual_adjoint(spec, feature_vals, source_vals, coeff_vals, upstream):
    """Reverse-mode gradients of sum(upstream * residual).

    Returns (feature_adjs, source_adjs, coeff_grads): per-feature and
    per-source arrays shaped like the inputs, and a name -> scalar dict.
    """
    feats = [np.asarray(v, dtype=float) for v in feature_vals]
    srcs = [np.asarray(v, dtype=float) for v in source_vals]
    coeffs = dict(coeff_vals)
    upstream = np.asarray(upstream, dtype=float)
    f_adj = [np.zeros_like(v) for v in feats]
    s_adj = [np.zeros_like(v) for v in srcs]
    c_adj = {c.name: 0.0 for c in spec.coeffs}

    def backward(node, up):
        if isinstance(node, Feature):
            f_adj[node.index] += up
        elif isinstance(node, Source):
            s_adj[node.index] += up
        elif isinstance(node, Coeff):
            c_adj[node.name] += float(np.sum(up))
        elif isinstance(node, Const):
            pass
        elif isinstance(node, Add):
            backward(node.left, up)
            backward(node.right, up)
        elif isinstance(node, Sub):
            backward(node.left, up)
            backward(node.right, -up)
        elif isinstance(node, Mul):
            lv = _eval(node.left, feats, srcs, coeffs)
            rv = _eval(node.right, feats, srcs, coeffs)
            backward(node.left, up * rv)
            backward(node.right, up * lv)
        elif isinstance(node, Neg):
            backward(node.arg, -up)
        elif isinstance(node, IntPow):
            v = _eval(node.arg, feats, srcs, coeffs)
            backward(node.arg, up * node.exponent * v ** (node.exponent - 1))
        elif isinstance(node, Sin):
            backward(node.arg, up * np.cos(_eval(node.arg, feats, srcs, coeffs)))
        elif isinstance(node, Cos):
            backward(node.arg, -up * np.sin(_eval(node.arg, feats, srcs, coeffs)))
        else:
            raise SchemaError("expr", f"unknown node {type(node).__name__}")

    backward(spec.expr, upstream)
    return f_adj, s_adj, c_adj


PRESETS = (
    "pendulum_complete",
    "pendulum_complete_damped",
    "pendulum_incomplete",
    "allen_cahn_complete",
    "allen_cahn_incomplete",
    "first_order_latent_force",
    "laplace_latent_source",
)


def preset(name, coeff_inits=None):
    """Built-in equations. Inputs are 1-D time for the pendulum and latent
    force presets, (x, t) for Allen-Cahn, and (x1, x2) for the Laplacian one.
    """
    inits = dict(coeff_inits or {})
    if name == "pendulum_complete":
        # theta'' + sin(theta)
        return EquationSpec(
            features=[(0,), (2,)], sources=[], coeffs=[],
            expr=Add(Feature(1), Sin(Feature(0))),
            feature_names=["val", "dt2"],
        )
    if name == "pendulum_complete_damped":
        # theta'' + sin(theta) + b * theta'
        return EquationSpec(
            features=[(0,), (1,), (2,)], sources=[],
            coeffs=[CoeffSpec("b", init=inits.get("b", 1.0), positive=True)],
            expr=Add(Add(Feature(2), Sin(Feature(0))), Mul(Coeff("b"), Feature(1))),
            feature_names=["val", "dt", "dt2"],
        )
    if name == "pendulum_incomplete":
        # theta'' + g
        return EquationSpec(
            features=[(2,)], sources=[SourceSpec("g")], coeffs=[],
            expr=Add(Feature(0), Source(0)),
            feature_names=["dt2"],
        )
    if name == "allen_cahn_complete":
        # u_t - 0.0001 u_xx + 5 u^3 - 5 u, inputs (x, t)
        return EquationSpec(
            features=[(0, 0), (0, 1), (2, 0)], sources=[], coeffs=[],
            expr=Sub(Add(Sub(Feature(1), Mul(Const(0.0001), Feature(2))),
                         Mul(Const(5.0), IntPow(Feature(0), 3))),
                     Mul(Const(5.0), Feature(0))),
            feature_names=["val", "dt", "dx2"],
        )
    if name == "allen_cahn_incomplete":
        # u_t - 0.0001 u_xx + g, inputs (x, t)
        return EquationSpec(
            features=[(0, 1), (2, 0)], sources=[SourceSpec("g")], coeffs=[],
            expr=Add(Sub(Feature(0), Mul(Const(0.0001), Feature(1))), Source(0)),
            feature_names=["dt", "dx2"],
        )
    if name == "first_order_latent_force":
        # u_t + b u - c - g
        return EquationSpec(
            features=[(0,), (1,)], sources=[SourceSpec("g")],
            coeffs=[CoeffSpec("b", init=inits.get("b", 1.0), positive=True),
                    CoeffSpec("c", init=inits.get("c", 1.0), positive=True)],
            expr=Sub(Sub(Add(Feature(1), Mul(Coeff("b"), Feature(0))), Coeff("c")), Source(0)),
            feature_names=["val", "dt"],
        )
    if name == "laplace_latent_source":
        # h_{x1 x1} + h_{x2 x2} - g, inputs (x1, x2)
        return EquationSpec(
            features=[(2, 0), (0, 2)], sources=[SourceSpec("g")], coeffs=[],
            expr=Sub(Add(Feature(0), Feature(1)), Source(0)),
            feature_names=["d2_x1", "d2_x2"],
        )
    raise UnknownPreset(f"unknown preset {name!r} (known: {', '.join(PRESETS)})")


# --- config schema -----------------------------------------------------------


def _feature_from_schema(entry, dim, path):
    if isinstance(entry, str):
        name = entry
        if dim == 1:
            table = {"val": (0,), "dt": (1,), "dt2": (2,), "dx": (1,), "dx2": (2,)}
        elif dim == 2:
            table = {"val": (0, 0), "dt": (0, 1), "dx": (1, 0), "dx2": (2, 0),
                     "dt2": (0, 2), "d2_x1": (2, 0), "d2_x2": (0, 2)}
        else:
            raise SchemaError(path, f"no shorthand derivative names for dim {dim}")
        if name not in table:
            raise SchemaError(path, f"unknown derivative string {name!r}")
        return name, table[name]
    if isinstance(entry, dict):
        if "name" not in entry or "orders" not in entry:
            raise SchemaError(path, "feature object needs 'name' and 'orders'")
        orders = tuple(int(o) for o in entry["orders"])
        if len(orders) != dim:
            raise SchemaError(path, f"orders length {len(orders)} != dim {dim}")
        return str(entry["name"]), orders
    raise SchemaError(path, "feature must be a string or {name, orders}")


class _ExprParser:
    """Recursive-descent parser for infix residual expressions.

    Grammar: expr := term (('+'|'-') term)*; term := unary ('*' unary)*;
    unary := '-' unary | atom; atom := number | name | name '(' args ')' |
    '(' expr ')'. Functions: sin, cos, pow(x, k). A call whose name is a
    declared feature, e.g. dt2(u), selects that feature directly.
    """

    _token_re = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|([()+\-*,]))")

    def __init__(self, text, feature_names, source_names, coeff_names):
        self.tokens = self._tokenize(text)
        self.pos = 0
        self.features = {n: i for i, n in enumerate(feature_names)}
        self.sources = {n: i for i, n in enumerate(source_names)}
        self.coeffs = set(coeff_names)

    def _tokenize(self, text):
        tokens, i = [], 0
        while i < len(text):
            m = self._token_re.match(text, i)
            if not m or m.end() == i:
                if text[i:].strip():
                    raise SchemaError("expr", f"bad token near {text[i:i+10]!r}")
                break
            tokens.append(m.group(1) or m.group(2) or m.group(3))
            i = m.end()
        return tokens

    def _peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _next(self):
        tok = self._peek()
        self.pos += 1
        return tok

    def _expect(self, tok):
        got = self._next()
        if got != tok:
            raise SchemaError("expr", f"expected {tok!r}, got {got!r}")

    def parse(self):
        node = self._expr()
        if self._peek() is not None:
            raise SchemaError("expr", f"trailing input at {self._peek()!r}")
        return node

    def _expr(self):
        node = self._term()
        while self._peek() in ("+", "-"):
            op = self._next()
            rhs = self._term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def _term(self):
        node = self._unary()
        while self._peek() == "*":
            self._next()
            node = Mul(node, self._unary())
        return node

    def _unary(self):
        if self._peek() == "-":
            self._next()
            return Neg(self._unary())
        return self._atom()

    def _atom(self):
        tok = self._next()
        if tok is None:
            raise SchemaError("expr", "unexpected end of expression")
        if tok == "(":
            node = self._expr()
            self._expect(")")
            return node
        if tok[0].isdigit():
            return Const(float(tok))
        name = tok
        if self._peek() == "(":
            self._next()
            args = [self._expr()]
            while self._peek() == ",":
                self._next()
                args.append(self._expr())
            self._expect(")")
            if name == "sin":
                return Sin(args[0])
            if name == "cos":
                return Cos(args[0])
            if name == "pow":
                if len(args) != 2 or not isinstance(args[1], Const):
                    raise SchemaError("expr", "pow needs (expr, integer) arguments")
                return IntPow(args[0], int(args[1].value))
            if name in self.features:
                return Feature(self.features[name])
            raise UnknownFunction(f"unknown function {name!r}")
        if name == "u" and "val" in self.features:
            return Feature(self.features["val"])
        if name in self.features:
            return Feature(self.features[name])
        if name in self.sources:
            return Source(self.sources[name])
        if name in self.coeffs:
            return Coeff(name)
        raise SchemaError("expr", f"undeclared name {name!r}")


def parse_equation(doc, dim=None):
    """Build an EquationSpec from the config schema (a mapping).

    Either {"preset": name, ["coeff_inits": {...}]} or the full form
    {"features": [...], "sources": [...], "coeffs": [...], "expr": "..."}.
    """
    if not isinstance(doc, dict):
        raise SchemaError("equation", "expected a mapping")
    if "preset" in doc:
        return preset(doc["preset"], coeff_inits=doc.get("coeff_inits"))
    for key in ("features", "expr"):
        if key not in doc:
            raise SchemaError(f"equation.{key}", "missing required field")
    if dim is None:
        first = doc["features"][0]
        dim = len(first["orders"]) if isinstance(first, dict) else 1
    names, ops = [], []
    for i, entry in enumerate(doc["features"]):
        name, op = _feature_from_schema(entry, dim, f"equation.features[{i}]")
        names.append(name)
        ops.append(op)
    sources = []
    for i, s in enumerate(doc.get("sources", [])):
        if isinstance(s, str):
            sources.append(SourceSpec(s))
        elif isinstance(s, dict) and "name" in s:
            sources.append(SourceSpec(s["name"], share_u_params=bool(s.get("share_u_params", True))))
        else:
            raise SchemaError(f"equation.sources[{i}]", "expected a name or {name, share_u_params}")
    coeffs = []
    for i, c in enumerate(doc.get("coeffs", [])):
        if not isinstance(c, dict) or "name" not in c:
            raise SchemaError(f"equation.coeffs[{i}]", "expected {name, init, positive}")
        coeffs.append(CoeffSpec(c["name"], init=float(c.get("init", 1.0)),
                                positive=bool(c.get("positive", True))))
    expr = _ExprParser(str(doc["expr"]), names, [s.name for s in sources],
                       [c.name for c in coeffs]).parse()
    return EquationSpec(features=ops, sources=sources, coeffs=coeffs, expr=expr,
                        feature_names=names)


def _expr_to_text(node, names, sources, coeffs):
    if isinstance(node, Feature):
        return names[node.index]
    if isinstance(node, Source):
        return sources[node.index]
    if isinstance(node, Coeff):
        return node.name
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Add):
        return f"({_expr_to_text(node.left, names, sources, coeffs)} + {_expr_to_text(node.right, names, sources, coeffs)})"
    if isinstance(node, Sub):
        return f"({_expr_to_text(node.left, names, sources, coeffs)} - {_expr_to_text(node.right, names, sources, coeffs)})"
    if isinstance(node, Mul):
        return f"({_expr_to_text(node.left, names, sources, coeffs)} * {_expr_to_text(node.right, names, sources, coeffs)})"
    if isinstance(node, Neg):
        return f"(-{_expr_to_text(node.arg, names, sources, coeffs)})"
    if isinstance(node, IntPow):
        return f"pow({_expr_to_text(node.arg, names, sources, coeffs)}, {node.exponent})"
    if isinstance(node, Sin):
        return f"sin({_expr_to_text(node.arg, names, sources, coeffs)})"
    if isinstance(node, Cos):
        return f"cos({_expr_to_text(node.arg, names, sources, coeffs)})"
    raise SchemaError("expr", f"unknown node {type(node).__name__}")


def serialize(spec):
    """Schema document (dict) that parse_equation maps back to this spec."""
    return {
        "features": [{"name": n, "orders": list(op)}
                     for n, op in zip(spec.feature_names, spec.features)],
        "sources": [{"name": s.name, "share_u_params": s.share_u_params} for s in spec.sources],
        "coeffs": [{"name": c.name, "init": c.init, "positive": c.positive} for c in spec.coeffs],
        "expr": _expr_to_text(spec.expr, spec.feature_names,
                              [s.name for s in spec.sources], [c.name for c in spec.coeffs]),
    }
