"""Parser for a flat guarded-command language describing CTMCs.

The accepted syntax is a single-module subset of the PRISM language::

    ctmc
    const int N = 3;
    module m
      x : [0..N] init 0;
      b : bool init false;
      [up]   x<N -> 2*x+1 : (x'=x+1);
      [flip] true -> 0.5 : (b'=!b) + 0.25 : (x'=0) & (b'=false);
    endmodule
    rewards cumulative x=N : 1; endrewards
    rewards final b : 1; endrewards
    target x=N;

A command with several ``rate : update`` branches is split into one command
per branch (labels ``a#0``, ``a#1``, ...), all sharing the guard. Every
expression is type-checked and compiled to a Python function over a state,
which is a tuple of variable values (Booleans are stored as 0/1).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

State = tuple  # tuple[int, ...], one entry per declared variable


class ModelError(Exception):
    """Base class of model-file diagnostics."""

    def __init__(self, msg: str, line: int | None = None, col: int | None = None):
        self.msg = msg
        self.line = line
        self.col = col
        where = f"line {line}, column {col}: " if line is not None else ""
        super().__init__(where + msg)


class ParseError(ModelError):
    """Malformed model text."""


class SemanticError(ModelError):
    """Well-formed text whose meaning is invalid (types, ranges, rates)."""


# -- expressions --------------------------------------------------------


@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class Num(Expr):
    value: float | int


@dataclass(frozen=True)
class BoolLit(Expr):
    value: bool


@dataclass(frozen=True)
class Ident(Expr):
    name: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    arg: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    name: str
    args: tuple


def expr_vars(e: Expr) -> set[str]:
    """Names of identifiers occurring in ``e``."""
    if isinstance(e, Ident):
        return {e.name}
    if isinstance(e, Unary):
        return expr_vars(e.arg)
    if isinstance(e, Binary):
        return expr_vars(e.left) | expr_vars(e.right)
    if isinstance(e, Call):
        out: set[str] = set()
        for a in e.args:
            out |= expr_vars(a)
        return out
    return set()


def _div(a, b):
    if b == 0:
        raise ZeroDivisionError("division by zero")
    return a / b


_RUNTIME = {"_div": _div, "_min": min, "_max": max, "_floor": math.floor, "_ceil": math.ceil}


# -- lexer --------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*)
  | (?P<num>\d+\.\d+(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+|\d+)
  | (?P<id>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<str>"[^"\n]*")
  | (?P<op>->|=>|<=|>=|!=|\.\.|[-+*/()\[\]:;=<>&|!',?])
    """,
    re.VERBOSE,
)

KEYWORDS = {
    "ctmc", "module", "endmodule", "rewards", "endrewards", "bool", "int", "double",
    "init", "true", "false", "const", "target", "cumulative", "final",
}


@dataclass
class Token:
    kind: str  # 'num', 'id', 'kw', 'op', 'str', 'eof'
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    toks: list[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "id":
            word = m.group()
            toks.append(Token("kw" if word in KEYWORDS else "id", word, line, col))
        elif kind in ("num", "op", "str"):
            toks.append(Token(kind, m.group(), line, col))
        pos = m.end()
    toks.append(Token("eof", "", line, pos - line_start + 1))
    return toks


# -- model objects ------------------------------------------------------


@dataclass(frozen=True)
class VarDecl:
    """A Boolean (``lo=0, hi=1, is_bool``) or bounded integer variable."""

    name: str
    lo: int
    hi: int
    init: int
    is_bool: bool = False

    @property
    def nbits(self) -> int:
        return (self.hi - self.lo).bit_length()


@dataclass(frozen=True)
class Command:
    label: str
    guard: Expr
    rate: Expr
    updates: tuple  # ((var index, Expr), ...)
    line: int = 0


@dataclass(frozen=True)
class RewardItem:
    guard: Expr
    value: Expr


class GuardedModel:
    """A validated flat model with compiled guards, rates, updates and rewards.

    Instances are immutable after construction.
    """

    def __init__(
        self,
        vars: Sequence[VarDecl],
        commands: Sequence[Command],
        cumulative: Sequence[RewardItem] = (),
        final: Sequence[RewardItem] = (),
        target: Expr | None = None,
        constants: dict | None = None,
    ):
        self.vars = tuple(vars)
        self.commands = tuple(commands)
        self.cumulative = tuple(cumulative)
        self.final = tuple(final)
        self.target = target
        self.constants = dict(constants or {})
        if not self.commands:
            raise SemanticError("model has no commands")
        names = [v.name for v in self.vars]
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise SemanticError(f"duplicate variable {dup!r}")
        self.var_index = {v.name: i for i, v in enumerate(self.vars)}
        for v in self.vars:
            if not v.lo <= v.init <= v.hi:
                raise SemanticError(f"initial value of {v.name!r} out of range")
        self._compile()

    # compilation --------------------------------------------------------

    def _typeof(self, e: Expr) -> str:
        if isinstance(e, Num):
            return "int" if isinstance(e.value, int) else "double"
        if isinstance(e, BoolLit):
            return "bool"
        if isinstance(e, Ident):
            if e.name in self.var_index:
                return "bool" if self.vars[self.var_index[e.name]].is_bool else "int"
            if e.name in self.constants:
                val = self.constants[e.name]
                if isinstance(val, bool):
                    return "bool"
                return "int" if isinstance(val, int) else "double"
            raise SemanticError(f"unknown identifier {e.name!r}", e.line or None, e.col or None)
        if isinstance(e, Unary):
            t = self._typeof(e.arg)
            if e.op == "!":
                if t != "bool":
                    raise SemanticError("operand of '!' must be Boolean")
                return "bool"
            if t == "bool":
                raise SemanticError("cannot negate a Boolean arithmetically")
            return t
        if isinstance(e, Binary):
            lt, rt = self._typeof(e.left), self._typeof(e.right)
            if e.op in ("&", "|", "=>"):
                if lt != "bool" or rt != "bool":
                    raise SemanticError(f"operands of '{e.op}' must be Boolean")
                return "bool"
            if e.op in ("=", "!="):
                if (lt == "bool") != (rt == "bool"):
                    raise SemanticError(f"cannot compare Boolean with number using '{e.op}'")
                return "bool"
            if lt == "bool" or rt == "bool":
                raise SemanticError(f"operands of '{e.op}' must be numeric")
            if e.op in ("<", "<=", ">", ">="):
                return "bool"
            if e.op == "/":
                return "double"
            return "int" if lt == rt == "int" else "double"
        if isinstance(e, Call):
            ts = [self._typeof(a) for a in e.args]
            if any(t == "bool" for t in ts):
                raise SemanticError(f"arguments of {e.name} must be numeric")
            if e.name in ("floor", "ceil"):
                return "int"
            return "int" if all(t == "int" for t in ts) else "double"
        raise TypeError(e)

    def _src(self, e: Expr) -> str:
        if isinstance(e, Num):
            return repr(e.value)
        if isinstance(e, BoolLit):
            return "True" if e.value else "False"
        if isinstance(e, Ident):
            if e.name in self.var_index:
                i = self.var_index[e.name]
                return f"s[{i}]"
            return repr(self.constants[e.name])
        if isinstance(e, Unary):
            return f"(not {self._src(e.arg)})" if e.op == "!" else f"(-{self._src(e.arg)})"
        if isinstance(e, Binary):
            a, b = self._src(e.left), self._src(e.right)
            if e.op == "&":
                return f"({a} and {b})"
            if e.op == "|":
                return f"({a} or {b})"
            if e.op == "=>":
                return f"((not {a}) or {b})"
            if e.op == "=":
                return f"({a} == {b})"
            if e.op == "/":
                return f"_div({a}, {b})"
            return f"({a} {e.op} {b})"
        if isinstance(e, Call):
            return f"_{e.name}({', '.join(self._src(a) for a in e.args)})"
        raise TypeError(e)

    def compile_expr(self, e: Expr, want: str | None = None) -> Callable[[State], object]:
        """Type-check ``e`` and return a function of a state."""
        t = self._typeof(e)
        if want == "bool" and t != "bool":
            raise SemanticError("expected a Boolean expression")
        if want == "num" and t == "bool":
            raise SemanticError("expected a numeric expression")
        return eval(f"lambda s: {self._src(e)}", dict(_RUNTIME))  # noqa: S307 - generated from our AST

    def _compile(self) -> None:
        self._guards = []
        self._rates = []
        self._updates = []
        for c in self.commands:
            try:
                self._guards.append(self.compile_expr(c.guard, "bool"))
                self._rates.append(self.compile_expr(c.rate, "num"))
            except SemanticError as err:
                raise SemanticError(f"command [{c.label}]: {err.msg}", c.line or None) from None
            seen = set()
            for i, ue in c.updates:
                if i in seen:
                    raise SemanticError(f"command [{c.label}] assigns {self.vars[i].name!r} twice", c.line or None)
                seen.add(i)
                t = self._typeof(ue)
                if self.vars[i].is_bool != (t == "bool"):
                    raise SemanticError(f"command [{c.label}]: type mismatch in update of {self.vars[i].name!r}", c.line or None)
                if t == "double":
                    raise SemanticError(f"command [{c.label}]: non-integer update of {self.vars[i].name!r}", c.line or None)
            src = ", ".join(
                self._upd_src(i, c.updates) for i in range(len(self.vars))
            )
            self._updates.append(eval(f"lambda s: ({src},)", dict(_RUNTIME)))  # noqa: S307
        self._rew_r = [(self.compile_expr(it.guard, "bool"), self.compile_expr(it.value, "num")) for it in self.cumulative]
        self._rew_f = [(self.compile_expr(it.guard, "bool"), self.compile_expr(it.value, "num")) for it in self.final]
        self._target = self.compile_expr(self.target, "bool") if self.target is not None else None

    def _upd_src(self, i: int, updates) -> str:
        for j, e in updates:
            if j == i:
                src = self._src(e)
                return f"int({src})" if self.vars[i].is_bool else src
        return f"s[{i}]"

    # evaluation ---------------------------------------------------------

    @property
    def initial(self) -> State:
        return tuple(v.init for v in self.vars)

    def guard_holds(self, ci: int, s: State) -> bool:
        return bool(self._guards[ci](s))

    def rate(self, ci: int, s: State) -> float:
        return float(self._rates[ci](s))

    def update(self, ci: int, s: State) -> State:
        return self._updates[ci](s)

    def in_range(self, s: State) -> bool:
        return all(v.lo <= x <= v.hi for v, x in zip(self.vars, s))

    def cumulative_reward(self, s: State) -> float:
        return float(sum(val(s) for g, val in self._rew_r if g(s)))

    def final_reward(self, s: State) -> float:
        return float(sum(val(s) for g, val in self._rew_f if g(s)))

    def is_target(self, s: State) -> bool:
        if self._target is None:
            raise SemanticError("model declares no target predicate")
        return bool(self._target(s))

    def with_rewards(self, cumulative=None, final=None, target=None) -> GuardedModel:
        """Copy of the model with some reward structures or the target replaced."""
        return GuardedModel(
            self.vars,
            self.commands,
            self.cumulative if cumulative is None else cumulative,
            self.final if final is None else final,
            self.target if target is None else target,
            self.constants,
        )

    def parse_expr(self, text: str) -> Expr:
        """Parse an expression over this model's variables and constants."""
        p = _Parser(tokenize(text))
        p.constants = dict(self.constants)
        e = p.expr()
        p.expect_eof()
        self._typeof(e)
        return e

    def state_str(self, s: State) -> str:
        parts = []
        for v, x in zip(self.vars, s):
            parts.append(f"{v.name}={'true' if x else 'false'}" if v.is_bool else f"{v.name}={x}")
        return "(" + ", ".join(parts) + ")"

    def __repr__(self) -> str:
        return f"GuardedModel({len(self.vars)} variables, {len(self.commands)} commands)"


# -- parser -------------------------------------------------------------


class _Parser:
    def __init__(self, toks: list[Token]):
        self.toks = toks
        self.i = 0
        self.constants: dict[str, object] = {}
        self._overrides: set[str] = set()

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(msg, tok.line, tok.col)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "kw")

    def take(self, text: str) -> Token:
        if not self.at(text):
            got = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {got!r}")
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> Token:
        if self.tok.kind != "id":
            got = self.tok.text or "end of input"
            raise self.error(f"expected an identifier, found {got!r}")
        t = self.tok
        self.i += 1
        return t

    def expect_eof(self) -> None:
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r}")

    # expressions, lowest precedence first

    def expr(self) -> Expr:
        left = self.disj()
        if self.at("=>"):
            self.i += 1
            return Binary("=>", left, self.expr())
        return left

    def disj(self) -> Expr:
        e = self.conj()
        while self.at("|"):
            self.i += 1
            e = Binary("|", e, self.conj())
        return e

    def conj(self) -> Expr:
        e = self.neg()
        while self.at("&"):
            self.i += 1
            e = Binary("&", e, self.neg())
        return e

    def neg(self) -> Expr:
        if self.at("!"):
            self.i += 1
            return Unary("!", self.neg())
        return self.rel()

    def rel(self) -> Expr:
        e = self.sum()
        if self.tok.kind == "op" and self.tok.text in ("=", "!=", "<", "<=", ">", ">="):
            op = self.tok.text
            self.i += 1
            e = Binary(op, e, self.sum())
        return e

    def sum(self) -> Expr:
        e = self.prod()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            op = self.tok.text
            self.i += 1
            e = Binary(op, e, self.prod())
        return e

    def prod(self) -> Expr:
        e = self.unary()
        while self.tok.kind == "op" and self.tok.text in ("*", "/"):
            op = self.tok.text
            self.i += 1
            e = Binary(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.at("-"):
            self.i += 1
            return Unary("-", self.unary())
        return self.atom()

    def atom(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            if re.fullmatch(r"\d+", t.text):
                return Num(int(t.text))
            return Num(float(t.text))
        if t.kind == "kw" and t.text in ("true", "false"):
            self.i += 1
            return BoolLit(t.text == "true")
        if t.kind == "id":
            self.i += 1
            if t.text in ("min", "max", "floor", "ceil") and self.at("("):
                self.i += 1
                args = [self.expr()]
                while self.at(","):
                    self.i += 1
                    args.append(self.expr())
                self.take(")")
                if t.text in ("floor", "ceil") and len(args) != 1:
                    raise self.error(f"{t.text} takes one argument", t)
                return Call(t.text, tuple(args))
            return Ident(t.text, t.line, t.col)
        if self.at("("):
            self.i += 1
            e = self.expr()
            self.take(")")
            return e
        got = t.text or "end of input"
        raise self.error(f"expected an expression, found {got!r}")

    # constants are folded at parse time

    def const_value(self, e: Expr, tok: Token):
        names = expr_vars(e)
        unknown = names - set(self.constants)
        if unknown:
            raise SemanticError(f"unknown identifier {sorted(unknown)[0]!r}", tok.line, tok.col)
        src = _const_src(e, self.constants)
        try:
            return eval(src, dict(_RUNTIME))  # noqa: S307
        except ZeroDivisionError:
            raise SemanticError("division by zero in constant", tok.line, tok.col) from None

    # model

    def model(self) -> GuardedModel:
        self.take("ctmc")
        while self.at("const"):
            self.const_decl()
        self.take("module")
        self.ident()
        decls: list[VarDecl] = []
        while self.tok.kind == "id" and self.toks[self.i + 1].text == ":":
            decls.append(self.var_decl())
        names = [d.name for d in decls]
        for k, n in enumerate(names):
            if n in names[:k]:
                raise SemanticError(f"duplicate variable {n!r}")
            if n in self.constants:
                raise SemanticError(f"variable {n!r} shadows a constant")
        index = {n: k for k, n in enumerate(names)}
        commands: list[Command] = []
        while self.at("["):
            commands.extend(self.command(index, len(commands)))
        self.take("endmodule")
        cumulative: list[RewardItem] = []
        final: list[RewardItem] = []
        target = None
        while self.tok.kind != "eof":
            if self.at("rewards"):
                self.i += 1
                if self.tok.kind == "str":
                    self.i += 1
                kind_tok = self.tok
                if not (self.at("cumulative") or self.at("final")):
                    raise self.error("expected 'cumulative' or 'final'")
                self.i += 1
                items = cumulative if kind_tok.text == "cumulative" else final
                while not self.at("endrewards"):
                    g = self.expr()
                    self.take(":")
                    v = self.expr()
                    self.take(";")
                    items.append(RewardItem(g, v))
                self.take("endrewards")
            elif self.at("target"):
                t = self.tok
                self.i += 1
                if target is not None:
                    raise self.error("duplicate target declaration", t)
                target = self.expr()
                self.take(";")
            else:
                raise self.error(f"unexpected {self.tok.text!r} after endmodule")
        return GuardedModel(decls, commands, cumulative, final, target, self.constants)

    def const_decl(self) -> None:
        self.take("const")
        kind = None
        if self.at("int") or self.at("double") or self.at("bool"):
            kind = self.tok.text
            self.i += 1
        name = self.ident()
        overridden = name.text in self._overrides
        if name.text in self.constants and not overridden:
            raise SemanticError(f"duplicate constant {name.text!r}", name.line, name.col)
        if self.at("="):
            self.i += 1
            e = self.expr()
            self.take(";")
            val = self.constants[name.text] if overridden else self.const_value(e, name)
        else:
            self.take(";")
            if not overridden:
                raise SemanticError(f"constant {name.text!r} has no value", name.line, name.col)
            val = self.constants[name.text]
        self._overrides.discard(name.text)
        if kind == "int":
            if isinstance(val, bool) or (isinstance(val, float) and not val.is_integer()):
                raise SemanticError(f"constant {name.text!r} is not an integer", name.line, name.col)
            val = int(val)
        elif kind == "double":
            if isinstance(val, bool):
                raise SemanticError(f"constant {name.text!r} is not numeric", name.line, name.col)
            val = float(val)
        elif kind == "bool" and not isinstance(val, bool):
            raise SemanticError(f"constant {name.text!r} is not Boolean", name.line, name.col)
        self.constants[name.text] = val

    def var_decl(self) -> VarDecl:
        name = self.ident()
        self.take(":")
        if self.at("bool"):
            self.i += 1
            lo, hi, is_bool = 0, 1, True
        else:
            self.take("[")
            lo_e = self.expr()
            self.take("..")
            hi_e = self.expr()
            self.take("]")
            lo, hi = self.const_value(lo_e, name), self.const_value(hi_e, name)
            if not all(isinstance(x, int) and not isinstance(x, bool) for x in (lo, hi)):
                raise SemanticError(f"bounds of {name.text!r} must be integers", name.line, name.col)
            if lo > hi:
                raise SemanticError(f"empty range for {name.text!r}", name.line, name.col)
            is_bool = False
        init = lo
        if self.at("init"):
            self.i += 1
            init_tok = self.tok
            val = self.const_value(self.expr(), init_tok)
            if is_bool:
                if not isinstance(val, bool):
                    raise SemanticError(f"initial value of {name.text!r} must be Boolean", init_tok.line, init_tok.col)
                init = int(val)
            else:
                if isinstance(val, bool) or not isinstance(val, int):
                    raise SemanticError(f"initial value of {name.text!r} must be an integer", init_tok.line, init_tok.col)
                init = val
            if not lo <= init <= hi:
                raise SemanticError(f"initial value of {name.text!r} out of range", init_tok.line, init_tok.col)
        self.take(";")
        return VarDecl(name.text, lo, hi, init, is_bool)

    def command(self, index: dict[str, int], ncmds: int) -> list[Command]:
        start = self.take("[")
        label = f"c{ncmds}"
        if self.tok.kind == "id":
            label = self.ident().text
        self.take("]")
        guard = self.expr()
        self.take("->")
        branches = [self.branch(index)]
        while self.at("+"):
            self.i += 1
            branches.append(self.branch(index))
        self.take(";")
        if len(branches) == 1:
            rate, upd = branches[0]
            return [Command(label, guard, rate, upd, start.line)]
        return [
            Command(f"{label}#{k}", guard, rate, upd, start.line)
            for k, (rate, upd) in enumerate(branches)
        ]

    def branch(self, index: dict[str, int]):
        rate = self.expr()
        self.take(":")
        updates: list[tuple[int, Expr]] = []
        if self.at("true"):
            self.i += 1
            return rate, ()
        while True:
            self.take("(")
            updates.append(self.assign(index))
            while self.at("&"):
                self.i += 1
                updates.append(self.assign(index))
            self.take(")")
            if self.at("&"):
                self.i += 1
                continue
            break
        return rate, tuple(updates)

    def assign(self, index: dict[str, int]) -> tuple[int, Expr]:
        name = self.ident()
        if name.text not in index:
            raise SemanticError(f"unknown variable {name.text!r}", name.line, name.col)
        self.take("'")
        self.take("=")
        return index[name.text], self.expr()


def _const_src(e: Expr, constants: dict) -> str:
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, BoolLit):
        return repr(e.value)
    if isinstance(e, Ident):
        return repr(constants[e.name])
    if isinstance(e, Unary):
        return f"(not {_const_src(e.arg, constants)})" if e.op == "!" else f"(-{_const_src(e.arg, constants)})"
    if isinstance(e, Binary):
        a, b = _const_src(e.left, constants), _const_src(e.right, constants)
        op = {"&": "and", "|": "or", "=": "=="}.get(e.op, e.op)
        if op == "/":
            return f"_div({a}, {b})"
        if op == "=>":
            return f"((not {a}) or {b})"
        return f"({a} {op} {b})"
    if isinstance(e, Call):
        return f"_{e.name}({', '.join(_const_src(a, constants) for a in e.args)})"
    raise TypeError(e)


def parse(text: str, constants: dict | None = None) -> GuardedModel:
    """Parse model source text into a :class:`GuardedModel`.

    ``constants`` pre-defines (or overrides the absence of) ``const`` values,
    which is how template models such as ``cluster_N.ctmc`` are instantiated:
    a ``const int N;`` without value takes it from this mapping.
    """
    p = _Parser(tokenize(text))
    p.constants = dict(constants or {})
    p._overrides = set(p.constants)
    return p.model()


def parse_file(path, constants: dict | None = None) -> GuardedModel:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read(), constants)
