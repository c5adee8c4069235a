"""Reader and writer for the bracketed MTheory script and its LPDL distribution blocks.

Grammar summary (whitespace is insignificant, ``#`` starts a comment)::

    mtheory  := mfrag*
    mfrag    := "[" F[digits] ":" name block* "]"
    block    := "[" "C" ":" cexpr ("," cexpr)* "]" | resident
    cexpr    := "IsA" "(" ov "," TYPE ")" | ov "=" ov | ov "=" fn "(" ovs ")" | fn "(" ovs ")"
    resident := "[" "R" ":" name "(" ovs ")" [space] inner* "]"
    space    := "{" ("cat" ":" states | "cont" | "bool" | "entity" ":" TYPE) "}"
    inner    := "[" ("IP"|"RP") ":" name "(" ovs ")" "]" | "[" "L" ":" (lpdl | name) "]"
    lpdl     := "if" cond "[" body "]" (["else"] "if" cond "[" body "]")* ["else" "[" body "]"] | body
    cond     := "some" ov (("."|",") ov)* "have" "(" parent "=" state ("," parent "=" state)* ")"
    body     := state "=" expr ("," state "=" expr)* | expr

Expressions use + - * / and parentheses over numbers, parent names,
``CARDINALITY(ov)``, ``average|sum|multiply(parent)``, ``NormalDist(mean, variance)``
and ``theta(i,j)`` placeholders for parameters still to be learned.
"""
from __future__ import annotations

import bisect
import math
import re
from dataclasses import dataclass

from .errors import (
    BadDistributionForm,
    DuplicateMFragName,
    MebnError,
    ModelError,
    ScriptError,
    ScriptSyntaxError,
    StatesNotCovered,
    UndeclaredOrdinaryVariable,
    UnknownBlockLetter,
)
from .mtheory import (
    AGGREGATIONS,
    CLD,
    CPC,
    PROB_TOL,
    BinOp,
    Call,
    Categorical,
    CategoricalFormula,
    CLDRef,
    Coefficient,
    ContinuousFormula,
    Equality,
    IsA,
    LinearGaussian,
    MFrag,
    MTheory,
    Neg,
    Num,
    ParentRef,
    PredicateContext,
    Ref,
    RelationalConstraint,
    Resident,
    Theta,
    ValueSpace,
    expr_walk,
    split_noise,
)

MAX_DEPTH = 200
BLOCK_LETTERS = ("C", "R", "IP", "RP", "L")
_F_LETTER = re.compile(r"^F\d*$")

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\n\f\v]+)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[\[\](){},:=.+\-*/])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str  # number | ident | punct | eof
    text: str
    line: int
    col: int


def tokenize(text) -> list[Token]:
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ScriptSyntaxError("input is not valid UTF-8", 1, exc.start + 1) from None
    starts = [0] + [m.end() for m in re.finditer("\n", text)]

    def where(pos):
        ln = bisect.bisect_right(starts, pos) - 1
        return ln + 1, pos - starts[ln] + 1

    out = []
    pos, n = 0, len(text)
    while pos < n:
        m = _TOKEN.match(text, pos)
        if m is None:
            line, col = where(pos)
            raise ScriptSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            line, col = where(pos)
            out.append(Token(kind, m.group(), line, col))
        pos = m.end()
    line, col = where(n)
    out.append(Token("eof", "", line, col))
    return out


# ---------------------------------------------------------------- parser

class _Parser:
    def __init__(self, text):
        self.toks = tokenize(text)
        self.pos = 0
        self.depth = 0

    # token helpers
    def peek(self, k=0) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def at(self, text, k=0) -> bool:
        t = self.peek(k)
        return t.kind in ("punct", "ident") and t.text == text

    def advance(self) -> Token:
        t = self.toks[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def fail(self, message, expected=None, tok=None):
        t = tok or self.peek()
        got = "end of input" if t.kind == "eof" else repr(t.text)
        raise ScriptSyntaxError(f"{message}, found {got}", t.line, t.col, expected)

    def expect(self, text) -> Token:
        if not self.at(text):
            self.fail("unexpected token", repr(text))
        return self.advance()

    def ident(self, what="identifier") -> Token:
        t = self.peek()
        if t.kind != "ident":
            self.fail("unexpected token", what)
        return self.advance()

    def enter(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            t = self.peek()
            raise ScriptSyntaxError("nesting too deep", t.line, t.col)

    def leave(self):
        self.depth -= 1

    def block_letter(self) -> Token:
        """Consume ``[ LETTER :`` and return the letter token."""
        self.expect("[")
        t = self.peek()
        if t.kind != "ident" or not self.at(":", 1):
            self.fail("unexpected token", "block letter followed by ':'")
        if not (_F_LETTER.match(t.text) or t.text in BLOCK_LETTERS):
            raise UnknownBlockLetter(f"unknown block letter {t.text!r}", t.line, t.col)
        self.advance()
        self.advance()
        return t

    def ident_list(self) -> list[Token]:
        self.expect("(")
        out = [self.ident("ordinary variable")]
        while self.at(","):
            self.advance()
            out.append(self.ident("ordinary variable"))
        self.expect(")")
        return out

    # MTheory
    def mtheory(self) -> MTheory:
        frags = []
        names = set()
        while self.peek().kind != "eof":
            f, name_tok = self.mfrag()
            if f.name in names:
                raise DuplicateMFragName(f"duplicate MFrag name {f.name}", name_tok.line, name_tok.col)
            names.add(f.name)
            frags.append(f)
        return MTheory(tuple(frags))

    def mfrag(self):
        letter = self.block_letter()
        if not _F_LETTER.match(letter.text):
            raise ScriptSyntaxError("expected an MFrag block", letter.line, letter.col, "'F'")
        name_tok = self.ident("MFrag name")
        contexts, residents, uses, declared = [], [], [], {}
        while self.at("["):
            t = self.peek(1)
            if t.kind == "ident" and t.text == "C" and self.at(":", 2):
                for node, toks in self.context_block():
                    if isinstance(node, IsA):
                        prev = declared.get(node.ov)
                        if prev is not None and prev != node.type_name:
                            raise ScriptSyntaxError(
                                f"{node.ov} declared with types {prev} and {node.type_name}",
                                toks[0].line, toks[0].col)
                        declared[node.ov] = node.type_name
                    else:
                        uses.extend(toks)
                    contexts.append(node)
            elif t.kind == "ident" and t.text == "R" and self.at(":", 2):
                res, toks, rp_toks = self.resident()
                if any(r.name == res.name for r, _ in residents):
                    raise ScriptSyntaxError(f"resident {res.name} defined twice in {name_tok.text}",
                                            t.line, t.col)
                residents.append((res, rp_toks))
                uses.extend(toks)
            else:
                letter = self.block_letter()
                raise ScriptSyntaxError(f"block {letter.text} is not allowed directly inside an MFrag",
                                        letter.line, letter.col, "'C' or 'R'")
        self.expect("]")
        for tok in uses:
            if tok.text not in declared:
                raise UndeclaredOrdinaryVariable(
                    f"ordinary variable {tok.text} is not declared by an IsA context", tok.line, tok.col)
        local = {r.name for r, _ in residents}
        for _, rp_toks in residents:
            for tok in rp_toks:
                if tok.text not in local:
                    raise ScriptSyntaxError(f"resident parent {tok.text} is not defined in this MFrag",
                                            tok.line, tok.col)
        return MFrag(name_tok.text, tuple(contexts), tuple(r for r, _ in residents)), name_tok

    def context_block(self):
        self.block_letter()
        out = [self.cexpr()]
        while self.at(","):
            self.advance()
            out.append(self.cexpr())
        self.expect("]")
        return out

    def cexpr(self):
        first = self.ident("context expression")
        if first.text in ("IsA", "isA") and self.at("("):
            self.advance()
            ov = self.ident("ordinary variable")
            self.expect(",")
            typ = self.ident("entity type")
            self.expect(")")
            return IsA(ov.text, typ.text), [ov]
        if self.at("="):
            self.advance()
            second = self.ident("ordinary variable or function")
            if self.at("("):
                args = self.ident_list()
                return (RelationalConstraint(first.text, second.text, tuple(a.text for a in args)),
                        [first] + args)
            return Equality(first.text, second.text), [first, second]
        if self.at("("):
            args = self.ident_list()
            return PredicateContext(first.text, tuple(a.text for a in args)), args
        self.fail("unexpected token", "'(' or '='")

    def value_space(self) -> ValueSpace:
        self.expect("{")
        kind = self.ident("value space kind")
        if kind.text == "cat":
            self.expect(":")
            states = [self.ident("state").text]
            while self.at(","):
                self.advance()
                states.append(self.ident("state").text)
            self.expect("}")
            if len(set(states)) != len(states):
                raise ScriptSyntaxError("repeated state", kind.line, kind.col)
            return ValueSpace.categorical(states)
        if kind.text == "entity":
            self.expect(":")
            typ = self.ident("entity type")
            self.expect("}")
            return ValueSpace.entity(typ.text)
        if kind.text in ("cont", "bool"):
            self.expect("}")
            return ValueSpace.continuous() if kind.text == "cont" else ValueSpace.boolean()
        raise ScriptSyntaxError(f"unknown value space {kind.text!r}", kind.line, kind.col,
                                "'cat', 'cont', 'bool' or 'entity'")

    def resident(self):
        self.block_letter()
        name = self.ident("resident name")
        args = self.ident_list()
        if len({a.text for a in args}) != len(args):
            raise ScriptSyntaxError("repeated argument", name.line, name.col)
        space = self.value_space() if self.at("{") else None
        uses = list(args)
        rp_toks = []
        parents = []
        cld = None
        while self.at("["):
            letter = self.block_letter()
            if letter.text in ("IP", "RP"):
                pname = self.ident("node name")
                pargs = self.ident_list()
                self.expect("]")
                ref = ParentRef("input" if letter.text == "IP" else "resident", pname.text,
                                tuple(a.text for a in pargs))
                if any(p.name == ref.name for p in parents):
                    raise ScriptSyntaxError(f"parent {ref.name} listed twice", pname.line, pname.col)
                parents.append(ref)
                uses.extend(pargs)
                if letter.text == "RP":
                    rp_toks.append(pname)
            elif letter.text == "L":
                if cld is not None:
                    raise ScriptSyntaxError("second distribution block", letter.line, letter.col)
                if self.peek().kind == "ident" and self.at("]", 1):
                    cld = CLDRef(self.advance().text)
                else:
                    cld = self.lpdl(letter)
                self.expect("]")
            else:
                raise ScriptSyntaxError(f"block {letter.text} is not allowed inside a resident",
                                        letter.line, letter.col, "'IP', 'RP' or 'L'")
        self.expect("]")
        if isinstance(cld, CLD) and space is not None:
            _check_space(cld, space, name)
        return Resident(name.text, tuple(a.text for a in args), space, tuple(parents), cld), uses, rp_toks

    # LPDL
    def lpdl(self, where: Token | None = None) -> CLD:
        start = self.peek()
        pairs, default = [], None
        if self.at("if"):
            while True:
                self.expect("if")
                cpc = self.condition()
                self.expect("[")
                csd = self.body()
                # a following "if" closes the branch implicitly
                if not self.at("if"):
                    self.expect("]")
                if any(c == cpc for c, _ in pairs):
                    raise ScriptSyntaxError("repeated branch condition", start.line, start.col)
                pairs.append((cpc, csd))
                if self.at("else"):
                    self.advance()
                    if self.at("if"):
                        continue
                    self.expect("[")
                    default = self.body()
                    self.expect("]")
                    break
                if self.at("if"):
                    continue
                break
        else:
            default = self.body()
        try:
            cld = CLD(tuple(pairs), default)
        except ModelError as exc:
            raise BadDistributionForm(str(exc), start.line, start.col) from None
        states = {tuple(sorted(s.states)) for _, s in cld.branches()
                  if isinstance(s, (Categorical, CategoricalFormula))}
        if len(states) > 1:
            raise StatesNotCovered("branches assign different state sets", start.line, start.col)
        return cld

    def condition(self) -> CPC:
        t = self.expect("some")
        ovs = [self.ident("ordinary variable").text]
        while self.at(".") or self.at(","):
            self.advance()
            ovs.append(self.ident("ordinary variable").text)
        self.expect("have")
        self.expect("(")
        conds = [self.cond_pair()]
        while self.at(","):
            self.advance()
            conds.append(self.cond_pair())
        self.expect(")")
        try:
            return CPC(tuple(ovs), tuple(conds))
        except ModelError as exc:
            raise ScriptSyntaxError(str(exc), t.line, t.col) from None

    def cond_pair(self):
        p = self.ident("parent name")
        self.expect("=")
        s = self.ident("state")
        return (p.text, s.text)

    def body(self):
        start = self.peek()
        if start.kind == "ident" and self.at("=", 1):
            assigns = []
            while True:
                st = self.ident("state")
                self.expect("=")
                assigns.append((st, self.expr()))
                if not self.at(","):
                    break
                self.advance()
            names = [s.text for s, _ in assigns]
            if len(set(names)) != len(names):
                raise ScriptSyntaxError("state assigned twice", start.line, start.col)
            return _categorical_csd([(s.text, e) for s, e in assigns], start)
        return _continuous_csd(self.expr(), start)

    def expr(self):
        self.enter()
        left = self.term()
        while self.at("+") or self.at("-"):
            op = self.advance().text
            left = BinOp(op, left, self.term())
        self.leave()
        return left

    def term(self):
        left = self.unary()
        while self.at("*") or self.at("/"):
            op = self.advance().text
            left = BinOp(op, left, self.unary())
        return left

    def unary(self):
        if self.at("-"):
            self.advance()
            self.enter()
            operand = self.unary()
            self.leave()
            if isinstance(operand, Num):
                return Num(-operand.value)
            return Neg(operand)
        return self.atom()

    def atom(self):
        t = self.peek()
        if t.kind == "number":
            self.advance()
            v = float(t.text)
            if math.isinf(v):
                raise ScriptSyntaxError("number out of range", t.line, t.col)
            return Num(v)
        if self.at("("):
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        if t.kind != "ident":
            self.fail("unexpected token", "expression")
        self.advance()
        if not self.at("("):
            return Ref(t.text)
        self.advance()
        if t.text == "theta":
            i = self.integer()
            self.expect(",")
            j = self.integer()
            self.expect(")")
            return Theta(i, j)
        if t.text == "CARDINALITY" or t.text in AGGREGATIONS:
            arg = self.ident("name")
            self.expect(")")
            return Call(t.text, (Ref(arg.text),))
        if t.text == "NormalDist":
            a = self.expr()
            self.expect(",")
            b = self.expr()
            self.expect(")")
            return Call("NormalDist", (a, b))
        raise ScriptSyntaxError(f"unknown function {t.text!r}", t.line, t.col,
                                "CARDINALITY, average, sum, multiply, NormalDist or theta")

    def integer(self) -> int:
        t = self.peek()
        if t.kind != "number" or not t.text.isdigit():
            self.fail("unexpected token", "integer")
        self.advance()
        return int(t.text)

    def finish(self):
        if self.peek().kind != "eof":
            self.fail("unexpected trailing input", "end of input")


def _check_space(cld: CLD, space: ValueSpace, where: Token):
    for _, csd in cld.branches():
        if isinstance(csd, (Categorical, CategoricalFormula)):
            if not space.discrete:
                raise BadDistributionForm("state assignments for a non-discrete node", where.line, where.col)
            if set(csd.states) != set(space.states):
                raise StatesNotCovered(
                    f"branch assigns {list(csd.states)}, node has states {list(space.states)}",
                    where.line, where.col)
        elif space.kind != "continuous":
            raise BadDistributionForm("continuous distribution for a non-continuous node",
                                      where.line, where.col)


def _const(e):
    """Numeric value, Theta, or None when `e` is not a plain constant."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Theta):
        return e
    return None


def _categorical_csd(assigns, where: Token):
    states = {s for s, _ in assigns}
    consts = [_const(e) for _, e in assigns]
    try:
        if all(c is not None for c in consts):
            return _make_categorical([(s, c) for (s, _), c in zip(assigns, consts)], where)
        plain = all(
            isinstance(n, (Num, BinOp, Neg)) or (isinstance(n, Ref) and n.name in states)
            for _, e in assigns for n in expr_walk(e))
        if plain:
            from .mtheory import _Evaluator
            ev = _Evaluator({}, None, dict(assigns))
            return _make_categorical([(s, ev.state_value(s)) for s, _ in assigns], where)
        for _, e in assigns:
            for n in expr_walk(e):
                if isinstance(n, Call) and n.func == "NormalDist":
                    raise BadDistributionForm("NormalDist inside a state assignment", where.line, where.col)
        return CategoricalFormula(tuple(assigns))
    except ScriptError:
        raise
    except ModelError as exc:
        raise BadDistributionForm(str(exc), where.line, where.col) from None


def _make_categorical(pairs, where: Token) -> Categorical:
    if all(not isinstance(v, Theta) for _, v in pairs):
        vals = [float(v) for _, v in pairs]
        total = sum(vals)
        if PROB_TOL < abs(total - 1.0) <= 1e-6 and all(v >= 0 for v in vals):
            pairs = [(s, v / total) for (s, _), v in zip(pairs, vals)]
    return Categorical(tuple(pairs))


def _linear_term(sign, e):
    """Match ``c * P``, ``P * c``, ``P``, ``c * agg(P)``; return (parent, coef, agg) or None."""
    def parent_of(x):
        if isinstance(x, Ref):
            return x.name, "average"
        if isinstance(x, Call) and x.func in AGGREGATIONS:
            return x.args[0].name, x.func
        return None

    p = parent_of(e)
    if p is not None:
        return p[0], sign * 1.0, p[1]
    if isinstance(e, BinOp) and e.op == "*":
        for c, x in ((e.left, e.right), (e.right, e.left)):
            k, p = _const(c), parent_of(x)
            if k is not None and p is not None:
                if isinstance(k, Theta):
                    if sign < 0:
                        return None
                    return p[0], k, p[1]
                return p[0], sign * k, p[1]
    return None


def _continuous_csd(e, where: Token):
    det, noise = split_noise(e)
    for _, t in det:
        if any(isinstance(n, Call) and n.func == "NormalDist" for n in expr_walk(t)):
            raise BadDistributionForm("NormalDist must be an additive term", where.line, where.col)
    if not noise:
        raise BadDistributionForm("continuous distribution needs a NormalDist term", where.line, where.col)
    for _, call in noise:
        for a in call.args:
            if any(isinstance(n, Call) and n.func == "NormalDist" for n in expr_walk(a)):
                raise BadDistributionForm("nested NormalDist", where.line, where.col)
    lg = _as_linear_gaussian(det, noise)
    if lg is not None:
        return lg
    return ContinuousFormula(e)


def _as_linear_gaussian(det, noise):
    if len(noise) != 1 or noise[0][0] < 0:
        return None
    mean_c, var_c = (_const(a) for a in noise[0][1].args)
    if mean_c is None or var_c is None:
        return None
    if not isinstance(var_c, Theta) and var_c < 0:
        return None
    consts, coefs = [], []
    for sign, t in det:
        c = _const(t)
        if c is not None:
            if isinstance(c, Theta):
                if sign < 0:
                    return None
                consts.append(c)
            else:
                consts.append(sign * c)
            continue
        lt = _linear_term(sign, t)
        if lt is None:
            return None
        coefs.append(Coefficient(lt[0], lt[1], lt[2]))
    if len({c.parent for c in coefs}) != len(coefs):
        return None
    parts = consts + [mean_c]
    thetas = [p for p in parts if isinstance(p, Theta)]
    if thetas:
        if len(thetas) > 1 or any(p != 0 for p in parts if not isinstance(p, Theta)):
            return None
        intercept = thetas[0]
    else:
        intercept = float(sum(parts))
    try:
        return LinearGaussian(intercept, tuple(coefs), var_c)
    except ModelError:
        return None


def parse_mtheory(text) -> MTheory:
    """Parse a script into an :class:`MTheory`; raises a ScriptError subclass on bad input."""
    try:
        p = _Parser(text)
        m = p.mtheory()
    except MebnError:
        raise
    except RecursionError:
        raise ScriptSyntaxError("nesting too deep") from None
    return m


def parse_lpdl(text) -> CLD:
    try:
        p = _Parser(text)
        cld = p.lpdl()
        p.finish()
    except MebnError:
        raise
    except RecursionError:
        raise ScriptSyntaxError("nesting too deep") from None
    return cld


# ---------------------------------------------------------------- emitter

def format_number(x: float) -> str:
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        raise ValueError(f"cannot print {x!r}")
    if x == 0:
        return "0"
    return f"{x:.9g}"


def _param(v) -> str:
    if isinstance(v, Theta):
        return f"theta({v.i},{v.j})"
    return format_number(v)


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def emit_expr(e, prec: int = 0) -> str:
    if isinstance(e, Num):
        return format_number(e.value)
    if isinstance(e, Theta):
        return _param(e)
    if isinstance(e, Ref):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}(" + ", ".join(emit_expr(a) for a in e.args) + ")"
    if isinstance(e, Neg):
        s = "-" + emit_expr(e.operand, 3)
        return f"({s})" if prec > 3 else s
    p = _PREC[e.op]
    s = f"{emit_expr(e.left, p)} {e.op} {emit_expr(e.right, p + 1)}"
    return f"({s})" if p < prec else s


def _emit_body(csd) -> str:
    if isinstance(csd, Categorical):
        return ", ".join(f"{s} = {_param(v)}" for s, v in csd.probs)
    if isinstance(csd, CategoricalFormula):
        return ", ".join(f"{s} = {emit_expr(e)}" for s, e in csd.assignments)
    if isinstance(csd, ContinuousFormula):
        return emit_expr(csd.expr)
    terms = []
    for c in csd.coefficients:
        ref = c.parent if c.aggregation == "average" else f"{c.aggregation}({c.parent})"
        if isinstance(c.value, Theta):
            terms.append(("+", f"{_param(c.value)} * {ref}"))
        elif c.value < 0:
            terms.append(("-", f"{format_number(-c.value)} * {ref}"))
        else:
            terms.append(("+", f"{format_number(c.value)} * {ref}"))
    if not terms:
        return f"NormalDist({_param(csd.intercept)}, {_param(csd.variance)})"
    out = ""
    if isinstance(csd.intercept, Theta) or csd.intercept != 0:
        out = _param(csd.intercept)
    for sign, t in terms:
        if not out:
            out = t if sign == "+" else f"-{t}"
        else:
            out += f" {sign} {t}"
    return out + f" + NormalDist(0, {_param(csd.variance)})"


def _emit_cpc(cpc: CPC) -> str:
    conds = ", ".join(f"{p} = {s}" for p, s in cpc.conditions)
    return f"some {'.'.join(cpc.ovs)} have ({conds})"


def emit_lpdl(cld: CLD, indent: int = 0) -> str:
    pad = "  " * indent
    if not cld.pairs:
        return pad + _emit_body(cld.default)
    lines = []
    for k, (cpc, csd) in enumerate(cld.pairs):
        head = "if" if k == 0 else "] else if"
        lines.append(f"{pad}{head} {_emit_cpc(cpc)} [")
        lines.append(f"{pad}  {_emit_body(csd)}")
    if cld.default is not None:
        lines.append(f"{pad}] else [")
        lines.append(f"{pad}  {_emit_body(cld.default)}")
    lines.append(f"{pad}]")
    return "\n".join(lines)


def _emit_context(c) -> str:
    if isinstance(c, IsA):
        return f"IsA ({c.ov}, {c.type_name})"
    if isinstance(c, Equality):
        return f"{c.left} = {c.right}"
    if isinstance(c, RelationalConstraint):
        return f"{c.ov} = {c.function} ({', '.join(c.args)})"
    return f"{c.function} ({', '.join(c.args)})"


def _emit_space(vs: ValueSpace) -> str:
    if vs.kind == "categorical":
        return "{cat: " + ", ".join(vs.states) + "}"
    if vs.kind == "entity":
        return "{entity: " + vs.entity_type + "}"
    return "{cont}" if vs.kind == "continuous" else "{bool}"


def emit_mframe_lines(f: MFrag, number: int | None, value_spaces: bool) -> list[str]:
    tag = f"F{number}" if number is not None else "F"
    lines = [f"[{tag}: {f.name}"]
    if f.contexts:
        lines.append("  [C: " + ", ".join(_emit_context(c) for c in f.contexts) + "]")
    for r in f.residents:
        head = f"  [R: {r.name} ({', '.join(r.args)})"
        if value_spaces and r.value_space is not None:
            head += " " + _emit_space(r.value_space)
        if not r.parents and r.cld is None:
            lines.append(head + "]")
            continue
        lines.append(head)
        for p in r.parents:
            letter = "IP" if p.kind == "input" else "RP"
            lines.append(f"    [{letter}: {p.name} ({', '.join(p.args)})]")
        if isinstance(r.cld, CLDRef):
            lines.append(f"    [L: {r.cld.name}]")
        elif r.cld is not None:
            lines.append("    [L:")
            lines.append(emit_lpdl(r.cld, indent=3))
            lines.append("    ]")
        lines.append("  ]")
    lines.append("]")
    return lines


def emit_mtheory(m: MTheory, value_spaces: bool = True, numbered: bool = True) -> str:
    """Deterministic script text; the empty MTheory gives the empty string."""
    lines = []
    for i, f in enumerate(m.mfrags, 1):
        lines.extend(emit_mframe_lines(f, i if numbered else None, value_spaces))
    return "\n".join(lines) + "\n" if lines else ""


def strip_whitespace(text: str) -> str:
    return re.sub(r"\s+", "", text)
