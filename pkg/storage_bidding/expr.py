"""Affine and quadratic expressions over named symbols."""

from numbers import Real
from typing import Dict, Iterable, Iterator, Mapping, Tuple, Union

from .exceptions import MissingValueError

Number = Union[int, float]


class LinExpr:
    """Affine expression sum(coef * symbol) + const."""

    __slots__ = ("terms", "const")
    # numpy scalars defer to __rmul__ instead of building object arrays
    __array_ufunc__ = None

    def __init__(self, terms: Mapping[str, float] = None, const: float = 0.0):
        self.terms: Dict[str, float] = dict(terms) if terms else {}
        self.const = float(const)

    @classmethod
    def var(cls, name: str, coef: float = 1.0) -> "LinExpr":
        return cls({name: coef})

    @classmethod
    def constant(cls, value: float) -> "LinExpr":
        return cls(None, value)

    @classmethod
    def total(cls, exprs: Iterable["LinExpr"]) -> "LinExpr":
        out = cls()
        for e in exprs:
            out.accumulate(e)
        return out

    def copy(self) -> "LinExpr":
        return LinExpr(self.terms, self.const)

    def add_term(self, name: str, coef: float) -> None:
        v = self.terms.get(name, 0.0) + coef
        if v == 0.0:
            self.terms.pop(name, None)
        else:
            self.terms[name] = v

    def accumulate(self, other: Union["LinExpr", Number], scale: float = 1.0) -> None:
        """In-place self += scale * other."""
        if isinstance(other, Real):
            self.const += scale * float(other)
            return
        for k, c in other.terms.items():
            self.add_term(k, scale * c)
        self.const += scale * other.const

    def symbols(self) -> Iterator[str]:
        return iter(self.terms)

    def is_constant(self) -> bool:
        return not self.terms

    def evaluate(self, point: Mapping[str, float]) -> float:
        total = self.const
        for k, c in self.terms.items():
            try:
                total += c * point[k]
            except KeyError:
                raise MissingValueError(f"No value for '{k}'")
        return total

    def substitute(self, values: Mapping[str, float]) -> "LinExpr":
        """Replace the symbols present in `values` by constants."""
        out = LinExpr(const=self.const)
        for k, c in self.terms.items():
            if k in values:
                out.const += c * values[k]
            else:
                out.terms[k] = c
        return out

    def __add__(self, other):
        if isinstance(other, QuadExpr):
            return other + self
        out = self.copy()
        out.accumulate(other)
        return out

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, QuadExpr):
            return (-other) + self
        out = self.copy()
        out.accumulate(other, -1.0)
        return out

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return LinExpr({k: -c for k, c in self.terms.items()}, -self.const)

    def __mul__(self, other):
        if isinstance(other, Real):
            if other == 0:
                return LinExpr()
            return LinExpr({k: c * other for k, c in self.terms.items()}, self.const * other)
        if isinstance(other, LinExpr):
            return QuadExpr.product(self, other)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other: Number):
        return self * (1.0 / other)

    def __repr__(self) -> str:
        return f"LinExpr({format_linear(self)})"


def _key(a: str, b: str) -> Tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class QuadExpr:
    """Quadratic expression: affine part plus sum(coef * a * b)."""

    __slots__ = ("lin", "quad")
    __array_ufunc__ = None

    def __init__(self, lin: LinExpr = None, quad: Mapping[Tuple[str, str], float] = None):
        self.lin = lin.copy() if lin is not None else LinExpr()
        self.quad: Dict[Tuple[str, str], float] = {}
        if quad:
            for (a, b), c in quad.items():
                self.add_quad(a, b, c)

    @classmethod
    def product(cls, a: LinExpr, b: LinExpr) -> "QuadExpr":
        out = cls()
        for ka, ca in a.terms.items():
            for kb, cb in b.terms.items():
                out.add_quad(ka, kb, ca * cb)
        if b.const:
            out.lin.accumulate(LinExpr(a.terms), b.const)
        if a.const:
            out.lin.accumulate(LinExpr(b.terms), a.const)
        out.lin.const += a.const * b.const
        return out

    @classmethod
    def lift(cls, e: Union["QuadExpr", LinExpr, Number]) -> "QuadExpr":
        if isinstance(e, QuadExpr):
            return e
        if isinstance(e, LinExpr):
            return cls(e)
        return cls(LinExpr.constant(e))

    def copy(self) -> "QuadExpr":
        out = QuadExpr(self.lin)
        out.quad = dict(self.quad)
        return out

    def add_quad(self, a: str, b: str, coef: float) -> None:
        k = _key(a, b)
        v = self.quad.get(k, 0.0) + coef
        if v == 0.0:
            self.quad.pop(k, None)
        else:
            self.quad[k] = v

    def accumulate(self, other, scale: float = 1.0) -> None:
        if isinstance(other, QuadExpr):
            self.lin.accumulate(other.lin, scale)
            for (a, b), c in other.quad.items():
                self.add_quad(a, b, scale * c)
        else:
            self.lin.accumulate(other, scale)

    @property
    def const(self) -> float:
        return self.lin.const

    def symbols(self) -> Iterator[str]:
        seen = set(self.lin.terms)
        yield from self.lin.terms
        for a, b in self.quad:
            for k in (a, b):
                if k not in seen:
                    seen.add(k)
                    yield k

    def is_linear(self) -> bool:
        return not self.quad

    def diagonal_only(self) -> bool:
        return all(a == b for a, b in self.quad)

    def evaluate(self, point: Mapping[str, float]) -> float:
        total = self.lin.evaluate(point)
        for (a, b), c in self.quad.items():
            try:
                total += c * point[a] * point[b]
            except KeyError as e:
                raise MissingValueError(f"No value for '{e.args[0]}'")
        return total

    def __add__(self, other):
        out = self.copy()
        out.accumulate(other)
        return out

    __radd__ = __add__

    def __sub__(self, other):
        out = self.copy()
        out.accumulate(other, -1.0)
        return out

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        out = QuadExpr(-self.lin)
        out.quad = {k: -c for k, c in self.quad.items()}
        return out

    def __mul__(self, other: Number):
        if not isinstance(other, Real):
            return NotImplemented
        out = QuadExpr(self.lin * other)
        if other != 0:
            out.quad = {k: c * other for k, c in self.quad.items()}
        return out

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"QuadExpr({format_quadratic(self)})"


def _num(c: float) -> str:
    return f"{c:.12g}"


def format_linear(e: LinExpr) -> str:
    parts = [f"{'+' if c >= 0 else '-'} {_num(abs(c))} {k}" for k, c in sorted(e.terms.items())]
    if e.const or not parts:
        parts.append(f"{'+' if e.const >= 0 else '-'} {_num(abs(e.const))}")
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def format_quadratic(e: QuadExpr) -> str:
    text = format_linear(e.lin)
    for (a, b), c in sorted(e.quad.items()):
        sym = f"{a}^2" if a == b else f"{a} * {b}"
        text += f" {'+' if c >= 0 else '-'} {_num(abs(c))} {sym}"
    return text
