"""Sparse multivariate polynomials with exact partial derivatives."""

import json

import numpy as np

from .errors import InvalidArgument


class Polynomial:
    """Map from exponent tuples to coefficients in ``nvars`` variables."""

    def __init__(self, nvars, terms=None):
        self.nvars = int(nvars)
        self.terms = {}
        for exps, coef in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != self.nvars or any(e < 0 for e in exps):
                raise InvalidArgument(f"bad exponent vector {exps} for {self.nvars} variables")
            if coef != 0:
                self.terms[exps] = self.terms.get(exps, 0) + coef

    @classmethod
    def constant(cls, nvars, value=1.0):
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def monomial(cls, nvars, indices, coef=1.0):
        """Product of the listed variables (repetitions raise the power)."""
        exps = [0] * nvars
        for i in indices:
            exps[i] += 1
        return cls(nvars, {tuple(exps): coef})

    def __add__(self, other):
        out = Polynomial(self.nvars, self.terms)
        for exps, coef in other.terms.items():
            out.terms[exps] = out.terms.get(exps, 0) + coef
        out.terms = {e: c for e, c in out.terms.items() if c != 0}
        return out

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return Polynomial(self.nvars, {e: c * other for e, c in self.terms.items()})
        out = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return Polynomial(self.nvars, out)

    __rmul__ = __mul__

    def __eq__(self, other):
        return isinstance(other, Polynomial) and self.nvars == other.nvars and self.terms == other.terms

    def __repr__(self):
        return f"Polynomial({self.nvars}, {self.terms!r})"

    def degree(self):
        """Total degree; the zero polynomial has degree -1."""
        return max((sum(e) for e in self.terms), default=-1)

    def is_zero(self):
        return not self.terms

    def derivative(self, indices):
        """Partial derivative with respect to each listed variable in turn."""
        terms = dict(self.terms)
        for i in indices:
            nxt = {}
            for exps, coef in terms.items():
                if exps[i] == 0:
                    continue
                e = list(exps)
                e[i] -= 1
                nxt[tuple(e)] = nxt.get(tuple(e), 0) + coef * exps[i]
            terms = nxt
        return Polynomial(self.nvars, terms)

    def evaluate(self, values):
        """Evaluate at each row of ``values`` (shape ``(k, nvars)``) or at a single point."""
        values = np.asarray(values)
        single = values.ndim == 1
        values = np.atleast_2d(values)
        if values.shape[1] != self.nvars:
            raise InvalidArgument(f"expected {self.nvars} coordinates, got {values.shape[1]}")
        out = np.zeros(values.shape[0], dtype=np.result_type(values, float))
        for exps, coef in self.terms.items():
            term = np.full(values.shape[0], coef, dtype=out.dtype)
            for i, e in enumerate(exps):
                if e:
                    term = term * values[:, i] ** e
            out = out + term
        return out[0] if single else out

    def to_dict(self):
        return {"terms": [{"exps": list(e), "coef": c} for e, c in sorted(self.terms.items())]}

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        terms = data["terms"]
        if not terms:
            raise InvalidArgument("a polynomial document needs at least one term to fix nvars")
        nvars = len(terms[0]["exps"])
        poly = cls(nvars)
        for t in terms:
            poly = poly + cls(nvars, {tuple(t["exps"]): t["coef"]})
        return poly

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))
