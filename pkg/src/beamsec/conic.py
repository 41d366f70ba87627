"""Small conic-program builder with Hermitian matrix variables.

Programs are described with three kinds of affine expressions:

* ``Affine``    real scalar: c + sum_j a_j x_j + sum Re tr(C X)
* ``MatAffine`` Hermitian matrix: F0 + sum_j x_j F_j + sum coef P^H X P
* ``VecAffine`` complex vector: stacked blocks of c + sum_j x_j v_j + sum coef vec(P^H X R)

Every operation the transforms need (sums, real scaling, congruence,
trace against a constant, matrix-vector products, vectorization) is closed
over these forms, so a program never contains a product of two variables.
Complex matrices enter the solver through the real embedding
[[Re, -Im], [Im, Re]]; the program is compiled to cvxpy and solved there.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

PROGRAM_FORMAT = "beamsec.program/1.0"


def embed(A) -> np.ndarray:
    """Real symmetric embedding of a complex matrix (or column vector)."""
    A = np.asarray(A)
    if A.ndim == 1:
        A = A[:, None]
    return np.block([[A.real, -A.imag], [A.imag, A.real]])


def _as_c(a) -> np.ndarray:
    return np.asarray(a, dtype=complex)


# ---------------------------------------------------------------------------
# expressions


class Affine:
    """Real scalar affine function of the program variables."""

    def __init__(self, const=0.0, lin=None, mat=None):
        self.const = float(const)
        self.lin = dict(lin or {})
        self.mat = {k: _as_c(v) for k, v in (mat or {}).items()}

    @staticmethod
    def lift(x) -> "Affine":
        return x if isinstance(x, Affine) else Affine(float(x))

    def copy(self):
        return Affine(self.const, self.lin, {k: v.copy() for k, v in self.mat.items()})

    def __add__(self, other):
        other = Affine.lift(other)
        out = self.copy()
        out.const += other.const
        for k, v in other.lin.items():
            out.lin[k] = out.lin.get(k, 0.0) + v
        for k, v in other.mat.items():
            out.mat[k] = out.mat[k] + v if k in out.mat else v.copy()
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-Affine.lift(other))

    def __rsub__(self, other):
        return Affine.lift(other) - self

    def __mul__(self, s):
        if isinstance(s, (Affine, MatAffine, VecAffine)):
            raise TypeError("products of affine expressions are not affine")
        s = float(s)
        return Affine(self.const * s, {k: v * s for k, v in self.lin.items()},
                      {k: v * s for k, v in self.mat.items()})

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / float(s))

    def times(self, C) -> "MatAffine":
        """Scalar expression times a constant Hermitian matrix (scalar variables only)."""
        if self.mat:
            raise TypeError("matrix-variable terms cannot multiply a matrix")
        C = _as_c(C)
        return MatAffine(C.shape[0], self.const * C, {k: v * C for k, v in self.lin.items()})

    def to_vec(self) -> "VecAffine":
        return VecAffine([_VecBlock(1, np.array([self.const], complex),
                                    {k: np.array([v], complex) for k, v in self.lin.items()}, [], real=True,
                                    trace=[(k, C) for k, C in self.mat.items()])])

    def value(self, values: "Values") -> float:
        out = self.const + sum(c * values.scalars[k] for k, c in self.lin.items())
        for k, C in self.mat.items():
            out += float(np.real(np.trace(C @ values.matrices[k])))
        return float(out)

    def variables(self):
        return set(self.lin) | set(self.mat)


class MatAffine:
    """Hermitian-matrix-valued affine map."""

    def __init__(self, size: int, const=None, lin=None, cong=None):
        self.size = int(size)
        self.const = np.zeros((size, size), complex) if const is None else _as_c(const)
        self.lin = {k: _as_c(v) for k, v in (lin or {}).items()}
        self.cong = [(k, _as_c(P), float(c)) for k, P, c in (cong or [])]

    @staticmethod
    def constant(C) -> "MatAffine":
        C = _as_c(C)
        return MatAffine(C.shape[0], C)

    def copy(self):
        return MatAffine(self.size, self.const.copy(), {k: v.copy() for k, v in self.lin.items()},
                         list(self.cong))

    def _lift(self, other):
        if isinstance(other, MatAffine):
            return other
        return MatAffine.constant(other)

    def __add__(self, other):
        other = self._lift(other)
        if other.size != self.size:
            raise ValueError("size mismatch")
        out = self.copy()
        out.const = out.const + other.const
        for k, v in other.lin.items():
            out.lin[k] = out.lin[k] + v if k in out.lin else v.copy()
        out.cong = out.cong + list(other.cong)
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, s):
        if isinstance(s, Affine):
            if self.cong or self.lin:
                raise TypeError("products of affine expressions are not affine")
            return s.times(self.const)
        s = float(s)
        return MatAffine(self.size, self.const * s, {k: v * s for k, v in self.lin.items()},
                         [(k, P, c * s) for k, P, c in self.cong])

    __rmul__ = __mul__

    def cong_by(self, G) -> "MatAffine":
        """G^H M G for a constant (size x p) matrix G."""
        G = _as_c(G)
        if G.ndim == 1:
            G = G[:, None]
        Gh = G.conj().T
        return MatAffine(G.shape[1], Gh @ self.const @ G, {k: Gh @ v @ G for k, v in self.lin.items()},
                         [(k, P @ G, c) for k, P, c in self.cong])

    def trace_with(self, C=None) -> Affine:
        """Re tr(C M); C defaults to the identity."""
        C = np.eye(self.size, dtype=complex) if C is None else _as_c(C)
        out = Affine(np.real(np.trace(C @ self.const)),
                     {k: float(np.real(np.trace(C @ v))) for k, v in self.lin.items()})
        for k, P, c in self.cong:
            term = c * (P @ C @ P.conj().T)
            out.mat[k] = out.mat[k] + term if k in out.mat else term
        return out

    def quad(self, v) -> Affine:
        """Re(v^H M v)."""
        v = _as_c(v)
        return self.trace_with(np.outer(v, v.conj()))

    def apply(self, v, left=None) -> "VecAffine":
        """M v (or left @ M v for a constant matrix ``left``) as a vector expression."""
        v = _as_c(v)
        Lm = np.eye(self.size, dtype=complex) if left is None else _as_c(left)
        return VecAffine([_VecBlock(Lm.shape[0], Lm @ self.const @ v, {k: Lm @ F @ v for k, F in self.lin.items()},
                                    [(k, P @ Lm.conj().T, (P @ v)[:, None], c) for k, P, c in self.cong])])

    def vec(self) -> "VecAffine":
        """Row-major vectorization of M."""
        return VecAffine([_VecBlock(self.size ** 2, self.const.ravel(),
                                    {k: F.ravel() for k, F in self.lin.items()},
                                    [(k, P, P, c) for k, P, c in self.cong])])

    def value(self, values: "Values") -> np.ndarray:
        out = self.const.copy()
        for k, F in self.lin.items():
            out = out + values.scalars[k] * F
        for k, P, c in self.cong:
            out = out + c * (P.conj().T @ values.matrices[k] @ P)
        return 0.5 * (out + out.conj().T)

    def variables(self):
        return set(self.lin) | {k for k, _, _ in self.cong}


@dataclass
class _VecBlock:
    length: int
    const: np.ndarray
    lin: dict
    mat: list           # (name, P, R, coef) -> coef * vec(P^H X R)
    real: bool = False  # imaginary part known to be zero
    trace: list = field(default_factory=list)  # (name, C) -> Re tr(C X), length-1 blocks only

    def scaled(self, s: float) -> "_VecBlock":
        return _VecBlock(self.length, self.const * s, {k: v * s for k, v in self.lin.items()},
                         [(k, P, R, c * s) for k, P, R, c in self.mat], self.real,
                         [(k, C * s) for k, C in self.trace])

    def value(self, values: "Values") -> np.ndarray:
        out = self.const.astype(complex).copy()
        for k, v in self.lin.items():
            out = out + values.scalars[k] * v
        for k, P, R, c in self.mat:
            out = out + c * (P.conj().T @ values.matrices[k] @ R).ravel()
        for k, C in self.trace:
            out = out + np.real(np.trace(C @ values.matrices[k]))
        return out


class VecAffine:
    """Complex vector expression made of concatenated blocks."""

    def __init__(self, blocks):
        self.blocks = list(blocks)

    @staticmethod
    def stack(*parts) -> "VecAffine":
        blocks = []
        for p in parts:
            if isinstance(p, (int, float, Affine)):
                p = Affine.lift(p).to_vec()
            blocks.extend(p.blocks)
        return VecAffine(blocks)

    def __mul__(self, s):
        return VecAffine([b.scaled(float(s)) for b in self.blocks])

    __rmul__ = __mul__

    def __len__(self):
        return sum(b.length for b in self.blocks)

    def value(self, values: "Values") -> np.ndarray:
        if not self.blocks:
            return np.zeros(0, complex)
        return np.concatenate([b.value(values) for b in self.blocks])

    def variables(self):
        out = set()
        for b in self.blocks:
            out |= set(b.lin) | {k for k, *_ in b.mat} | {k for k, _ in b.trace}
        return out


# ---------------------------------------------------------------------------
# program


@dataclass
class Values:
    scalars: dict
    matrices: dict


@dataclass
class ConicSolution:
    status: str
    objective: Optional[float]
    values: Optional[Values]
    stats: dict
    duals: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "near_optimal")


class Program:
    """Variables, linear / SOC / LMI constraints and a maximized affine objective."""

    def __init__(self, name: str = ""):
        self.name = name
        self.scalars: dict[str, tuple] = {}
        self.matrices: dict[str, tuple] = {}
        self.linear: list[tuple] = []   # (expr, sense, label), sense in '>=', '<=', '=='
        self.socs: list[tuple] = []     # (head, tail, label)
        self.lmis: list[tuple] = []     # (MatAffine, label)
        self.objective = Affine()

    # variables -------------------------------------------------------------
    def _check_new(self, name):
        if name in self.scalars or name in self.matrices:
            raise ValueError(f"duplicate variable name {name!r}")

    def scalar(self, name: str, lb: Optional[float] = None, ub: Optional[float] = None) -> Affine:
        self._check_new(name)
        self.scalars[name] = (lb, ub)
        return Affine(0.0, {name: 1.0})

    def matrix(self, name: str, n: int, psd: bool = True, hermitian: bool = True) -> MatAffine:
        if n < 1:
            raise ValueError("matrix dimension must be at least 1")
        self._check_new(name)
        self.matrices[name] = (int(n), bool(psd), bool(hermitian))
        return MatAffine(n, cong=[(name, np.eye(n, dtype=complex), 1.0)])

    def var(self, name: str):
        if name in self.scalars:
            return Affine(0.0, {name: 1.0})
        n = self.matrices[name][0]
        return MatAffine(n, cong=[(name, np.eye(n, dtype=complex), 1.0)])

    # constraints -----------------------------------------------------------
    def _check_vars(self, names):
        missing = set(names) - set(self.scalars) - set(self.matrices)
        if missing:
            raise KeyError(f"unknown variables {sorted(missing)}")

    def add_linear(self, expr, sense: str = ">=", rhs: float = 0.0, label: str = "") -> int:
        if sense not in (">=", "<=", "=="):
            raise ValueError("sense must be '>=', '<=' or '=='")
        expr = Affine.lift(expr) - rhs
        self._check_vars(expr.variables())
        self.linear.append((expr, sense, label))
        return len(self.linear) - 1

    def add_soc(self, head, tail=None, label: str = "") -> int:
        """||tail|| <= head. With ``tail`` omitted, ``head`` is a sequence [head, *tail]."""
        if tail is None:
            seq = list(head)
            if len(seq) < 2:
                raise ValueError("a second-order cone needs a head and at least one tail entry")
            head, tail = seq[0], VecAffine.stack(*seq[1:])
        elif not isinstance(tail, VecAffine):
            tail = VecAffine.stack(*tail) if isinstance(tail, (list, tuple)) else VecAffine.stack(tail)
        if len(tail) < 1:
            raise ValueError("a second-order cone needs a head and at least one tail entry")
        head = Affine.lift(head)
        self._check_vars(head.variables() | tail.variables())
        self.socs.append((head, tail, label))
        return len(self.socs) - 1

    def add_lmi(self, M: MatAffine, label: str = "") -> int:
        self._check_vars(M.variables())
        self.lmis.append((M, label))
        return len(self.lmis) - 1

    def maximize(self, expr) -> None:
        expr = Affine.lift(expr)
        self._check_vars(expr.variables())
        self.objective = expr

    # evaluation --------------------------------------------------------------
    def residuals(self, values: Values) -> dict:
        """Largest violation per constraint family at the given point."""
        res = {"linear": 0.0, "soc": 0.0, "lmi": 0.0, "bounds": 0.0, "psd": 0.0}
        for expr, sense, _ in self.linear:
            v = expr.value(values)
            viol = {">=": -v, "<=": v, "==": abs(v)}[sense]
            res["linear"] = max(res["linear"], viol)
        for head, tail, _ in self.socs:
            res["soc"] = max(res["soc"], float(np.linalg.norm(tail.value(values))) - head.value(values))
        for M, _ in self.lmis:
            res["lmi"] = max(res["lmi"], -float(np.linalg.eigvalsh(M.value(values))[0]))
        for name, (lb, ub) in self.scalars.items():
            x = values.scalars[name]
            if lb is not None:
                res["bounds"] = max(res["bounds"], lb - x)
            if ub is not None:
                res["bounds"] = max(res["bounds"], x - ub)
        for name, (n, psd, _) in self.matrices.items():
            if psd:
                res["psd"] = max(res["psd"], -float(np.linalg.eigvalsh(values.matrices[name])[0]))
        res["max"] = max(res.values())
        return res

    # serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": PROGRAM_FORMAT,
            "name": self.name,
            "scalars": {k: list(v) for k, v in self.scalars.items()},
            "matrices": {k: list(v) for k, v in self.matrices.items()},
            "linear": [[_enc_affine(e), s, lab] for e, s, lab in self.linear],
            "socs": [[_enc_affine(h), _enc_vec(t), lab] for h, t, lab in self.socs],
            "lmis": [[_enc_mat(M), lab] for M, lab in self.lmis],
            "objective": _enc_affine(self.objective),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_dict(d: dict) -> "Program":
        fmt = d.get("format", "")
        if fmt.split("/")[0] != PROGRAM_FORMAT.split("/")[0] or fmt.split("/")[-1].split(".")[0] != "1":
            raise ValueError(f"unsupported program format {fmt!r}")
        p = Program(d.get("name", ""))
        p.scalars = {k: tuple(v) for k, v in d["scalars"].items()}
        p.matrices = {k: (int(v[0]), bool(v[1]), bool(v[2])) for k, v in d["matrices"].items()}
        p.linear = [(_dec_affine(e), s, lab) for e, s, lab in d["linear"]]
        p.socs = [(_dec_affine(h), _dec_vec(t), lab) for h, t, lab in d["socs"]]
        p.lmis = [(_dec_mat(M), lab) for M, lab in d["lmis"]]
        p.objective = _dec_affine(d["objective"])
        return p

    @staticmethod
    def from_json(text: str) -> "Program":
        return Program.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def summary(self) -> dict:
        return {"scalars": len(self.scalars), "matrices": len(self.matrices), "linear": len(self.linear),
                "socs": len(self.socs), "lmis": len(self.lmis)}


def add_matrix_var(program: Program, name: str, n: int, psd: bool = True) -> MatAffine:
    return program.matrix(name, n, psd=psd)


def add_soc(program: Program, affine_map, tail=None, label: str = "") -> int:
    return program.add_soc(affine_map, tail, label)


# ---------------------------------------------------------------------------
# JSON encoding of expressions


def _enc_arr(a) -> dict:
    a = np.asarray(a)
    return {"shape": list(a.shape), "re": np.real(a).ravel().tolist(), "im": np.imag(a).ravel().tolist()}


def _dec_arr(d) -> np.ndarray:
    out = np.empty(len(d["re"]), complex)
    out.real = d["re"]
    out.imag = d["im"]
    return out.reshape(d["shape"])


def _enc_affine(e: Affine) -> dict:
    return {"const": e.const, "lin": dict(sorted(e.lin.items())),
            "mat": {k: _enc_arr(v) for k, v in sorted(e.mat.items())}}


def _dec_affine(d) -> Affine:
    return Affine(d["const"], d["lin"], {k: _dec_arr(v) for k, v in d["mat"].items()})


def _enc_mat(M: MatAffine) -> dict:
    return {"size": M.size, "const": _enc_arr(M.const),
            "lin": {k: _enc_arr(v) for k, v in sorted(M.lin.items())},
            "cong": [[k, _enc_arr(P), c] for k, P, c in M.cong]}


def _dec_mat(d) -> MatAffine:
    return MatAffine(d["size"], _dec_arr(d["const"]), {k: _dec_arr(v) for k, v in d["lin"].items()},
                     [(k, _dec_arr(P), c) for k, P, c in d["cong"]])


def _enc_vec(v: VecAffine) -> list:
    return [{"length": b.length, "const": _enc_arr(b.const), "real": b.real,
             "lin": {k: _enc_arr(x) for k, x in sorted(b.lin.items())},
             "mat": [[k, _enc_arr(P), _enc_arr(R), c] for k, P, R, c in b.mat],
             "trace": [[k, _enc_arr(C)] for k, C in b.trace]} for b in v.blocks]


def _dec_vec(blocks) -> VecAffine:
    return VecAffine([_VecBlock(b["length"], _dec_arr(b["const"]), {k: _dec_arr(x) for k, x in b["lin"].items()},
                                [(k, _dec_arr(P), _dec_arr(R), c) for k, P, R, c in b["mat"]], b["real"],
                                [(k, _dec_arr(C)) for k, C in b["trace"]]) for b in blocks])


# ---------------------------------------------------------------------------
# compilation to cvxpy


class _Compiled:
    def __init__(self, program: Program):
        self.program = program
        self.s = {k: cp.Variable(name=k) for k in program.scalars}
        self.Xr, self.Xi, self.EX = {}, {}, {}
        for name, (n, psd, herm) in program.matrices.items():
            Xr = cp.Variable((n, n), symmetric=True, name=f"{name}_re")
            if herm and n > 1:
                iu = np.triu_indices(n, 1)
                xi = cp.Variable(len(iu[0]), name=f"{name}_im")
                rows = np.concatenate([iu[0] * n + iu[1], iu[1] * n + iu[0]])
                cols = np.concatenate([np.arange(len(iu[0]))] * 2)
                vals = np.concatenate([np.ones(len(iu[0])), -np.ones(len(iu[0]))])
                S = sp.csr_matrix((vals, (rows, cols)), shape=(n * n, len(iu[0])))
                Xi = cp.reshape(S @ xi, (n, n), order="C")
            else:
                Xi = None
            self.Xr[name], self.Xi[name] = Xr, Xi
            if Xi is None:
                Z = np.zeros((n, n))
                self.EX[name] = cp.bmat([[Xr, Z], [Z, Xr]]) if herm else Xr
            else:
                self.EX[name] = cp.bmat([[Xr, -Xi], [Xi, Xr]])

    def _herm(self, name):
        return self.program.matrices[name][2]

    def affine(self, e: Affine):
        terms = [e.const]
        for k, c in e.lin.items():
            if c != 0:
                terms.append(c * self.s[k])
        for k, C in e.mat.items():
            terms.append(cp.sum(cp.multiply(np.real(C).T, self.Xr[k])))
            if self.Xi[k] is not None:
                # Re tr(C X) = <Re C^T, Re X> - <Im C^T, Im X>
                terms.append(-cp.sum(cp.multiply(np.imag(C).T, self.Xi[k])))
        return cp.sum(cp.hstack([t if isinstance(t, cp.Expression) else cp.Constant(t) for t in terms])) \
            if len(terms) > 1 else cp.Constant(e.const)

    def mat(self, M: MatAffine):
        out = embed(M.const)
        expr = cp.Constant(out)
        for k, F in M.lin.items():
            expr = expr + self.s[k] * embed(F)
        for k, P, c in M.cong:
            if self._herm(k):
                E = sp.csr_matrix(embed(P))
                expr = expr + c * (E.T @ self.EX[k] @ E)
            else:
                Pr = sp.csr_matrix(np.real(P))
                blk = c * (Pr.T @ self.EX[k] @ Pr)
                Z = np.zeros((M.size, M.size))
                expr = expr + cp.bmat([[blk, Z], [Z, blk]])
        return expr

    def vec(self, V: VecAffine):
        parts = []
        for b in V.blocks:
            re = [np.real(b.const)]
            im = [np.imag(b.const)]
            for k, v in b.lin.items():
                re.append(self.s[k] * np.real(v))
                im.append(self.s[k] * np.imag(v))
            for k, P, R, c in b.mat:
                a, q = P.shape[1], R.shape[1]
                if self._herm(k):
                    ER = sp.csr_matrix(np.vstack([np.real(R), np.imag(R)]))
                    EP = sp.csr_matrix(embed(P))
                    Y = c * (EP.T @ (self.EX[k] @ ER))   # (2a, q): [Re; Im] of P^H X R
                    re.append(cp.reshape(Y[:a, :], (a * q,), order="C"))
                    im.append(cp.reshape(Y[a:, :], (a * q,), order="C"))
                else:
                    Yr = c * (sp.csr_matrix(np.real(P)).T @ self.Xr[k] @ sp.csr_matrix(np.real(R)))
                    re.append(cp.reshape(Yr, (a * q,), order="C"))
            for k, C in b.trace:
                re.append(cp.reshape(self.affine(Affine(0.0, {}, {k: C})), (1,), order="C"))
            parts.append(_sum_terms(re, b.length))
            if not b.real:
                parts.append(_sum_terms(im, b.length))
        return cp.hstack(parts)

    def constraints(self):
        p = self.program
        cons, lin_handles = [], []
        for name, (lb, ub) in p.scalars.items():
            if lb is not None:
                cons.append(self.s[name] >= lb)
            if ub is not None:
                cons.append(self.s[name] <= ub)
        for name, (n, psd, herm) in p.matrices.items():
            if psd:
                cons.append(self.EX[name] >> 0)
        for e, sense, _ in p.linear:
            x = self.affine(e)
            c = {">=": x >= 0, "<=": x <= 0, "==": x == 0}[sense]
            cons.append(c)
            lin_handles.append(c)
        for head, tail, _ in p.socs:
            cons.append(cp.SOC(self.affine(head), self.vec(tail)))
        for M, _ in p.lmis:
            E = self.mat(M)
            cons.append(0.5 * (E + E.T) >> 0)
        return cons, lin_handles

    def values(self) -> Values:
        scal = {k: float(v.value) for k, v in self.s.items()}
        mats = {}
        for name in self.program.matrices:
            Xr = np.asarray(self.Xr[name].value, dtype=float)
            X = Xr.astype(complex)
            if self.Xi[name] is not None:
                X = X + 1j * np.asarray(self.Xi[name].value, dtype=float)
            mats[name] = 0.5 * (X + X.conj().T)
        return Values(scal, mats)


def _sum_terms(terms, length):
    const = np.zeros(length)
    exprs = []
    for t in terms:
        if isinstance(t, cp.Expression):
            exprs.append(t)
        else:
            const = const + np.asarray(t, float)
    out = cp.Constant(const)
    for e in exprs:
        out = out + e
    return out


_STATUS = {
    cp.OPTIMAL: "optimal",
    cp.OPTIMAL_INACCURATE: "near_optimal",
    cp.INFEASIBLE: "infeasible",
    cp.INFEASIBLE_INACCURATE: "infeasible",
    cp.UNBOUNDED: "unbounded",
    cp.UNBOUNDED_INACCURATE: "unbounded",
}


def _solver_options(solver: str, tol: float) -> dict:
    if solver == "CLARABEL":
        return {"tol_gap_abs": tol, "tol_gap_rel": tol, "tol_feas": tol, "tol_ktratio": 1e-7,
                "max_iter": 300}
    if solver == "SCS":
        return {"eps_abs": tol, "eps_rel": tol, "max_iters": 200000}
    if solver == "CVXOPT":
        return {"abstol": tol, "reltol": tol, "feastol": tol}
    return {}


def solve(program: Program, tol: float = 1e-8, solver: str = "CLARABEL",
          accept_tol: float = 1e-6) -> ConicSolution:
    """Compile and solve; statuses: optimal, near_optimal, infeasible, unbounded, numerical_failure."""
    t0 = time.perf_counter()
    comp = _Compiled(program)
    cons, lin = comp.constraints()
    obj = comp.affine(program.objective)
    prob = cp.Problem(cp.Maximize(obj), cons)
    stats = {"solver": solver, "tol": tol, **program.summary()}
    try:
        prob.solve(solver=solver, **_solver_options(solver, tol))
    except (cp.SolverError, ArithmeticError, ValueError) as exc:
        stats["error"] = str(exc)
        stats["time"] = time.perf_counter() - t0
        return ConicSolution("numerical_failure", None, None, stats)
    status = _STATUS.get(prob.status, "numerical_failure")
    stats["time"] = time.perf_counter() - t0
    stats["iterations"] = getattr(prob.solver_stats, "num_iters", None)
    stats["raw_status"] = prob.status
    if status not in ("optimal", "near_optimal"):
        return ConicSolution(status, None, None, stats)
    try:
        values = comp.values()
    except (TypeError, ValueError):
        return ConicSolution("numerical_failure", None, None, stats)
    res = program.residuals(values)
    stats["residuals"] = res
    if status == "near_optimal" and res["max"] > accept_tol:
        return ConicSolution("numerical_failure", None, None, stats)
    duals = {}
    for i, c in enumerate(lin):
        d = c.dual_value
        duals[i] = float(np.sum(d)) if d is not None else 0.0
    return ConicSolution(status, float(program.objective.value(values)), values, stats, duals)


# ---------------------------------------------------------------------------
# rank-one extraction


@dataclass
class RankOneResult:
    w: np.ndarray
    residual: float
    path: str


def rank_one_extract(X, surrogate: Optional[Callable[[np.ndarray], float]] = None, power_cap=None,
                     rng=None, n_candidates: int = 200, threshold: float = 0.05) -> RankOneResult:
    """Dominant eigenvector, or Gaussian randomization when X is far from rank one.

    Randomization draws candidates from CN(0, X), scales each so that no
    element exceeds ``power_cap`` (default: the diagonal of X) and keeps the
    candidate with the largest ``surrogate`` (default: w^H X w).
    """
    X = np.asarray(X, dtype=complex)
    X = 0.5 * (X + X.conj().T)
    lam, V = np.linalg.eigh(X)
    lam1 = float(lam[-1])
    if not lam1 > 0:
        raise ValueError("degenerate matrix: largest eigenvalue is not positive")
    lam2 = float(lam[-2]) if lam.size > 1 else 0.0
    residual = max(lam2, 0.0) / lam1
    w = np.sqrt(lam1) * V[:, -1]
    if residual <= threshold:
        return RankOneResult(w, residual, "eigen")
    rng = np.random.default_rng(0) if rng is None else rng
    cap = np.real(np.diag(X)) if power_cap is None else np.broadcast_to(np.asarray(power_cap, float), lam.shape)
    score = surrogate or (lambda v: float(np.real(np.vdot(v, X @ v))))
    root = V * np.sqrt(np.clip(lam, 0.0, None))
    z = (rng.standard_normal((n_candidates, lam.size)) + 1j * rng.standard_normal((n_candidates, lam.size))) / np.sqrt(2)
    best, best_val = w, -np.inf
    for cand in z @ root.T:
        mag2 = np.abs(cand) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(mag2 > 0, cap / mag2, np.inf)
        s = np.sqrt(np.min(ratio)) if np.isfinite(np.min(ratio)) else 0.0
        cand = s * cand
        val = score(cand)
        if val > best_val:
            best, best_val = cand, val
    return RankOneResult(best, residual, "randomization")
