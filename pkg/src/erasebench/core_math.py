"""Numerical kernels shared by the unlearning algorithms.

Inverse Hessian-vector-product solvers, norm clipping, seeded Gaussian
perturbation and finite-value guards. Everything here is pure given its
inputs; randomness always comes from explicitly seeded streams.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ContractViolation(ValueError):
    """An operation was called with inputs that break its preconditions."""


class DivergenceError(ArithmeticError):
    """A non-finite value reached a place that cannot represent divergence."""


@dataclass
class ParamVector:
    """Flat float64 parameter storage split into named, contiguous segments."""

    values: np.ndarray
    segments: list[tuple[str, int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        if not self.segments:
            self.segments = [("values", 0, self.values.size)] if self.values.size else []
        names = [name for name, _, _ in self.segments]
        if len(set(names)) != len(names):
            raise ContractViolation(f"duplicate segment names: {names}")
        expected = 0
        for name, offset, length in sorted(self.segments, key=lambda s: s[1]):
            if offset != expected or length < 0:
                raise ContractViolation(f"segment {name!r} does not tile the vector")
            expected = offset + length
        if expected != self.values.size:
            raise ContractViolation(
                f"segments cover {expected} values but vector has {self.values.size}"
            )
        self.segments = [(str(n), int(o), int(l)) for n, o, l in self.segments]

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ParamVector":
        segments, offset = [], 0
        for name, arr in arrays.items():
            segments.append((name, offset, int(np.size(arr))))
            offset += int(np.size(arr))
        if arrays:
            values = np.concatenate([np.ravel(a).astype(np.float64) for a in arrays.values()])
        else:
            values = np.zeros(0)
        return cls(values, segments)

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def names(self) -> list[str]:
        return [name for name, _, _ in self.segments]

    def slice_of(self, name: str) -> slice:
        for seg_name, offset, length in self.segments:
            if seg_name == name:
                return slice(offset, offset + length)
        raise KeyError(name)

    def segment(self, name: str) -> np.ndarray:
        """View (not a copy) of one segment."""
        return self.values[self.slice_of(name)]

    def mask(self, names: Iterable[str]) -> np.ndarray:
        """Boolean coordinate mask selecting the given segments."""
        out = np.zeros(self.size, dtype=bool)
        for name in names:
            out[self.slice_of(name)] = True
        return out

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), list(self.segments))

    def with_values(self, values: np.ndarray) -> "ParamVector":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise ContractViolation(f"shape {values.shape} != {self.values.shape}")
        return ParamVector(values.copy(), list(self.segments))

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.segments == other.segments and np.array_equal(self.values, other.values)


class HvpOracle:
    """Matrix-free operator ``v -> (H + damping * I) v``.

    ``apply`` computes ``H v`` for some symmetric ``H`` of size ``dim``.
    """

    def __init__(self, apply: Callable[[np.ndarray], np.ndarray], dim: int, damping: float = 0.0):
        if damping < 0:
            raise ContractViolation("damping must be nonnegative")
        self._apply = apply
        self.dim = int(dim)
        self.damping = float(damping)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, damping: float = 0.0) -> "HvpOracle":
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(lambda v: matrix @ v, matrix.shape[0], damping)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ContractViolation(f"oracle expects dimension {self.dim}, got {v.shape}")
        out = np.asarray(self._apply(v), dtype=np.float64)
        if self.damping:
            out = out + self.damping * v
        return out


@dataclass
class SolveReport:
    solution: np.ndarray
    iterations: int
    residual_norm: float
    status: str  # "converged" | "max_iters" | "diverged"
    negative_curvature: bool = False

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual_norm": self.residual_norm,
            "status": self.status,
            "negative_curvature": self.negative_curvature,
        }


def finite_check(v) -> str:
    """Return ``"ok"`` if every element is finite, else ``"nonfinite"``."""
    return "ok" if bool(np.all(np.isfinite(np.asarray(v, dtype=np.float64)))) else "nonfinite"


def _check_dim(oracle: HvpOracle, rhs: np.ndarray) -> np.ndarray:
    rhs = np.asarray(rhs, dtype=np.float64).reshape(-1)
    if rhs.size != oracle.dim:
        raise ContractViolation(f"rhs has dimension {rhs.size}, oracle has {oracle.dim}")
    return rhs


def cg_solve(oracle: HvpOracle, rhs, tol: float = 1e-5, max_iters: int = 100,
             truncate_on_negative_curvature: bool = False) -> SolveReport:
    """Conjugate gradient for ``(H + damping I) x = rhs``.

    Stops when ``||A x - rhs|| <= tol * ||rhs||``. Any non-finite value in the
    iteration aborts with status ``diverged`` and returns the last finite
    iterate.

    With ``truncate_on_negative_curvature`` the solve behaves like the inner
    loop of line-search Newton-CG: the first search direction with
    ``p.A p <= 0`` ends the iteration, returning the current iterate (or
    ``rhs`` itself if that happens on the first iteration). The report then
    has status ``max_iters`` and ``negative_curvature=True``.
    """
    rhs = _check_dim(oracle, rhs)
    if finite_check(rhs) != "ok":
        raise ContractViolation("rhs must be finite")
    if tol <= 0 or max_iters < 1:
        raise ContractViolation("tol must be > 0 and max_iters >= 1")

    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rr = float(r @ r)
    target = tol * np.sqrt(rr)
    if np.sqrt(rr) <= target or rr == 0.0:
        return SolveReport(x, 0, float(np.sqrt(rr)), "converged")

    with np.errstate(all="ignore"):
        for it in range(1, max_iters + 1):
            Ap = oracle(p)
            pAp = float(p @ Ap)
            if truncate_on_negative_curvature and np.isfinite(pAp) and pAp <= 0.0:
                sol = rhs.copy() if it == 1 else x
                res = float(np.linalg.norm(oracle(sol) - rhs)) if it == 1 else float(np.sqrt(rr))
                return SolveReport(sol, it - 1, res, "max_iters", True)
            alpha = rr / pAp if pAp != 0.0 else np.inf
            x_new = x + alpha * p
            r_new = r - alpha * Ap
            rr_new = float(r_new @ r_new)
            if not (np.isfinite(rr_new) and np.all(np.isfinite(x_new))):
                return SolveReport(x, it - 1, float(np.sqrt(rr)), "diverged")
            x, r = x_new, r_new
            if np.sqrt(rr_new) <= target:
                return SolveReport(x, it, float(np.sqrt(rr_new)), "converged")
            p = r + (rr_new / rr) * p
            rr = rr_new
    return SolveReport(x, max_iters, float(np.sqrt(rr)), "max_iters")


def neumann_inverse_hvp(
    oracle: HvpOracle,
    rhs,
    scale: float,
    damping: float = 0.0,
    iters: int = 50,
    tol: float = 0.0,
) -> SolveReport:
    """Truncated Neumann-series estimate of ``(H + damping I)^-1 rhs``.

    Iterates ``u <- rhs + (I - scale * A) u`` with ``A = oracle + damping I``
    and returns ``scale * u``. The series only converges when the spectral
    radius of ``I - scale * A`` is below one; otherwise the iterate blows up
    and the report comes back ``diverged``. With ``tol > 0`` the loop stops
    early once the relative change of ``u`` falls below ``tol``.
    """
    rhs = _check_dim(oracle, rhs)
    if scale <= 0 or iters < 1:
        raise ContractViolation("scale must be > 0 and iters >= 1")

    def apply(v):
        out = oracle(v)
        return out + damping * v if damping else out

    u = rhs.copy()
    with np.errstate(all="ignore"):
        for it in range(1, iters + 1):
            u_new = rhs + u - scale * apply(u)
            if finite_check(u_new) != "ok":
                return SolveReport(scale * u, it - 1, float("inf"), "diverged")
            change = float(np.linalg.norm(u_new - u))
            u = u_new
            if tol > 0 and change <= tol * max(float(np.linalg.norm(u)), 1e-300):
                x = scale * u
                res = float(np.linalg.norm(apply(x) - rhs))
                return SolveReport(x, it, res, "converged")
        x = scale * u
        res = float(np.linalg.norm(apply(x) - rhs))
    if not np.isfinite(res):
        return SolveReport(x, iters, float("inf"), "diverged")
    return SolveReport(x, iters, res, "max_iters")


def clip_by_norm(update, max_norm: float) -> np.ndarray:
    """Rescale ``update`` so that its L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ContractViolation("max_norm must be positive")
    update = np.asarray(update, dtype=np.float64)
    if finite_check(update) != "ok":
        raise DivergenceError("cannot clip a non-finite update")
    norm = float(np.linalg.norm(update))
    if norm <= max_norm:
        return update.copy()
    out = update * (max_norm / norm)
    # rounding can leave the norm a hair above the bound
    new_norm = float(np.linalg.norm(out))
    if new_norm > max_norm:
        out *= max_norm / new_norm * (1 - 1e-15)
    return out


def _key_word(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & 0xFFFFFFFF


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for a named key path, e.g. ``stream(seed, step, "user_embedding")``.

    Keys may be ints or strings; strings are hashed with CRC32 so the stream
    does not depend on Python's randomized ``hash``.
    """
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF] + [_key_word(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(words))


def gaussian_perturb(
    params: ParamVector,
    sigma: float,
    segment_filter: Callable[[str], bool] | Sequence[str] | None = None,
    seed: int = 0,
    step: int = 0,
) -> ParamVector:
    """Add i.i.d. ``N(0, sigma^2)`` noise to the selected segments.

    Each segment draws from its own stream keyed by ``(seed, step, name)``,
    so perturbing disjoint segment groups commutes and results do not depend
    on segment order.
    """
    if sigma < 0:
        raise ContractViolation("sigma must be nonnegative")
    out = params.copy()
    if sigma == 0:
        return out
    if segment_filter is None:
        selected = params.names
    elif callable(segment_filter):
        selected = [n for n in params.names if segment_filter(n)]
    else:
        selected = [n for n in params.names if n in set(segment_filter)]
    for name in selected:
        sl = out.slice_of(name)
        rng = stream(seed, step, name)
        out.values[sl] += rng.normal(0.0, sigma, size=sl.stop - sl.start)
    return out
