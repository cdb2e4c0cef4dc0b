"""Dense graph shift operators and the linear algebra the rest of the package needs.

A :class:`Gso` wraps a symmetric ``n x n`` float64 matrix.  Graph signals are
plain 1-D numpy arrays of length ``n`` (or ``(batch, n)`` stacks).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SYMMETRY_TOL = 1e-9
POWER_TOL = 1e-8
POWER_MAX_ITERS = 5000


class GraphError(ValueError):
    """Base class for invalid graph inputs."""


class NonSquare(GraphError):
    pass


class AsymmetryTooLarge(GraphError):
    pass


class NonFiniteEntry(GraphError):
    pass


class DimensionMismatch(GraphError):
    pass


class NotAPermutation(GraphError):
    pass


class NoConvergence(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Gso:
    """Symmetric graph shift operator.

    Build through :func:`gso_from_matrix`; the constructor trusts its input.
    The spectral norm is computed lazily and cached.
    """

    s: np.ndarray
    _norm: list = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return self.s.shape[0]

    @property
    def spectral_norm_cache(self) -> float | None:
        return self._norm[0] if self._norm else None

    def spectral_norm(self) -> float:
        if not self._norm:
            self._norm.append(_power_iteration(self.s))
        return self._norm[0]

    def __array__(self, dtype=None, copy=None):
        return self.s if dtype is None else self.s.astype(dtype)


def gso_from_matrix(m, tol: float = SYMMETRY_TOL) -> Gso:
    m = np.array(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteEntry("matrix contains NaN or inf")
    asym = np.max(np.abs(m - m.T)) if m.size else 0.0
    if asym > tol:
        raise AsymmetryTooLarge(f"max |m - m^T| = {asym:.3g} exceeds {tol:g}")
    s = (m + m.T) / 2
    s.setflags(write=False)
    return Gso(s)


def _power_iteration(a: np.ndarray, tol: float = POWER_TOL,
                     max_iters: int = POWER_MAX_ITERS, seed: int = 0) -> float:
    n = a.shape[0]
    if n == 0:
        raise DimensionMismatch("spectral norm of an empty operator")
    if not np.any(a):
        return 0.0
    v = np.ones(n) / np.sqrt(n)
    rng = None
    est = 0.0
    stalls = 0
    for _ in range(max_iters):
        w = a @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector sits in the null space; restart from a seeded random vector
            rng = rng or np.random.default_rng(seed)
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            stalls += 1
            if stalls > 10:
                raise NoConvergence("power iteration keeps collapsing to zero")
            continue
        if abs(nw - est) <= tol * nw:
            return float(nw)
        est = nw
        v = w / nw
    raise NoConvergence(f"power iteration did not reach rel. tol {tol:g} in {max_iters} iterations")


def spectral_norm(g, method: str = "power") -> float:
    """Operator 2-norm of a symmetric matrix (largest absolute eigenvalue).

    ``method="power"`` runs power iteration from the all-ones vector and is the
    default for graph operators, whose Perron eigenvalue is well separated.
    ``method="eigh"`` uses a dense symmetric eigensolver; use it when the two
    extreme eigenvalues are close in magnitude (random symmetric matrices),
    where power iteration stalls short of full precision.
    """
    if isinstance(g, Gso):
        if method == "power":
            return g.spectral_norm()
        a = g.s
    else:
        a = np.asarray(g, dtype=np.float64)
    if method == "power":
        return _power_iteration(a)
    if method == "eigh":
        if a.ndim == 3:
            return np.abs(np.linalg.eigvalsh(a)).max(axis=-1)
        return float(np.abs(np.linalg.eigvalsh(a)).max())
    raise ValueError(f"unknown method {method!r}")


def shift(g: Gso, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != g.n:
        raise DimensionMismatch(f"signal length {x.shape[-1]} != node count {g.n}")
    return x @ g.s  # s is symmetric, so this is S x for every row of x


def _check_perm(p, n: int) -> np.ndarray:
    p = np.asarray(p)
    if p.shape != (n,) or not np.array_equal(np.sort(p), np.arange(n)):
        raise NotAPermutation(f"not a permutation of 0..{n - 1}")
    return p


def permute(g: Gso, p) -> Gso:
    """Relabel nodes so that new node ``i`` is old node ``p[i]``."""
    p = _check_perm(p, g.n)
    s = g.s[np.ix_(p, p)].copy()
    s.setflags(write=False)
    return Gso(s)


def permute_signal(x, p) -> np.ndarray:
    x = np.asarray(x)
    p = _check_perm(p, x.shape[-1])
    return x[..., p]


def inverse_permutation(p) -> np.ndarray:
    p = np.asarray(p)
    inv = np.empty_like(p)
    inv[p] = np.arange(p.size)
    return inv


def save_matrix(path, g) -> None:
    """Write ``n`` on the first line followed by ``n`` whitespace-separated rows."""
    s = g.s if isinstance(g, Gso) else np.asarray(g)
    with open(path, "w") as fh:
        fh.write(f"{s.shape[0]}\n")
        for row in s:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_matrix(path) -> Gso:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise GraphError(f"{path}: empty matrix file")
    n = int(lines[0])
    rows = [np.array(ln.split(), dtype=np.float64) for ln in lines[1:]]
    if len(rows) != n or any(r.shape != (n,) for r in rows):
        raise NonSquare(f"{path}: header says n={n} but rows do not match")
    return gso_from_matrix(np.vstack(rows) if n else np.zeros((0, 0)))


@dataclass(frozen=True)
class SignalBatch:
    """Stacked ``(input, target, mask)`` triples, each array of shape ``(batch, n)``."""

    inputs: np.ndarray
    targets: np.ndarray
    masks: np.ndarray

    def __post_init__(self):
        x, y, m = self.inputs, self.targets, self.masks
        if not (x.ndim == y.ndim == m.ndim == 2) or not (x.shape == y.shape == m.shape):
            raise DimensionMismatch(
                f"inputs/targets/masks must share a (batch, n) shape, got "
                f"{x.shape}, {y.shape}, {m.shape}")
        if m.dtype != bool:
            raise TypeError("masks must be boolean")
        if x.shape[0] and not m.any(axis=1).all():
            raise ValueError("every mask must select at least one node")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise NonFiniteEntry("signal batch contains NaN or inf")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "SignalBatch":
        idx = np.asarray(idx, dtype=np.intp)
        return SignalBatch(self.inputs[idx], self.targets[idx], self.masks[idx])
