"""Structured parametrizations of linear maps and the subspace projector.

Every layer kind exposes the same protocol: ``apply`` runs the structured
pipeline (never materializing the dense map), ``materialize`` builds the
dense matrix by an independent route (the oracle for apply), ``grad``
backpropagates a loss gradient at the output to the flat trainable
parameter vector, and ``param_count`` matches the closed-form budgets:

    dense      a*b
    lora       r*(a+b)          on top of a frozen W0
    kronecker  a1*b1 + a2*b2    with a1*a2 = a, b1*b2 = b
    monarch    a*b/g + a*g      for g blocks (two block-diagonal factors
                                joined by the axis-transpose permutation)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _rng_matrix(rng, rows: int, cols: int, fan_in: int) -> np.ndarray:
    return rng.standard_normal((rows, cols)) / math.sqrt(max(fan_in, 1))


class StructuredLinear:
    """Base protocol; subclasses own their factor storage."""

    kind: str
    shape: tuple[int, int]

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def materialize(self) -> np.ndarray:
        raise NotImplementedError

    def param_count(self) -> int:
        raise NotImplementedError

    def get_params(self) -> np.ndarray:
        raise NotImplementedError

    def set_params(self, flat: np.ndarray) -> None:
        raise NotImplementedError

    def grad(self, g_out: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Flat parameter gradient for batched g_out (n, a) and x (n, b)."""
        raise NotImplementedError

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[-1] != self.shape[1]:
            raise ValueError(
                f"input dimension {x.shape[-1]} does not match layer shape {self.shape}"
            )
        return x


class DenseLinear(StructuredLinear):
    kind = "dense"

    def __init__(self, a: int, b: int, seed: int = 0):
        self.shape = (a, b)
        self.W = _rng_matrix(np.random.default_rng(seed), a, b, fan_in=b)

    def apply(self, x):
        squeeze = np.ndim(x) == 1
        out = self._check_input(x) @ self.W.T
        return out[0] if squeeze else out

    def materialize(self):
        return self.W.copy()

    def param_count(self):
        return self.shape[0] * self.shape[1]

    def get_params(self):
        return self.W.ravel().copy()

    def set_params(self, flat):
        self.W = np.asarray(flat, dtype=np.float64).reshape(self.shape).copy()

    def grad(self, g_out, x):
        return (np.atleast_2d(g_out).T @ np.atleast_2d(x)).ravel()


class LoRALinear(StructuredLinear):
    """W = W0 + A @ B with the base matrix frozen at its seeded init."""

    kind = "lora"

    def __init__(self, a: int, b: int, rank: int, seed: int = 0):
        if rank < 1:
            raise ValueError("rank must be >= 1")
        self.shape = (a, b)
        self.rank = rank
        rng = np.random.default_rng(seed)
        self.W0 = _rng_matrix(rng, a, b, fan_in=b)
        self.A = _rng_matrix(rng, a, rank, fan_in=rank)
        self.B = _rng_matrix(rng, rank, b, fan_in=b)

    def apply(self, x):
        squeeze = np.ndim(x) == 1
        x2 = self._check_input(x)
        out = x2 @ self.W0.T + (x2 @ self.B.T) @ self.A.T
        return out[0] if squeeze else out

    def materialize(self):
        return self.W0 + self.A @ self.B

    def param_count(self):
        a, b = self.shape
        return self.rank * (a + b)

    def get_params(self):
        return np.concatenate([self.A.ravel(), self.B.ravel()])

    def set_params(self, flat):
        a, b = self.shape
        flat = np.asarray(flat, dtype=np.float64)
        cut = a * self.rank
        self.A = flat[:cut].reshape(a, self.rank).copy()
        self.B = flat[cut:].reshape(self.rank, b).copy()

    def grad(self, g_out, x):
        G = np.atleast_2d(g_out).T @ np.atleast_2d(x)
        return np.concatenate([(G @ self.B.T).ravel(), (self.A.T @ G).ravel()])


class KroneckerLinear(StructuredLinear):
    """W = A (x) B applied through the reshape identity, never materialized."""

    kind = "kronecker"

    def __init__(self, a: int, b: int, a1: int, b1: int, seed: int = 0):
        if a % a1 or b % b1:
            raise ValueError(f"factor shape ({a1},{b1}) does not divide ({a},{b})")
        self.shape = (a, b)
        self.factor_shape = (a1, b1)
        self.a2, self.b2 = a // a1, b // b1
        rng = np.random.default_rng(seed)
        self.A = _rng_matrix(rng, a1, b1, fan_in=b1)
        self.B = _rng_matrix(rng, self.a2, self.b2, fan_in=self.b2)

    def apply(self, x):
        squeeze = np.ndim(x) == 1
        x2 = self._check_input(x)
        n = x2.shape[0]
        X = x2.reshape(n, self.factor_shape[1], self.b2)
        out = np.einsum("ij,njl,kl->nik", self.A, X, self.B).reshape(n, self.shape[0])
        return out[0] if squeeze else out

    def materialize(self):
        return np.kron(self.A, self.B)

    def param_count(self):
        a1, b1 = self.factor_shape
        return a1 * b1 + self.a2 * self.b2

    def get_params(self):
        return np.concatenate([self.A.ravel(), self.B.ravel()])

    def set_params(self, flat):
        a1, b1 = self.factor_shape
        flat = np.asarray(flat, dtype=np.float64)
        self.A = flat[: a1 * b1].reshape(a1, b1).copy()
        self.B = flat[a1 * b1:].reshape(self.a2, self.b2).copy()

    def grad(self, g_out, x):
        a1, b1 = self.factor_shape
        G = np.atleast_2d(g_out).T @ np.atleast_2d(x)
        G4 = G.reshape(a1, self.a2, b1, self.b2)
        dA = np.einsum("ikjl,kl->ij", G4, self.B)
        dB = np.einsum("ikjl,ij->kl", G4, self.A)
        return np.concatenate([dA.ravel(), dB.ravel()])


class MonarchLinear(StructuredLinear):
    """Two block-diagonal factors joined by an axis transpose: W = A R B.

    The input reshapes to (g, b/g) groups; the right factor holds g blocks
    of shape (a/g, b/g), the transpose swaps the group axes, and the left
    factor holds a/g blocks of shape (g, g). The block count only needs to
    divide both dimensions.
    """

    kind = "monarch"

    def __init__(self, a: int, b: int, nblocks: int, seed: int = 0):
        if a % nblocks or b % nblocks:
            raise ValueError(f"nblocks={nblocks} must divide both of ({a},{b})")
        self.shape = (a, b)
        self.g = nblocks
        self.rows = a // nblocks  # per-block output rows of the right factor
        self.cols = b // nblocks
        rng = np.random.default_rng(seed)
        self.Bblocks = rng.standard_normal((self.g, self.rows, self.cols))
        self.Bblocks /= math.sqrt(self.cols)
        self.Ablocks = rng.standard_normal((self.rows, self.g, self.g))
        self.Ablocks /= math.sqrt(self.g)

    def _pipeline(self, x2):
        n = x2.shape[0]
        X = x2.reshape(n, self.g, self.cols)
        Y = np.einsum("gij,ngj->ngi", self.Bblocks, X)
        Z = Y.transpose(0, 2, 1)
        U = np.einsum("jkl,njl->njk", self.Ablocks, Z)
        return X, Z, U

    def apply(self, x):
        squeeze = np.ndim(x) == 1
        x2 = self._check_input(x)
        out = self._pipeline(x2)[2].reshape(x2.shape[0], self.shape[0])
        return out[0] if squeeze else out

    def materialize(self):
        a, _ = self.shape
        bd_right = np.zeros((a, self.shape[1]))
        for i in range(self.g):
            bd_right[i * self.rows:(i + 1) * self.rows,
                     i * self.cols:(i + 1) * self.cols] = self.Bblocks[i]
        perm = np.zeros((a, a))
        for i in range(self.g):
            for j in range(self.rows):
                perm[j * self.g + i, i * self.rows + j] = 1.0
        bd_left = np.zeros((a, a))
        for j in range(self.rows):
            bd_left[j * self.g:(j + 1) * self.g,
                    j * self.g:(j + 1) * self.g] = self.Ablocks[j]
        return bd_left @ perm @ bd_right

    def param_count(self):
        a, b = self.shape
        return a * b // self.g + a * self.g

    def get_params(self):
        return np.concatenate([self.Bblocks.ravel(), self.Ablocks.ravel()])

    def set_params(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        cut = self.g * self.rows * self.cols
        self.Bblocks = flat[:cut].reshape(self.g, self.rows, self.cols).copy()
        self.Ablocks = flat[cut:].reshape(self.rows, self.g, self.g).copy()

    def grad(self, g_out, x):
        x2 = np.atleast_2d(x)
        g2 = np.atleast_2d(g_out)
        n = x2.shape[0]
        X, Z, _ = self._pipeline(x2)
        gU = g2.reshape(n, self.rows, self.g)
        dA = np.einsum("njk,njl->jkl", gU, Z)
        gZ = np.einsum("jkl,njk->njl", self.Ablocks, gU)
        gY = gZ.transpose(0, 2, 1)
        dB = np.einsum("ngi,ngj->gij", gY, X)
        return np.concatenate([dB.ravel(), dA.ravel()])


def make_layer(kind: str, a: int, b: int, seed: int = 0, *, rank: int = 4,
               factor_shape: tuple[int, int] | None = None,
               nblocks: int | None = None) -> StructuredLinear:
    if kind == "dense":
        return DenseLinear(a, b, seed=seed)
    if kind == "lora":
        return LoRALinear(a, b, rank=rank, seed=seed)
    if kind == "kronecker":
        if factor_shape is None:
            a1 = _balanced_factor(a)
            b1 = _balanced_factor(b)
            factor_shape = (a1, b1)
        return KroneckerLinear(a, b, factor_shape[0], factor_shape[1], seed=seed)
    if kind == "monarch":
        if nblocks is None:
            nblocks = _balanced_factor(math.gcd(a, b))
        return MonarchLinear(a, b, nblocks=nblocks, seed=seed)
    raise ValueError(f"unknown layer kind {kind!r}")


def _balanced_factor(n: int) -> int:
    """Divisor of n closest to sqrt(n) (from below when tied)."""
    best = 1
    for d in range(1, int(math.isqrt(n)) + 1):
        if n % d == 0:
            best = d
    return best


class SubspaceExpansion:
    """theta = theta0 + (Q1 (x) Q2) w without materializing the projector.

    Q1 and Q2 are seeded gaussian sqrt(D) x sqrt(d) matrices orthogonalized
    column-wise by QR (signs fixed to the R diagonal), so the implied
    projector has orthonormal columns and expansion preserves norms.
    Both D and d must be perfect squares; pad the parameter vector to the
    next square otherwise.
    """

    def __init__(self, theta0: np.ndarray, d: int, seed: int):
        theta0 = np.asarray(theta0, dtype=np.float64).ravel()
        D = theta0.size
        rD, rd = math.isqrt(D), math.isqrt(d)
        if rD * rD != D or rd * rd != d:
            raise ValueError(
                f"D={D} and d={d} must both be perfect squares; pad the "
                "parameter vector (and pick a square d) to proceed"
            )
        if d > D:
            raise ValueError("subspace dimension cannot exceed ambient dimension")
        self.D, self.d = D, d
        self.theta0 = theta0.copy()
        rng = np.random.default_rng(seed)
        scale = 1.0 / math.sqrt(math.sqrt(D))
        self.Q1 = _fixed_sign_qr(rng.standard_normal((rD, rd)) * scale)
        self.Q2 = _fixed_sign_qr(rng.standard_normal((rD, rd)) * scale)

    def expand(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.size != self.d:
            raise ValueError(f"w has size {w.size}, expected {self.d}")
        rd = math.isqrt(self.d)
        W = w.reshape(rd, rd)
        return self.theta0 + (self.Q1 @ W @ self.Q2.T).ravel()

    def project_gradient(self, g_theta: np.ndarray) -> np.ndarray:
        """P^T g, the chain rule back to the subspace coordinates."""
        rD = math.isqrt(self.D)
        G = np.asarray(g_theta, dtype=np.float64).reshape(rD, rD)
        return (self.Q1.T @ G @ self.Q2).ravel()


def _fixed_sign_qr(mat: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(mat)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def subspace_expand(w: np.ndarray, seed: int, D: int, d: int) -> np.ndarray:
    """Standalone expansion with theta0 drawn from the same seed."""
    rD = math.isqrt(D)
    if rD * rD != D:
        raise ValueError(f"D={D} must be a perfect square; pad the vector")
    rng = np.random.default_rng(seed)
    theta0 = rng.standard_normal(D) / math.sqrt(rD)
    # Reuse the class for Q1/Q2 so both entry points share one construction.
    exp = SubspaceExpansion(theta0, d, seed)
    return exp.expand(w)


def pad_to_square(n: int) -> int:
    """Smallest perfect square >= n."""
    r = math.isqrt(n)
    return n if r * r == n else (r + 1) ** 2


def fd_gradient_check(loss_and_grad, point: np.ndarray, eps: float = 1e-4,
                      max_coords: int | None = None, seed: int = 0) -> float:
    """Max central-difference deviation relative to the gradient scale.

    ``loss_and_grad(theta) -> (loss, grad)``. Checks every coordinate
    unless max_coords caps it (coordinates then drawn by seed); errors are
    normalized by the largest analytic gradient magnitude so coordinates
    with vanishing gradient do not amplify float noise.
    """
    point = np.asarray(point, dtype=np.float64)
    _, grad = loss_and_grad(point)
    coords = np.arange(point.size)
    if max_coords is not None and max_coords < point.size:
        coords = np.random.default_rng(seed).choice(point.size, max_coords,
                                                    replace=False)
    scale = max(float(np.abs(grad).max()), 1e-12)
    worst = 0.0
    for i in coords:
        shift = np.zeros_like(point)
        shift[i] = eps
        hi, _ = loss_and_grad(point + shift)
        lo, _ = loss_and_grad(point - shift)
        fd = (hi - lo) / (2 * eps)
        worst = max(worst, abs(fd - grad[i]) / scale)
    return worst
