"""Codebook learning and weighted locality-constrained linear coding.

Atoms learned by k-means carry a sigmoid weight of their cluster size,
w_j = 1 / (1 + exp(-sigma * (n_j - n_mean))); coding penalises coefficients
on heavy atoms so descriptors are pulled towards small, distinctive
clusters.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConsistencyError, FormatError

log = logging.getLogger(__name__)

_CHUNK = 8192


def atom_weights(counts, sigma_w: float, n_mean: float) -> np.ndarray:
    """Elementwise sigmoid of cluster size around the mean count."""
    counts = np.asarray(counts, dtype=np.float64)
    return 1.0 / (1.0 + np.exp(-sigma_w * (counts - n_mean)))


@dataclass(frozen=True)
class Codebook:
    """K x D atom matrix with training cluster counts and derived weights."""

    atoms: np.ndarray
    counts: np.ndarray
    sigma_w: float

    def __post_init__(self):
        atoms = np.ascontiguousarray(self.atoms, dtype=np.float64)
        counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        if atoms.ndim != 2 or atoms.shape[0] < 2:
            raise ConfigError("codebook needs a K x D matrix with K >= 2")
        if not np.all(np.isfinite(atoms)):
            raise ConfigError("codebook atoms must be finite")
        if counts.shape != (atoms.shape[0],) or np.any(counts < 0):
            raise ConsistencyError("counts must hold one value >= 0 per atom")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "n_mean", counts.sum() / atoms.shape[0])
        object.__setattr__(
            self, "weights", atom_weights(counts, self.sigma_w, self.n_mean)
        )

    @property
    def k(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True)
class LlcCode:
    """Sparse affine code: k atom ids with coefficients summing to one."""

    indices: np.ndarray
    coefficients: np.ndarray
    n_atoms: int


def _dist2_chunked(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, chunked to bound memory."""
    out = np.empty((x.shape[0], centers.shape[0]))
    c2 = np.einsum("kd,kd->k", centers, centers)
    for lo in range(0, x.shape[0], _CHUNK):
        xs = x[lo : lo + _CHUNK]
        d2 = xs @ centers.T
        d2 *= -2.0
        d2 += np.einsum("nd,nd->n", xs, xs)[:, None]
        d2 += c2[None, :]
        np.maximum(d2, 0.0, out=d2)
        out[lo : lo + _CHUNK] = d2
    return out


def _plusplus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    chosen = np.zeros(n, dtype=bool)
    first = int(rng.integers(n))
    centers[0] = x[first]
    chosen[first] = True
    d2 = np.einsum("nd,nd->n", x - centers[0], x - centers[0])
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # duplicates exhausted the mass; take the first unused point
            free = np.nonzero(~chosen)[0]
            idx = int(free[0]) if len(free) else int(rng.integers(n))
        centers[j] = x[idx]
        chosen[idx] = True
        d2 = np.minimum(d2, np.einsum("nd,nd->n", x - centers[j], x - centers[j]))
    return centers


def kmeans(
    samples: np.ndarray, k: int, seed: int, sigma_w: float = 0.005,
    max_iter: int = 100,
) -> Codebook:
    """Lloyd iterations from k-means++ seeding to an assignment fixpoint.

    Deterministic in (samples, k, seed). Empty clusters are re-seeded from
    the point farthest from its assigned centre.
    """
    x = np.ascontiguousarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError("samples must be an N x D matrix")
    n = x.shape[0]
    if k < 2 or n < k:
        raise ConfigError(f"need 2 <= K <= N, got K={k}, N={n}")
    rng = np.random.default_rng(seed)
    centers = _plusplus_init(x, k, rng)
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = _dist2_chunked(x, centers)
        new_assign = np.argmin(d2, axis=1)
        own = d2[np.arange(n), new_assign]
        for j in range(k):
            if not np.any(new_assign == j):
                far = int(np.argmax(own))
                centers[j] = x[far]
                new_assign[far] = j
                own[far] = -1.0
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            sel = assign == j
            centers[j] = x[sel].mean(axis=0)
    counts = np.bincount(assign, minlength=k)
    return Codebook(atoms=centers, counts=counts, sigma_w=sigma_w)


def llc_encode(x: np.ndarray, cb: Codebook, k: int = 5, lam: float = 1e-4) -> LlcCode:
    """Affine code of x on its k nearest atoms with weighted locality penalty.

    Solves min |x - c.B_k|^2 + lam * |(d * w) . c|^2 subject to sum(c) = 1
    analytically on the selected support (d = atom distances, w = atom
    weights). Distance ties select the lower atom index.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cb.dim,):
        raise ConsistencyError(f"descriptor dim {x.shape} != codebook dim {cb.dim}")
    if not 1 <= k <= cb.k:
        raise ConfigError(f"need 1 <= k <= K, got k={k}, K={cb.k}")
    if lam < 0:
        raise ConfigError("lambda must be >= 0")
    diff = cb.atoms - x
    d2 = np.einsum("kd,kd->k", diff, diff)
    sel = np.lexsort((np.arange(cb.k), d2))[:k]
    z = diff[sel]
    gram = z @ z.T
    penalty = lam * (np.sqrt(d2[sel]) * cb.weights[sel]) ** 2
    a = gram + np.diag(penalty)
    ones = np.ones(k)
    coef = None
    try:
        coef = np.linalg.solve(a, ones)
    except np.linalg.LinAlgError:
        pass
    if coef is None or not np.all(np.isfinite(coef)):
        tr = np.trace(a)
        if tr <= 0:
            coef = ones.copy()
        else:
            a = a + 1e-8 * tr * np.eye(k)
            coef = np.linalg.solve(a, ones)
    total = coef.sum()
    coef = coef / total if abs(total) > 1e-300 else ones / k
    return LlcCode(indices=sel, coefficients=coef, n_atoms=cb.k)


def sum_pool(codes, n_atoms: int | None = None) -> np.ndarray:
    """Elementwise sum of the dense expansions of the given codes."""
    codes = list(codes)
    if not codes:
        if n_atoms is None:
            raise ConfigError("empty code list needs an explicit n_atoms")
        return np.zeros(n_atoms)
    if n_atoms is None:
        n_atoms = codes[0].n_atoms
    out = np.zeros(n_atoms)
    for code in codes:
        if code.n_atoms != n_atoms:
            raise ConsistencyError(
                f"mixed codebook sizes: {code.n_atoms} vs {n_atoms}"
            )
        out[code.indices] += code.coefficients
    return out


# ---------------------------------------------------------------------------
# serialization (LLCB1)

_MAGIC = b"LLCB1"
_HEADER = "<16sqIId"  # config hash, seed, K, D, sigma_w


def save_codebook(path, cb: Codebook, config_hash: str = "", seed: int = 0) -> None:
    head = struct.pack(
        _HEADER, config_hash.encode()[:16], seed, cb.k, cb.dim, cb.sigma_w
    )
    body = cb.atoms.astype("<f8").tobytes() + cb.counts.astype("<i8").tobytes()
    Path(path).write_bytes(_MAGIC + head + body)


def load_codebook(path):
    """Returns (Codebook, config_hash, seed); weights recomputed from counts."""
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise FormatError(f"{path}: bad magic, expected {_MAGIC!r}")
    off = len(_MAGIC)
    config_hash, seed, k, dim, sigma_w = struct.unpack_from(_HEADER, data, off)
    off += struct.calcsize(_HEADER)
    want = off + 8 * k * dim + 8 * k
    if len(data) != want:
        raise FormatError(f"{path}: truncated codebook ({len(data)} != {want} bytes)")
    atoms = np.frombuffer(data, dtype="<f8", count=k * dim, offset=off).reshape(k, dim)
    off += 8 * k * dim
    counts = np.frombuffer(data, dtype="<i8", count=k, offset=off)
    cb = Codebook(atoms=atoms.copy(), counts=counts.copy(), sigma_w=sigma_w)
    return cb, config_hash.rstrip(b"\x00").decode(), seed
