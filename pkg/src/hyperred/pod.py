"""Snapshot collection and proper orthogonal decomposition."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import as_matrix, thin_svd

ENERGY_CAP = 16.0
OFFSET_MODES = ("zero", "first_snapshot", "mean")


@dataclass
class SnapshotMatrix:
    """Column-stacked states with the offset already subtracted."""

    data: np.ndarray
    offset: np.ndarray
    time_stamps: np.ndarray = None
    parameter_tags: list = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        s = self.data.shape[1]
        if self.time_stamps is None:
            self.time_stamps = np.arange(s, dtype=float)
        self.time_stamps = np.asarray(self.time_stamps, dtype=float)
        if self.parameter_tags is None:
            self.parameter_tags = ["" for _ in range(s)]
        self.parameter_tags = list(self.parameter_tags)
        if self.offset.shape != (self.data.shape[0],):
            raise ValueError("offset length must equal the state dimension")
        if len(self.time_stamps) != s or len(self.parameter_tags) != s:
            raise ValueError("one time stamp and one parameter tag per snapshot")

    @property
    def state_dim(self):
        return self.data.shape[0]

    @property
    def n_snapshots(self):
        return self.data.shape[1]

    def states(self):
        """Snapshots with the offset added back."""
        return self.data + self.offset[:, None]


@dataclass
class ReducedBasis:
    """Orthonormal basis ``Psi`` of an affine trial space ``offset + span(Psi)``.

    ``blocks`` optionally records a block-diagonal field structure as
    ``(name, row_start, row_stop, col_start, col_stop)`` tuples.
    """

    basis: np.ndarray
    singular_values: np.ndarray
    offset: np.ndarray
    blocks: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=float)
        self.singular_values = np.asarray(self.singular_values, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        if self.offset.shape != (self.basis.shape[0],):
            raise ValueError("offset length must equal the basis row count")

    @property
    def retained(self):
        return self.basis.shape[1]

    @property
    def state_dim(self):
        return self.basis.shape[0]

    def lift(self, y_hat):
        return self.offset + self.basis @ y_hat

    def restrict(self, y):
        return self.basis.T @ (np.asarray(y, dtype=float) - self.offset)


@dataclass(frozen=True)
class EnergyReport:
    E_tot: float
    E_c: float
    E_r: float
    r: int


def assemble_snapshots(states, offset_mode="zero", time_stamps=None, parameter_tags=None):
    """Stack `states` as columns and subtract the offset chosen by `offset_mode`.

    ``offset_mode`` is ``"zero"``, ``"first_snapshot"`` or ``"mean"``.
    """
    states = [np.asarray(s, dtype=float) for s in states]
    if not states:
        raise ValueError("need at least one state")
    n = states[0].shape
    if any(s.shape != n or s.ndim != 1 for s in states):
        raise ValueError("all states must be vectors of equal length")
    X = np.column_stack(states)
    if offset_mode == "zero":
        offset = np.zeros(X.shape[0])
    elif offset_mode == "first_snapshot":
        offset = X[:, 0].copy()
    elif offset_mode == "mean":
        offset = X.mean(axis=1)
    else:
        raise ValueError(f"unknown offset mode {offset_mode!r}, expected one of {OFFSET_MODES}")
    return SnapshotMatrix(X - offset[:, None], offset, time_stamps, parameter_tags)


def merge_snapshots(parts):
    """Concatenate snapshot sets column-wise; offsets must agree."""
    parts = list(parts)
    if not parts:
        raise ValueError("nothing to merge")
    dim = parts[0].state_dim
    for p in parts:
        if p.state_dim != dim:
            raise ValueError(f"state dimension mismatch: {p.state_dim} != {dim}")
        if not np.array_equal(p.offset, parts[0].offset):
            raise ValueError("snapshot sets carry different offsets")
    return SnapshotMatrix(
        np.hstack([p.data for p in parts]),
        parts[0].offset,
        np.concatenate([p.time_stamps for p in parts]),
        sum((p.parameter_tags for p in parts), []),
    )


def compute_basis(X):
    """Left singular vectors and spectrum of the snapshot data."""
    data = X.data if isinstance(X, SnapshotMatrix) else as_matrix(X, "X")
    U, sigma, _ = thin_svd(data)
    return U, sigma


def energy_residual(sigma, r):
    """Residual energy fraction ``-log10(1 - E_c / E_tot)`` for `r` retained modes.

    The discarded fraction is summed from the tail directly, and the result
    is capped at 16 when nothing is discarded.
    """
    sigma = np.asarray(sigma, dtype=float)
    if r < 0 or r > sigma.size:
        raise ValueError(f"r={r} outside [0, {sigma.size}]")
    if np.any(sigma < 0):
        raise ValueError("singular values must be nonnegative")
    sq = sigma**2
    E_tot = float(sq.sum())
    if E_tot == 0.0:
        raise ValueError("all singular values are zero: no energy to truncate")
    E_c = float(sq[:r].sum())
    tail = float(sq[r:].sum()) / E_tot
    E_r = ENERGY_CAP if tail <= 0.0 else min(ENERGY_CAP, -np.log10(tail))
    return EnergyReport(E_tot=E_tot, E_c=E_c, E_r=max(E_r, 0.0), r=r)


def truncate_for_energy(sigma, target_E_r):
    """Smallest ``r >= 1`` whose residual energy fraction reaches `target_E_r`."""
    if target_E_r <= 0:
        raise ValueError("target_E_r must be positive")
    sigma = np.asarray(sigma, dtype=float)
    for r in range(1, sigma.size + 1):
        if energy_residual(sigma, r).E_r >= target_E_r:
            return r
    return sigma.size


def pod_basis(X, target_E_r=None, r=None):
    """Truncated POD basis of a snapshot set, sized by energy or explicitly."""
    U, sigma = compute_basis(X)
    if r is None:
        r = truncate_for_energy(sigma, target_E_r)
    offset = X.offset if isinstance(X, SnapshotMatrix) else np.zeros(U.shape[0])
    return ReducedBasis(U[:, :r], sigma, offset)


def augment_basis(basis, vector):
    """Append `vector` to the span of `basis` and re-orthonormalize.

    The new direction is placed first; existing columns are made orthogonal
    to it so the span contains `vector` exactly.
    """
    v = np.asarray(vector, dtype=float)
    v = v / np.linalg.norm(v)
    rest = basis.basis - np.outer(v, v @ basis.basis)
    Q, R = np.linalg.qr(rest)
    keep = np.abs(np.diag(R)) > 1e-10 * max(1.0, np.abs(np.diag(R)).max(initial=0.0))
    cols = np.column_stack([v, Q[:, keep]])
    return ReducedBasis(cols, basis.singular_values, basis.offset, basis.blocks)


def block_basis(named_bases, layout):
    """Block-diagonal basis from per-field bases.

    ``layout`` is a sequence of ``(name, offset, length)`` tiling the state;
    ``named_bases`` maps each name to a :class:`ReducedBasis` on that field.
    """
    n = sum(length for _, _, length in layout)
    total = sum(named_bases[name].retained for name, _, _ in layout)
    Psi = np.zeros((n, total))
    offset = np.zeros(n)
    blocks = []
    col = 0
    spectra = []
    for name, start, length in layout:
        b = named_bases[name]
        if b.state_dim != length:
            raise ValueError(f"basis for {name!r} has {b.state_dim} rows, field has {length}")
        Psi[start:start + length, col:col + b.retained] = b.basis
        offset[start:start + length] = b.offset
        blocks.append((name, start, start + length, col, col + b.retained))
        spectra.append(b.singular_values)
        col += b.retained
    return ReducedBasis(Psi, np.concatenate(spectra), offset, tuple(blocks))


def save_snapshots(path, X):
    """Write snapshot data as CSV (one state per column) plus an offset CSV."""
    path = Path(path)
    header = f"# state_dim={X.state_dim} snapshots={X.n_snapshots}"
    np.savetxt(path, X.data, delimiter=",", header=header[2:], comments="# ", fmt="%.17g")
    np.savetxt(offset_path(path), X.offset[:, None], delimiter=",", fmt="%.17g")


def offset_path(path):
    path = Path(path)
    return path.with_name(path.stem + "_offset.csv")


def load_snapshots(path, time_stamps=None, parameter_tags=None):
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip()
    if not header.startswith("# state_dim="):
        raise ValueError(f"{path}: missing '# state_dim=<N> snapshots=<s>' header")
    fields = dict(tok.split("=") for tok in header[2:].split())
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    dim, s = int(fields["state_dim"]), int(fields["snapshots"])
    data = data.reshape(dim, s)
    offset = np.loadtxt(offset_path(path), delimiter=",", ndmin=1).reshape(dim)
    return SnapshotMatrix(data, offset, time_stamps, parameter_tags)
