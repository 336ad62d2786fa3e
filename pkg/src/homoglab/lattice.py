"""Discrete calculus on periodic lattice boxes.

Fields live on the sites of a d-dimensional torus (Z/LZ)^d.  Site indexing
is the documented bijection

    index(x) = sum_k x_k * L**(k-1),   x = (x_1, ..., x_d), 0 <= x_k < L,

i.e. x_1 is the fastest-varying coordinate.  A flat value array of length
N = L**d reshaped with Fortran order therefore has axis k-1 <-> coordinate
x_k, which is how all operators below are implemented (``np.roll`` on the
grid view realizes the periodic shifts exactly).

Difference operators:

    (grad u)_i(x)  = u(x + e_i) - u(x)
    (div_star F)(x) = sum_i F_i(x - e_i) - F_i(x)

``div_star`` is the adjoint of ``grad`` for the plain Euclidean inner
product, which is the summation-by-parts identity the solvers rely on.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BoxSpec",
    "ScalarField",
    "VectorField",
    "SkewField",
    "CoefficientField",
    "grad",
    "div_star",
    "apply_elliptic",
    "apply_constant",
    "mean",
    "inner",
    "norm_l2",
    "shift",
    "torus_coordinates",
    "torus_radii",
    "write_field_csv",
    "read_field_csv",
]


class BoxMismatchError(ValueError):
    """Two fields that must share a box do not."""


@dataclass(frozen=True)
class BoxSpec:
    """Periodic box (Z/LZ)^d with row-major site indexing."""

    d: int
    L: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension d={self.d} not supported (d in {{1,2,3}})")
        if self.L < 2:
            raise ValueError(f"side length L={self.L} must be >= 2")

    @property
    def n_sites(self) -> int:
        return self.L**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.L,) * self.d

    def index_of(self, x) -> int:
        """Flat index of coordinate tuple x (components taken mod L)."""
        idx = 0
        for k in reversed(range(self.d)):
            idx = idx * self.L + (int(x[k]) % self.L)
        return idx

    def coordinates_of(self, index: int) -> tuple[int, ...]:
        out = []
        for _ in range(self.d):
            out.append(index % self.L)
            index //= self.L
        return tuple(out)

    def coordinate_arrays(self) -> np.ndarray:
        """(N, d) integer array of site coordinates in index order."""
        grids = np.meshgrid(*[np.arange(self.L)] * self.d, indexing="ij")
        return np.stack([g.ravel(order="F") for g in grids], axis=1)

    def to_json(self) -> dict:
        return {"d": self.d, "L": self.L}

    @staticmethod
    def from_json(obj: dict) -> "BoxSpec":
        return BoxSpec(d=int(obj["d"]), L=int(obj["L"]))


def _check_values(values: np.ndarray, expected_shape: tuple[int, ...], what: str):
    if values.shape != expected_shape:
        raise ValueError(f"{what}: expected shape {expected_shape}, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what}: values must be finite")


@dataclass(frozen=True)
class ScalarField:
    """Real-valued lattice function, one value per site."""

    box: BoxSpec
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        _check_values(self.values, (self.box.n_sites,), "ScalarField")

    def grid(self) -> np.ndarray:
        """d-dimensional view, axis k <-> coordinate x_{k+1}."""
        return self.values.reshape(self.box.shape, order="F")

    @staticmethod
    def from_grid(box: BoxSpec, grid: np.ndarray) -> "ScalarField":
        return ScalarField(box, np.ravel(grid, order="F"))

    @staticmethod
    def zeros(box: BoxSpec) -> "ScalarField":
        return ScalarField(box, np.zeros(box.n_sites))

    @staticmethod
    def constant(box: BoxSpec, c: float) -> "ScalarField":
        return ScalarField(box, np.full(box.n_sites, float(c)))

    @staticmethod
    def delta(box: BoxSpec, site: int = 0) -> "ScalarField":
        v = np.zeros(box.n_sites)
        v[site] = 1.0
        return ScalarField(box, v)


@dataclass(frozen=True)
class VectorField:
    """d-component field; component i lives on the edge x -> x + e_i."""

    box: BoxSpec
    values: np.ndarray  # (N, d)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        _check_values(self.values, (self.box.n_sites, self.box.d), "VectorField")

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.box, self.values[:, i].copy())

    def grid(self, i: int) -> np.ndarray:
        return self.values[:, i].reshape(self.box.shape, order="F")

    @staticmethod
    def zeros(box: BoxSpec) -> "VectorField":
        return VectorField(box, np.zeros((box.n_sites, box.d)))


@dataclass(frozen=True)
class SkewField:
    """Matrix field antisymmetric in its two component indices.

    values[:, j, k] holds sigma_{jk}; the derivative index of
    ``(div_star sigma)_j = sum_k grad*_k sigma_{jk}`` is the last one.
    """

    box: BoxSpec
    values: np.ndarray  # (N, d, d)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        d = self.box.d
        _check_values(self.values, (self.box.n_sites, d, d), "SkewField")
        if not np.array_equal(self.values, -np.swapaxes(self.values, 1, 2)):
            raise ValueError("SkewField: values must be exactly antisymmetric in (j,k)")

    @staticmethod
    def zeros(box: BoxSpec) -> "SkewField":
        return SkewField(box, np.zeros((box.n_sites, box.d, box.d)))


@dataclass(frozen=True)
class CoefficientField:
    """Per-site diagonal coefficient matrix a(x) = diag(a_1..a_d).

    Entries must lie strictly inside (lam, 1); ``lam`` is the global
    ellipticity constant attached to the field.
    """

    box: BoxSpec
    diag: np.ndarray  # (N, d)
    lam: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "diag", np.asarray(self.diag, dtype=np.float64))
        _check_values(self.diag, (self.box.n_sites, self.box.d), "CoefficientField")
        if not (0.0 < self.lam < 1.0):
            raise ValueError(f"ellipticity constant lam={self.lam} must be in (0,1)")
        lo, hi = self.diag.min(), self.diag.max()
        if lo <= self.lam or hi >= 1.0:
            raise ValueError(
                f"coefficient entries must lie in ({self.lam}, 1); got [{lo}, {hi}]"
            )

    def grid(self, i: int) -> np.ndarray:
        return self.diag[:, i].reshape(self.box.shape, order="F")

    @staticmethod
    def constant(box: BoxSpec, value: float, lam: float = 0.2) -> "CoefficientField":
        return CoefficientField(box, np.full((box.n_sites, box.d), float(value)), lam)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def _require_same_box(a, b):
    if a.box != b.box:
        raise BoxMismatchError(f"box mismatch: {a.box} vs {b.box}")


def shift(u: ScalarField, offset) -> ScalarField:
    """u(. + offset) with periodic wrap; offset is a d-tuple of integers."""
    g = u.grid()
    for axis, off in enumerate(offset):
        if off:
            g = np.roll(g, -int(off), axis=axis)
    return ScalarField.from_grid(u.box, g)


def grad(u: ScalarField) -> VectorField:
    """Forward difference gradient, (grad u)_i(x) = u(x+e_i) - u(x)."""
    g = u.grid()
    comps = [np.roll(g, -1, axis=i) - g for i in range(u.box.d)]
    return VectorField(u.box, np.stack([c.ravel(order="F") for c in comps], axis=1))


def div_star(F: VectorField) -> ScalarField:
    """Adjoint divergence, (div* F)(x) = sum_i F_i(x-e_i) - F_i(x)."""
    out = np.zeros(F.box.shape)
    for i in range(F.box.d):
        g = F.grid(i)
        out += np.roll(g, 1, axis=i) - g
    return ScalarField.from_grid(F.box, out)


def _grad_arr(g: np.ndarray, axis: int) -> np.ndarray:
    return np.roll(g, -1, axis=axis) - g


def _div_star_arr(comps: list[np.ndarray]) -> np.ndarray:
    out = np.zeros(comps[0].shape)
    for i, g in enumerate(comps):
        out += np.roll(g, 1, axis=i) - g
    return out


def apply_elliptic_grid(diag_grids: list[np.ndarray], u_grid: np.ndarray) -> np.ndarray:
    """div*(a grad u) on grid views; the hot path used by the solvers."""
    return _div_star_arr([diag_grids[i] * _grad_arr(u_grid, i) for i in range(len(diag_grids))])


def apply_elliptic(a: CoefficientField, u: ScalarField) -> ScalarField:
    """Elliptic finite-difference operator div*(a grad u).

    Linear in u, self-adjoint, positive semidefinite with the constants as
    kernel; the quadratic form is <grad u, a grad u>.
    """
    _require_same_box(a, u)
    d = a.box.d
    grids = [a.grid(i) for i in range(d)]
    return ScalarField.from_grid(a.box, apply_elliptic_grid(grids, u.grid()))


def apply_constant(A: np.ndarray, u: ScalarField) -> ScalarField:
    """div*(A grad u) for a constant (possibly non-diagonal) d x d matrix A."""
    d = u.box.d
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (d, d):
        raise ValueError(f"matrix shape {A.shape} does not match dimension {d}")
    g = u.grid()
    grads = [_grad_arr(g, j) for j in range(d)]
    comps = [sum(A[i, j] * grads[j] for j in range(d)) for i in range(d)]
    return ScalarField.from_grid(u.box, _div_star_arr(comps))


def mean(u: ScalarField) -> float:
    return float(np.mean(u.values))


def inner(u: ScalarField, v: ScalarField) -> float:
    _require_same_box(u, v)
    return float(np.dot(u.values, v.values))


def norm_l2(u: ScalarField) -> float:
    return float(np.linalg.norm(u.values))


def torus_coordinates(box: BoxSpec) -> np.ndarray:
    """(N, d) signed coordinates wrapped to [-L/2, L/2)."""
    c = box.coordinate_arrays().astype(np.float64)
    c[c >= box.L / 2] -= box.L
    return c


def torus_radii(box: BoxSpec) -> np.ndarray:
    """Euclidean distance of every site from the origin, with wrap."""
    return np.linalg.norm(torus_coordinates(box), axis=1)


# ---------------------------------------------------------------------------
# serialization (binary-free: CSV body, JSON header line)
# ---------------------------------------------------------------------------

_KIND_COLUMNS = {
    "scalar": lambda box: ["value"],
    "vector": lambda box: [f"value_{i+1}" for i in range(box.d)],
    "coefficient": lambda box: [f"a_{i+1}" for i in range(box.d)],
    "skew": lambda box: [
        f"sigma_{j+1}{k+1}" for j in range(box.d) for k in range(box.d)
    ],
}


def _field_kind(f) -> tuple[str, np.ndarray]:
    if isinstance(f, ScalarField):
        return "scalar", f.values.reshape(-1, 1)
    if isinstance(f, VectorField):
        return "vector", f.values
    if isinstance(f, CoefficientField):
        return "coefficient", f.diag
    if isinstance(f, SkewField):
        return "skew", f.values.reshape(f.box.n_sites, -1)
    raise TypeError(f"not a lattice field: {type(f)}")


def write_field_csv(f, path) -> None:
    """Write a field as CSV: header comment with box JSON, then one row per site.

    Values are formatted with 17 significant digits so the decimal text
    round-trips to the exact same float64.
    """
    kind, table = _field_kind(f)
    box = f.box
    header = {"kind": kind, **box.to_json()}
    if isinstance(f, CoefficientField):
        header["lambda"] = f.lam
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["site"] + [f"x{k+1}" for k in range(box.d)] + _KIND_COLUMNS[kind](box))
        coords = box.coordinate_arrays()
        for idx in range(box.n_sites):
            row = [idx, *coords[idx]]
            row += [format(v, ".17g") for v in table[idx]]
            w.writerow(row)


def read_field_csv(path):
    """Inverse of :func:`write_field_csv`; exact decimal round trip."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ValueError(f"{path}: missing JSON header line")
        header = json.loads(first[1:])
        box = BoxSpec.from_json(header)
        kind = header["kind"]
        rows = list(csv.reader(fh))
    ncols = len(_KIND_COLUMNS[kind](box))
    table = np.empty((box.n_sites, ncols))
    for row in rows[1:]:
        idx = int(row[0])
        table[idx] = [float(v) for v in row[1 + box.d :]]
    if kind == "scalar":
        return ScalarField(box, table[:, 0])
    if kind == "vector":
        return VectorField(box, table)
    if kind == "coefficient":
        return CoefficientField(box, table, lam=float(header["lambda"]))
    if kind == "skew":
        return SkewField(box, table.reshape(box.n_sites, box.d, box.d))
    raise ValueError(f"unknown field kind {kind!r}")
