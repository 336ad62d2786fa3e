"""Seeded generators for stationary random coefficient fields.

Reproducibility contract: the stream for sample ``i`` of a given spec is
``np.random.default_rng(SeedSequence(entropy=master_seed, spawn_key=(i,)))``.
Streams are independent of evaluation order and of how many samples other
workers draw, so Monte Carlo loops parallelize without coordination.

Supported kinds:

``constant``              all entries equal to ``value``
``iid-two-point``         each diagonal entry independently alpha or beta (p=1/2)
``iid-uniform``           each entry independently uniform on (low, high)
``correlated-two-point``  normalized kernel smoothing of an iid two-point base
                          field (periodic convolution, kernel radius ``radius``
                          with weights exp(-decay * |k|), truncated and
                          normalized); a zero-radius kernel reproduces the iid
                          field bitwise
``periodic-tile``         deterministic tiling of a given unit-cell table
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .lattice import BoxSpec, CoefficientField

__all__ = [
    "EnsembleSpec",
    "SampleId",
    "sample",
    "site_variants",
    "spatial_average_observable",
    "two_point",
    "uniform",
    "constant",
]

KINDS = ("constant", "iid-two-point", "iid-uniform", "correlated-two-point", "periodic-tile")


class EnsembleError(ValueError):
    """Invalid ensemble parameters."""


@dataclass(frozen=True)
class SampleId:
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("sample index must be non-negative")


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str
    params: dict
    lam: float = 0.2
    master_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise EnsembleError(f"unknown ensemble kind {self.kind!r}")
        if not (0.0 < self.lam < 1.0):
            raise EnsembleError(f"lambda={self.lam} must be in (0,1)")
        p = self.params
        if self.kind == "constant":
            v = float(p["value"])
            if not (self.lam < v < 1.0):
                raise EnsembleError(f"constant value {v} outside ({self.lam}, 1)")
        elif self.kind in ("iid-two-point", "correlated-two-point"):
            a, b = float(p["alpha"]), float(p["beta"])
            if not (self.lam < a <= b < 1.0):
                raise EnsembleError(
                    f"two-point values must satisfy {self.lam} < alpha <= beta < 1; "
                    f"got alpha={a}, beta={b}"
                )
            if self.kind == "correlated-two-point":
                r = int(p.get("radius", 1))
                if r < 0:
                    raise EnsembleError("kernel radius must be >= 0")
        elif self.kind == "iid-uniform":
            lo, hi = float(p["low"]), float(p["high"])
            if not (self.lam < lo < hi < 1.0):
                raise EnsembleError(
                    f"uniform bounds must satisfy {self.lam} < low < high < 1; "
                    f"got low={lo}, high={hi}"
                )
        elif self.kind == "periodic-tile":
            cell = np.asarray(p["unit_cell"], dtype=np.float64)
            if cell.ndim != 2:
                raise EnsembleError("unit_cell must be a (tile sites, d) table")
            if cell.size == 0 or not np.all((cell > self.lam) & (cell < 1.0)):
                raise EnsembleError(f"unit_cell entries must lie in ({self.lam}, 1)")

    # -- helpers ----------------------------------------------------------

    @property
    def is_two_point(self) -> bool:
        return self.kind == "iid-two-point"

    @property
    def is_iid(self) -> bool:
        return self.kind in ("iid-two-point", "iid-uniform")

    def marginal_mean(self) -> float:
        """Expectation of a single diagonal entry, where it is known in closed form."""
        p = self.params
        if self.kind == "constant":
            return float(p["value"])
        if self.kind in ("iid-two-point", "correlated-two-point"):
            return 0.5 * (float(p["alpha"]) + float(p["beta"]))
        if self.kind == "iid-uniform":
            return 0.5 * (float(p["low"]) + float(p["high"]))
        if self.kind == "periodic-tile":
            return float(np.mean(np.asarray(p["unit_cell"], dtype=np.float64)[:, 0]))
        raise EnsembleError(f"no closed-form mean for kind {self.kind!r}")

    def marginal_sd(self, d: int | None = None) -> float:
        p = self.params
        if self.kind == "constant" or self.kind == "periodic-tile":
            return 0.0
        if self.kind == "iid-two-point":
            return 0.5 * (float(p["beta"]) - float(p["alpha"]))
        if self.kind == "iid-uniform":
            return (float(p["high"]) - float(p["low"])) / np.sqrt(12.0)
        if self.kind == "correlated-two-point":
            if d is None:
                raise EnsembleError("correlated marginal sd depends on the dimension d")
            w = _kernel_weights(self, d)
            return 0.5 * (float(p["beta"]) - float(p["alpha"])) * float(
                np.sqrt(sum(v**2 for v in w.values()))
            )
        raise EnsembleError(f"no closed-form sd for kind {self.kind!r}")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "params": self.params,
            "lambda": self.lam,
            "master_seed": self.master_seed,
        }

    @staticmethod
    def from_json(obj: dict) -> "EnsembleSpec":
        return EnsembleSpec(
            kind=obj["kind"],
            params=dict(obj["params"]),
            lam=float(obj.get("lambda", 0.2)),
            master_seed=int(obj["master_seed"]),
        )

    @staticmethod
    def load(path) -> "EnsembleSpec":
        with open(path) as fh:
            return EnsembleSpec.from_json(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def constant(value: float, lam: float = 0.2, master_seed: int = 0) -> EnsembleSpec:
    return EnsembleSpec("constant", {"value": value}, lam, master_seed)


def two_point(alpha: float = 0.25, beta: float = 0.75, lam: float = 0.2, master_seed: int = 0) -> EnsembleSpec:
    return EnsembleSpec("iid-two-point", {"alpha": alpha, "beta": beta}, lam, master_seed)


def uniform(low: float = 0.25, high: float = 0.75, lam: float = 0.2, master_seed: int = 0) -> EnsembleSpec:
    return EnsembleSpec("iid-uniform", {"low": low, "high": high}, lam, master_seed)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def _rng_for(spec: EnsembleSpec, sid: SampleId) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=spec.master_seed, spawn_key=(sid.index,))
    return np.random.default_rng(ss)


def _kernel_weights(spec: EnsembleSpec, d: int) -> dict[tuple[int, ...], float]:
    """Normalized nonnegative kernel on offsets with |k|_inf <= radius.

    The dict is keyed by offset tuple so the convolution below is an
    explicit roll-and-add (bitwise identity with the iid field when the
    kernel is the point mass at 0).
    """
    r = int(spec.params.get("radius", 1))
    decay = float(spec.params.get("decay", 1.0))
    offsets = list(itertools.product(range(-r, r + 1), repeat=d))
    w = {k: float(np.exp(-decay * np.linalg.norm(k))) for k in offsets}
    total = sum(w.values())
    if total <= 0:
        raise EnsembleError("empty kernel")
    return {k: v / total for k, v in w.items()}


def sample(spec: EnsembleSpec, box: BoxSpec, sid: SampleId) -> CoefficientField:
    """Draw the coefficient field for (spec, box, sample id); deterministic."""
    n, d = box.n_sites, box.d
    p = spec.params
    if spec.kind == "constant":
        diag = np.full((n, d), float(p["value"]))
    elif spec.kind == "iid-two-point":
        rng = _rng_for(spec, sid)
        a, b = float(p["alpha"]), float(p["beta"])
        diag = np.where(rng.integers(0, 2, size=(n, d)) == 0, a, b)
    elif spec.kind == "iid-uniform":
        rng = _rng_for(spec, sid)
        diag = rng.uniform(float(p["low"]), float(p["high"]), size=(n, d))
    elif spec.kind == "correlated-two-point":
        rng = _rng_for(spec, sid)
        a, b = float(p["alpha"]), float(p["beta"])
        base = np.where(rng.integers(0, 2, size=(n, d)) == 0, a, b)
        w = _kernel_weights(spec, d)
        if list(w.keys()) == [(0,) * d]:
            diag = base  # point mass: bitwise the iid field
        else:
            diag = np.zeros((n, d))
            for comp in range(d):
                g = base[:, comp].reshape(box.shape, order="F")
                acc = np.zeros_like(g)
                for off, weight in sorted(w.items()):
                    acc += weight * np.roll(g, shift=tuple(-o for o in off), axis=tuple(range(d)))
                diag[:, comp] = acc.ravel(order="F")
    elif spec.kind == "periodic-tile":
        cell = np.asarray(p["unit_cell"], dtype=np.float64)
        tile_n, cell_d = cell.shape
        tile_L = round(tile_n ** (1.0 / box.d))
        if tile_L**box.d != tile_n or cell_d != d:
            raise EnsembleError(
                f"unit_cell with {tile_n} sites x {cell_d} components does not fit a "
                f"d={d} cubic tile"
            )
        if box.L % tile_L != 0:
            raise EnsembleError(f"box L={box.L} not divisible by tile L={tile_L}")
        tile_box = BoxSpec(d, tile_L) if tile_L >= 2 else None
        diag = np.empty((n, d))
        coords = box.coordinate_arrays()
        if tile_box is None:  # 1-site tile degenerates to a constant field
            diag[:] = cell[0]
        else:
            for idx in range(n):
                diag[idx] = cell[tile_box.index_of(coords[idx] % tile_L)]
    else:  # pragma: no cover - guarded by EnsembleSpec validation
        raise EnsembleError(spec.kind)
    return CoefficientField(box, diag, lam=spec.lam)


def site_variants(spec: EnsembleSpec, a: CoefficientField, site: int) -> list[CoefficientField]:
    """All coefficient fields agreeing with ``a`` off ``site``.

    Only meaningful for finite-support marginals; enumerates the 2**d
    diagonal assignments at the site for the two-point kinds.  Continuous
    laws raise, signalling the caller to fall back to inner Monte Carlo.
    """
    if not spec.is_two_point:
        raise EnsembleError(
            f"site_variants requires a two-point kind, got {spec.kind!r}"
        )
    alpha, beta = float(spec.params["alpha"]), float(spec.params["beta"])
    d = a.box.d
    out = []
    for combo in itertools.product((alpha, beta), repeat=d):
        diag = a.diag.copy()
        diag[site] = combo
        out.append(CoefficientField(a.box, diag, lam=a.lam))
    return out


def spatial_average_observable(a: CoefficientField, R: int, component: int = 0) -> float:
    """Average of a chosen diagonal entry over the centered R-sub-box."""
    L = a.box.L
    if not (1 <= R <= L):
        raise ValueError(f"sub-box size R={R} must satisfy 1 <= R <= L={L}")
    lo = (L - R) // 2
    g = a.grid(component)
    sl = tuple(slice(lo, lo + R) for _ in range(a.box.d))
    return float(np.mean(g[sl]))
