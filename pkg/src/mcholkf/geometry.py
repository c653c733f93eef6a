"""Grid geometry: labeling, local boxes, predecessors, domain decomposition.

State components live on a periodic ring or a 2D grid and are labeled by a
linear index in row-major or column-major order. Localization is expressed
through Chebyshev boxes around a center cell; the regression structure of the
precision estimator uses the box members with strictly smaller labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

KINDS = ("ring1d", "grid2d")
ORDERINGS = ("row_major", "column_major")
BOUNDARIES = ("clipped", "periodic")


@dataclass(frozen=True)
class GridGeometry:
    """Static description of the state grid.

    Parameters
    ----------
    kind : {'ring1d', 'grid2d'}
        Ring of nx cells (ny must be 1) or an ny-by-nx grid.
    nx, ny : int
        Grid extents; ny is the number of rows.
    ordering : {'row_major', 'column_major'}
        Linear labeling convention.
    boundary : {'clipped', 'periodic'}, optional
        How boxes behave at the edge. Defaults to periodic for rings and
        clipped for 2D grids.
    """

    kind: str
    nx: int
    ny: int = 1
    ordering: str = "row_major"
    boundary: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"unknown ordering {self.ordering!r}")
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid extents must be positive, got nx={self.nx} ny={self.ny}")
        if self.kind == "ring1d" and self.ny != 1:
            raise ValueError(f"ring1d requires ny=1, got ny={self.ny}")
        if not self.boundary:
            default = "periodic" if self.kind == "ring1d" else "clipped"
            object.__setattr__(self, "boundary", default)
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def nstate(self) -> int:
        return self.nx * self.ny

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"


@dataclass(frozen=True)
class LocalBox:
    """Chebyshev box of radius zeta around a center cell."""

    center: int
    zeta: int
    members: np.ndarray  # global labels, strictly increasing


@dataclass(frozen=True)
class Subdomain:
    """One tile of the decomposition: owned interior plus read-only halo."""

    id: int
    interior: np.ndarray     # global labels, strictly increasing
    halo: np.ndarray         # global labels, strictly increasing, disjoint
    local_order: np.ndarray = field(default=None)  # sorted union, fixed row order

    def __post_init__(self):
        if self.local_order is None:
            merged = np.union1d(self.interior, self.halo)
            object.__setattr__(self, "local_order", merged)

    @property
    def n_local(self) -> int:
        return self.local_order.size

    def interior_positions(self) -> np.ndarray:
        """Positions of the interior rows within local_order."""
        return np.searchsorted(self.local_order, self.interior)


def linear_index(geometry: GridGeometry, row: int, col: int) -> int:
    """Label of the cell at (row, col) under the geometry's ordering."""
    if not (0 <= row < geometry.ny and 0 <= col < geometry.nx):
        raise ValueError(
            f"cell ({row}, {col}) outside {geometry.ny}x{geometry.nx} grid"
        )
    if geometry.ordering == "row_major":
        return row * geometry.nx + col
    return col * geometry.ny + row


def grid_coords(geometry: GridGeometry, index: int) -> tuple[int, int]:
    """Inverse of linear_index: (row, col) of a label."""
    if not (0 <= index < geometry.nstate):
        raise ValueError(f"index {index} outside [0, {geometry.nstate})")
    if geometry.ordering == "row_major":
        return divmod(index, geometry.nx)
    col, row = divmod(index, geometry.ny)
    return row, col


def _labels(geometry: GridGeometry, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sorted labels of the cartesian product rows x cols."""
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    if geometry.ordering == "row_major":
        lab = rr * geometry.nx + cc
    else:
        lab = cc * geometry.ny + rr
    return np.sort(lab.ravel()).astype(np.intp)


def _axis_window(center: int, zeta: int, n: int, periodic: bool) -> np.ndarray:
    if periodic:
        return np.unique((center + np.arange(-zeta, zeta + 1)) % n)
    return np.arange(max(0, center - zeta), min(n, center + zeta + 1))


def _axis_band(lo: int, hi: int, zeta: int, n: int, periodic: bool) -> np.ndarray:
    """Axis coordinates within distance zeta of the interval [lo, hi)."""
    if periodic:
        return np.unique(np.arange(lo - zeta, hi + zeta) % n)
    return np.arange(max(0, lo - zeta), min(n, hi + zeta))


def local_box(geometry: GridGeometry, center: int, zeta: int) -> LocalBox:
    """Box of all cells within Chebyshev distance zeta of center.

    Distances wrap around on periodic boundaries and clip otherwise. Members
    are sorted by label and always include the center.
    """
    if zeta < 0:
        raise ValueError(f"zeta must be nonnegative, got {zeta}")
    r, c = grid_coords(geometry, center)
    rows = _axis_window(r, zeta, geometry.ny, geometry.periodic)
    cols = _axis_window(c, zeta, geometry.nx, geometry.periodic)
    return LocalBox(center=center, zeta=zeta, members=_labels(geometry, rows, cols))


def predecessors(geometry: GridGeometry, center: int, zeta: int) -> np.ndarray:
    """Box members with labels strictly below the center's, ascending."""
    members = local_box(geometry, center, zeta).members
    return members[members < center]


def decompose(geometry: GridGeometry, delta: int, zeta: int) -> list[Subdomain]:
    """Tile the grid into delta rectangular subdomains with Chebyshev halos.

    The tiling is a near-square block grid: delta = pr * pc block rows times
    block columns, chosen to minimize |pr - pc| among feasible pairs (ties to
    the smaller pr). Remainder rows/columns are absorbed by the last block
    row/column. Interiors partition the grid; each halo is the exact ring of
    cells within Chebyshev distance zeta of its interior.
    """
    if delta < 1:
        raise ConfigurationError(f"delta must be >= 1, got {delta}")
    if zeta < 0:
        raise ValueError(f"zeta must be nonnegative, got {zeta}")

    best = None
    for pr in range(1, delta + 1):
        if delta % pr:
            continue
        pc = delta // pr
        if pr > geometry.ny or pc > geometry.nx:
            continue
        key = (abs(pr - pc), pr)
        if best is None or key < best[0]:
            best = (key, pr, pc)
    if best is None:
        raise ConfigurationError(
            f"delta={delta} does not tile a {geometry.ny}x{geometry.nx} grid"
        )
    _, pr, pc = best

    def bands(n: int, parts: int) -> list[tuple[int, int]]:
        base = n // parts
        edges = [(i * base, (i + 1) * base) for i in range(parts - 1)]
        edges.append(((parts - 1) * base, n))
        return edges

    row_bands = bands(geometry.ny, pr)
    col_bands = bands(geometry.nx, pc)

    out = []
    for bi, (r0, r1) in enumerate(row_bands):
        for bj, (c0, c1) in enumerate(col_bands):
            interior = _labels(
                geometry, np.arange(r0, r1), np.arange(c0, c1)
            )
            rows_ext = _axis_band(r0, r1, zeta, geometry.ny, geometry.periodic)
            cols_ext = _axis_band(c0, c1, zeta, geometry.nx, geometry.periodic)
            covered = _labels(geometry, rows_ext, cols_ext)
            halo = np.setdiff1d(covered, interior, assume_unique=True)
            out.append(
                Subdomain(
                    id=bi * pc + bj,
                    interior=interior,
                    halo=halo.astype(np.intp),
                    local_order=np.union1d(interior, halo).astype(np.intp),
                )
            )
    return out


def nominal_local_size(nstate: int, delta: int, zeta: int) -> int:
    """Size estimate for one subdomain: interior share plus a full box."""
    return nstate // delta + (2 * zeta + 1) ** 2
