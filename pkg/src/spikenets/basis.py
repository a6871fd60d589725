"""Clamped B-spline bases for smooth baseline-rate trends on [0, 1].

The trend of each series is modelled as a linear combination of ``m``
B-spline basis functions evaluated at t/n for t = 1..n.  Centering the
design columns (subtracting the column means) makes the fitted trend
mean-zero over the sample, which is what identifies it separately from
the intercept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline


@dataclass(frozen=True)
class BasisSpec:
    """A clamped B-spline basis of ``m`` functions on [0, 1].

    Boundary knots are repeated ``degree + 1`` times and interior knots are
    equally spaced, so exactly ``m`` basis functions exist and the basis
    spans constants (partition of unity).
    """

    m: int
    degree: int = 3
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.m < self.degree + 1:
            raise ValueError(
                f"need m >= degree + 1 basis functions, got m={self.m}, degree={self.degree}"
            )
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        n_interior = self.m - self.degree - 1
        interior = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
        knots = np.concatenate(
            [np.zeros(self.degree + 1), interior, np.ones(self.degree + 1)]
        )
        object.__setattr__(self, "knots", knots)


def make_basis_spec(m: int, degree: int = 3) -> BasisSpec:
    """Build a basis spec with equally spaced interior knots on [0, 1]."""
    return BasisSpec(m=int(m), degree=int(degree))


@dataclass
class BasisMatrix:
    """Basis evaluations, one row per time point.

    ``values`` is n x m.  When ``centered`` is set, each column has had its
    mean removed and ``column_means`` holds the subtracted means.
    """

    values: np.ndarray
    centered: bool = False
    column_means: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


def eval_basis_row(spec: BasisSpec, u: float) -> np.ndarray:
    """Evaluate all m basis functions at a point u in [0, 1].

    Entries are nonnegative, sum to 1, and at most degree+1 are nonzero.
    """
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"evaluation point {u!r} outside [0, 1]")
    row = BSpline.design_matrix(
        np.asarray([float(u)]), spec.knots, spec.degree
    ).toarray()[0]
    return row


def build_design(spec: BasisSpec, n: int) -> BasisMatrix:
    """Evaluate the basis at u = t/n for t = 1..n (uncentered)."""
    if n < 1:
        raise ValueError("n must be positive")
    u = np.arange(1, n + 1, dtype=float) / n
    values = BSpline.design_matrix(u, spec.knots, spec.degree).toarray()
    return BasisMatrix(values=values, centered=False)


def center_design(b: BasisMatrix) -> BasisMatrix:
    """Subtract column means so every fitted curve has zero sample mean."""
    if b.centered:
        raise ValueError("design is already centered")
    means = b.values.mean(axis=0) if b.m > 0 else np.zeros(0)
    return BasisMatrix(values=b.values - means, centered=True, column_means=means)


def empty_basis(n: int) -> BasisMatrix:
    """Degenerate m = 0 basis: no trend term (plain logistic model)."""
    return BasisMatrix(
        values=np.zeros((n, 0)), centered=True, column_means=np.zeros(0)
    )


def write_basis_csv(b: BasisMatrix, path) -> None:
    """Export as CSV with header phi_1..phi_m, one row per t."""
    header = ",".join(f"phi_{k + 1}" for k in range(b.m))
    np.savetxt(path, b.values, fmt="%.9g", delimiter=",", header=header, comments="")
