"""Cubic Hermite discretisation of the weighted space on [0, 1].

Degrees of freedom are ordered node by node as ``(u_i, u'_i)``. Constrained
DOFs (always u(0); also u'(0) unless the rigidity is strongly degenerate)
are eliminated, and every matrix below lives on the free DOFs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .expressions import Field
from .model import AxialForceProfile, Degeneracy, DegeneracyReport, RigidityProfile, classify_degeneracy


@dataclass(frozen=True)
class Mesh:
    nodes: np.ndarray
    beta: float = 1.0

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)


def build_mesh(N: int, beta: float = 2.0) -> Mesh:
    """Graded nodes x_i = (i/N)**beta; beta = 1 is uniform."""
    if N < 2:
        raise ValueError(f"need at least 2 elements, got N={N}")
    if beta < 1:
        raise ValueError(f"grading exponent must be >= 1, got {beta}")
    nodes = (np.arange(N + 1) / N) ** beta
    nodes[-1] = 1.0
    return Mesh(nodes, float(beta))


@dataclass(frozen=True)
class DofMap:
    n_nodes: int
    cls: Degeneracy
    constrained: np.ndarray
    free: np.ndarray

    @property
    def n_full(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_free(self) -> int:
        return self.free.size

    @classmethod
    def for_class(cls, n_nodes: int, degeneracy: Degeneracy) -> "DofMap":
        if degeneracy is Degeneracy.INVALID:
            raise ValueError("cannot discretise an invalid rigidity profile")
        con = [0] if degeneracy is Degeneracy.SD else [0, 1]
        free = np.setdiff1d(np.arange(2 * n_nodes), con)
        return cls(n_nodes, degeneracy, np.asarray(con), free)

    def to_full(self, coeffs: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_full)
        out[self.free] = coeffs
        return out

    def to_free(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[self.free]


def _hermite(xi, h):
    """Hermite shape functions and x-derivatives; xi and h broadcast together.

    The trailing axis of each returned array indexes the 4 local DOFs.
    """
    xi, h = np.broadcast_arrays(np.asarray(xi, float), np.asarray(h, float))
    N = np.stack([1 - 3 * xi**2 + 2 * xi**3, h * (xi - 2 * xi**2 + xi**3),
                  3 * xi**2 - 2 * xi**3, h * (xi**3 - xi**2)], axis=-1)
    dN = np.stack([(6 * xi**2 - 6 * xi) / h, 1 - 4 * xi + 3 * xi**2,
                   (6 * xi - 6 * xi**2) / h, 3 * xi**2 - 2 * xi], axis=-1)
    d2N = np.stack([(12 * xi - 6) / h**2, (6 * xi - 4) / h,
                    (6 - 12 * xi) / h**2, (6 * xi - 2) / h], axis=-1)
    return N, dN, d2N


def gauss_points(mesh: Mesh, n_q: int):
    g, w = np.polynomial.legendre.leggauss(n_q)
    xi = 0.5 * (g + 1.0)
    wq = 0.5 * w
    h = mesh.h
    x = mesh.nodes[:-1, None] + h[:, None] * xi[None, :]
    return xi, x, h[:, None] * wq[None, :]


@dataclass
class DiscreteForms:
    """Weighted bilinear forms over the free DOFs.

    M ~ int u v, Ks ~ int sigma u'' v'', Kq ~ int q u' v', K1 ~ int u' v',
    Cx[i, j] ~ int phi_i x phi_j'. ``e1``/``f1`` pick u(1) and u'(1).
    """

    mesh: Mesh
    dofs: DofMap
    degeneracy: DegeneracyReport
    axial_bounds: tuple[float, float, float]
    M: sp.csr_matrix
    Ks: sp.csr_matrix
    Kq: sp.csr_matrix
    K1: sp.csr_matrix
    Cx: sp.csr_matrix
    e1: np.ndarray
    f1: np.ndarray
    rigidity: RigidityProfile = field(repr=False, default=None)
    axial: AxialForceProfile = field(repr=False, default=None)
    n_q: int = 4

    @property
    def n(self) -> int:
        return self.dofs.n_free

    def stiffness(self, kb: float, kr: float) -> sp.csr_matrix:
        return (self.Ks + self.Kq + kb * sp.csr_matrix(np.outer(self.e1, self.e1)) + kr * sp.csr_matrix(np.outer(self.f1, self.f1))).tocsr()

    def interpolate(self, fld: Field) -> np.ndarray:
        """Hermite nodal interpolant (values and slopes), constrained DOFs dropped."""
        x = self.mesh.nodes
        full = np.empty(2 * x.size)
        full[0::2] = fld.value(x)
        full[1::2] = fld.deriv(x)
        return self.dofs.to_free(full)

    @cached_property
    def _element_dofs(self) -> np.ndarray:
        i = np.arange(self.mesh.n_elements)
        return np.stack([2 * i, 2 * i + 1, 2 * i + 2, 2 * i + 3], axis=1)

    @cached_property
    def gauss_operators(self):
        """Sparse maps from free DOFs to values, slopes and curvatures at the
        assembly quadrature points, with the weights w, w q and w sigma.

        Quadratic forms evaluated as weighted sums of squares through these
        maps agree with M, Kq, Ks but avoid the cancellation of u'Ku when the
        element matrices are stiff."""
        mesh = self.mesh
        xi, xq, wq = gauss_points(mesh, self.n_q)
        N, dN, d2N = _hermite(xi[None, :], mesh.h[:, None])
        ne, nq = xq.shape
        rows = np.repeat(np.arange(ne * nq), 4)
        cols = np.repeat(self._element_dofs, nq, axis=0).ravel()
        free = self.dofs.free
        ops = []
        for arr in (N, dN, d2N):
            B = sp.csr_matrix((arr.reshape(-1), (rows, cols)), shape=(ne * nq, self.dofs.n_full))
            ops.append(B[:, free].tocsr())
        w = wq.ravel()
        return ops, (w, w * np.asarray(self.axial.eval(xq), float).ravel(), w * np.asarray(self.rigidity.eval(xq), float).ravel())

    def evaluate(self, coeffs: np.ndarray, x: np.ndarray):
        """Value, slope and curvature of a free-DOF vector at points x."""
        full = self.dofs.to_full(coeffs)
        x = np.asarray(x, float)
        nodes = self.mesh.nodes
        k = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, self.mesh.n_elements - 1)
        h = self.mesh.h[k]
        xi = (x - nodes[k]) / h
        out = []
        for arr in _hermite(xi, h):
            out.append(np.einsum("pa,pa->p", arr, full[self._element_dofs[k]]))
        return tuple(out)


def assemble_forms(
    mesh: Mesh,
    rigidity: RigidityProfile,
    axial: AxialForceProfile,
    degeneracy: DegeneracyReport | None = None,
    n_q: int = 4,
) -> DiscreteForms:
    """Assemble mass, weighted stiffness and cross forms by Gauss quadrature.

    Gauss points are interior, so sigma is never sampled at x = 0.
    """
    if degeneracy is None:
        degeneracy = classify_degeneracy(rigidity)
    dofs = DofMap.for_class(mesh.nodes.size, degeneracy.cls)
    xi, xq, wq = gauss_points(mesh, n_q)
    N, dN, d2N = _hermite(xi[None, :], mesh.h[:, None])
    s = np.asarray(rigidity.eval(xq), float)
    q = np.asarray(axial.eval(xq), float)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(q))):
        raise ValueError("coefficient profile is not evaluable at the quadrature points")

    def local(A, B, weight):
        return np.einsum("eq,eqa,eqb->eab", wq * weight, A, B)

    one = np.ones_like(xq)
    blocks = {
        "M": local(N, N, one),
        "Ks": local(d2N, d2N, s),
        "Kq": local(dN, dN, q),
        "K1": local(dN, dN, one),
        "Cx": local(N, dN, xq),
    }
    i = np.arange(mesh.n_elements)
    edofs = np.stack([2 * i, 2 * i + 1, 2 * i + 2, 2 * i + 3], axis=1)
    rows = np.repeat(edofs, 4, axis=1).ravel()
    cols = np.tile(edofs, (1, 4)).ravel()
    nfull = dofs.n_full
    free = dofs.free
    mats = {}
    for name, loc in blocks.items():
        A = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(nfull, nfull)).tocsr()
        A = A[free][:, free].tocsr()
        if name != "Cx":
            A = (0.5 * (A + A.T)).tocsr()
        mats[name] = A
    e1 = np.zeros(nfull)
    e1[nfull - 2] = 1.0
    f1 = np.zeros(nfull)
    f1[nfull - 1] = 1.0
    return DiscreteForms(
        mesh=mesh, dofs=dofs, degeneracy=degeneracy, axial_bounds=axial.bounds(),
        e1=e1[free], f1=f1[free], rigidity=rigidity, axial=axial, n_q=n_q, **mats,
    )


# ---------------------------------------------------------------------------
# discrete functions, norms and inequality checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteFunction:
    coeffs: np.ndarray
    forms: DiscreteForms

    @classmethod
    def from_field(cls, fld: Field, forms: DiscreteForms) -> "DiscreteFunction":
        return cls(forms.interpolate(fld), forms)

    @property
    def full(self) -> np.ndarray:
        return self.forms.dofs.to_full(self.coeffs)

    def _q(self, A) -> float:
        return float(self.coeffs @ (A @ self.coeffs))

    @property
    def at_one(self) -> tuple[float, float]:
        return float(self.forms.e1 @ self.coeffs), float(self.forms.f1 @ self.coeffs)


def discrete_norm(u: DiscreteFunction, which: str = "L2", kb: float = 0.0, kr: float = 0.0) -> float:
    """``"L2"``, ``"2sigma"`` (weighted H2 norm) or ``"triple"`` (spring-augmented energy norm)."""
    F = u.forms
    if which == "L2":
        sq = u._q(F.M)
    elif which == "2sigma":
        sq = u._q(F.Ks) + u._q(F.K1) + u._q(F.M)
    elif which == "triple":
        u1, du1 = u.at_one
        sq = u._q(F.Ks) + u._q(F.Kq) + kb * u1**2 + kr * du1**2
    else:
        raise ValueError(f"unknown norm {which!r}")
    return float(np.sqrt(max(sq, 0.0)))


def norm_equivalence_bounds(forms: DiscreteForms, kb: float, kr: float) -> tuple[float, float]:
    """(a, b) with |||u|||^2 <= a ||u||_{2,sigma}^2 and ||u||_{2,sigma}^2 <= b |||u|||^2."""
    q0 = forms.axial_bounds[0]
    K, s1 = forms.degeneracy.K_sigma, forms.degeneracy.sigma_at_one
    a = 1.0 + max((kb + 2.0 * kr) / q0, 2.0 * kr / (s1 * (2.0 - K)))
    b = max(1.0, 1.5 / q0)
    return a, b


@dataclass(frozen=True)
class HardyReport:
    l2: float
    grad: float
    weighted_grad: float
    bending: float
    slope_sq: float
    slack_l2_grad: float
    slack_grad_weighted: float
    slack_slope: float
    scale: float

    def ok(self, rtol: float = 1e-10) -> bool:
        tol = rtol * max(self.scale, np.finfo(float).tiny)
        return min(self.slack_l2_grad, self.slack_grad_weighted, self.slack_slope) >= -tol


def hardy_checks(u: DiscreteFunction) -> HardyReport:
    """Slack of ||u||^2 <= ||u'||^2 <= ||sqrt(q) u'||^2 / q0 and of the trace
    bound |u'(1)|^2 <= 2 (||sqrt(q) u'||^2 / q0 + ||sqrt(sigma) u''||^2 / (sigma(1)(2 - K)))."""
    F = u.forms
    q0 = F.axial_bounds[0]
    K, s1 = F.degeneracy.K_sigma, F.degeneracy.sigma_at_one
    l2, g, wg, b = u._q(F.M), u._q(F.K1), u._q(F.Kq), u._q(F.Ks)
    slope = u.at_one[1] ** 2
    rhs = 2.0 * (wg / q0 + b / (s1 * (2.0 - K)))
    return HardyReport(
        l2=l2, grad=g, weighted_grad=wg, bending=b, slope_sq=slope,
        slack_l2_grad=g - l2, slack_grad_weighted=wg / q0 - g, slack_slope=rhs - slope,
        scale=max(l2, g, wg / q0, rhs, slope),
    )


def load_vector(forms: DiscreteForms, func, n_q: int = 6) -> np.ndarray:
    """int func(x) phi_i(x) dx over the free DOFs."""
    mesh = forms.mesh
    xi, xq, wq = gauss_points(mesh, n_q)
    N, _, _ = _hermite(xi[None, :], mesh.h[:, None])
    loc = np.einsum("eq,eqa->ea", wq * np.asarray(func(xq), float), N)
    full = np.zeros(forms.dofs.n_full)
    np.add.at(full, forms._element_dofs, loc)
    return forms.dofs.to_free(full)


def l2_error(forms: DiscreteForms, coeffs: np.ndarray, exact, n_q: int = 6) -> float:
    """|| u_h - exact ||_{L2} by Gauss quadrature."""
    xi, xq, wq = gauss_points(forms.mesh, n_q)
    uh, _, _ = forms.evaluate(coeffs, xq.ravel())
    d = uh.reshape(xq.shape) - np.asarray(exact(xq), float)
    return float(np.sqrt(np.sum(wq * d * d)))
