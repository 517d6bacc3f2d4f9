"""Trilinear hexahedral elasticity, pore-pressure loads, boundary conditions and
the sparse factorizations used for the contact compliance.

Continuum quantities are tension-positive. Nodal dofs are ordered node-major
(3*node + component).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geomodel import HEX_OFFSETS, Mesh, MaterialLayer
from .pardiso import PardisoSolver

_G = 1.0 / math.sqrt(3.0)


def gauss_points() -> np.ndarray:
    return np.array([(a * _G, b * _G, c * _G) for c in (-1, 1) for b in (-1, 1) for a in (-1, 1)])


def _reference_signs() -> np.ndarray:
    # reference coordinates of the local nodes; k grows with depth so dk=1 is the
    # bottom (zeta = -1)
    s = np.zeros((8, 3))
    s[:, 0] = 2 * HEX_OFFSETS[:, 0] - 1
    s[:, 1] = 2 * HEX_OFFSETS[:, 1] - 1
    s[:, 2] = 1 - 2 * HEX_OFFSETS[:, 2]
    return s


def shape_derivatives() -> np.ndarray:
    """dN_a/dxi_i at the Gauss points, shape (8 gp, 8 nodes, 3)."""
    s = _reference_signs()
    g = gauss_points()
    f = 0.5 * (1 + g[:, None, :] * s[None, :, :])
    out = np.empty((8, 8, 3))
    for i in range(3):
        others = [j for j in range(3) if j != i]
        out[:, :, i] = 0.5 * s[None, :, i] * f[:, :, others[0]] * f[:, :, others[1]]
    return out


def physical_gradients(X: np.ndarray):
    """Shape gradients in physical space and Jacobian determinants.

    X has shape (n_el, 8, 3). Returns (dNdx (n_el, 8gp, 8, 3), detJ (n_el, 8gp)).
    """
    dN = shape_derivatives()
    J = np.einsum("gai,eaj->egij", dN, X)
    det = np.linalg.det(J)
    if (det <= 0).any():
        raise ValueError(f"inverted element Jacobian in {int((det.min(axis=1) <= 0).sum())} elements")
    invJ = np.linalg.inv(J)
    dNdx = np.einsum("egij,gaj->egai", invJ, dN)
    return dNdx, det


@dataclass
class ElasticProperties:
    young: np.ndarray
    poisson: np.ndarray
    biot_alpha: float = 1.0

    def __post_init__(self):
        self.young = np.asarray(self.young, dtype=float)
        self.poisson = np.asarray(self.poisson, dtype=float)
        if ((self.poisson <= 0) | (self.poisson >= 0.5)).any():
            raise ValueError("poisson ratio must lie in (0, 0.5)")
        if (self.young <= 0).any():
            raise ValueError("Young modulus must be positive")
        if not 0.0 < self.biot_alpha <= 1.0:
            raise ValueError("biot_alpha must lie in (0, 1]")


def properties_from_layers(
    mesh: Mesh, layers: list[MaterialLayer], biot_alpha: float = 1.0, reservoir_young: float | None = None
) -> ElasticProperties:
    E = np.array([l.young for l in layers])[mesh.hex_material]
    nu = np.array([l.poisson for l in layers])[mesh.hex_material]
    if reservoir_young is not None:
        E = np.where(mesh.hex_block > 0, reservoir_young, E)
    return ElasticProperties(E, nu, biot_alpha)


def element_stiffness(X: np.ndarray, young, poisson) -> np.ndarray:
    """Element matrices, shape (n_el, 24, 24), dof order (node, component)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    young = np.broadcast_to(np.asarray(young, dtype=float), X.shape[:1])
    poisson = np.broadcast_to(np.asarray(poisson, dtype=float), X.shape[:1])
    lam = young * poisson / ((1 + poisson) * (1 - 2 * poisson))
    mu = young / (2 * (1 + poisson))
    dNdx, det = physical_gradients(X)
    wd = det  # unit Gauss weights
    A = np.einsum("eg,egai,egbj->eaibj", wd, dNdx, dNdx)
    n = X.shape[0]
    K = lam[:, None, None, None, None] * A + mu[:, None, None, None, None] * A.transpose(0, 1, 4, 3, 2)
    dd = np.einsum("eaibi->eab", A)
    K += mu[:, None, None, None, None] * dd[:, :, None, :, None] * np.eye(3)[None, None, :, None, :]
    return K.reshape(n, 24, 24)


def _element_dofs(hexes: np.ndarray) -> np.ndarray:
    return (hexes[:, :, None] * 3 + np.arange(3)).reshape(len(hexes), 24)


@dataclass
class GlobalSystem:
    stiffness: sp.csc_matrix
    load: np.ndarray
    constrained: np.ndarray
    free: np.ndarray

    @property
    def n_dof(self) -> int:
        return self.stiffness.shape[0]

    def dof_map(self, node: int) -> tuple[int, int, int]:
        return (3 * node, 3 * node + 1, 3 * node + 2)


def assemble_stiffness(mesh: Mesh, props: ElasticProperties, chunk: int = 4000) -> GlobalSystem:
    n = 3 * mesh.n_nodes
    rows, cols, vals = [], [], []
    for s in range(0, len(mesh.hexes), chunk):
        h = mesh.hexes[s : s + chunk]
        Ke = element_stiffness(mesh.nodes[h], props.young[s : s + chunk], props.poisson[s : s + chunk])
        d = _element_dofs(h)
        rows.append(np.repeat(d, 24, axis=1).ravel())
        cols.append(np.tile(d, (1, 24)).ravel())
        vals.append(Ke.ravel())
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsc()
    K.sum_duplicates()
    empty = np.zeros(0, dtype=int)
    return GlobalSystem(K, np.zeros(n), empty, np.arange(n))


def assemble_pressure_load(mesh: Mesh, dp, alpha: float = 1.0) -> np.ndarray:
    """Equivalent nodal forces of a pore-pressure change, f = int B^T (alpha dp m) dV."""
    dp = np.asarray(dp, dtype=float)
    if dp.shape != (len(mesh.hexes),):
        raise ValueError(f"dp must have one value per hexahedron ({len(mesh.hexes)}), got {dp.shape}")
    f = np.zeros(3 * mesh.n_nodes)
    act = np.flatnonzero(dp != 0)
    if len(act) == 0:
        return f
    h = mesh.hexes[act]
    dNdx, det = physical_gradients(mesh.nodes[h])
    fe = alpha * dp[act, None, None] * np.einsum("eg,egai->eai", det, dNdx)
    np.add.at(f, _element_dofs(h).ravel(), fe.ravel())
    return f


def boundary_nodes(mesh: Mesh, tol: float = 1e-6) -> np.ndarray:
    x, y, z = mesh.nodes.T
    xs, ys, ds = mesh.axes
    on = (
        (np.abs(x - xs[0]) < tol)
        | (np.abs(x - xs[-1]) < tol)
        | (np.abs(y - ys[0]) < tol)
        | (np.abs(y - ys[-1]) < tol)
        | (np.abs(z + ds[-1]) < tol)
    )
    return np.flatnonzero(on)


def apply_bcs(system: GlobalSystem, mesh: Mesh) -> GlobalSystem:
    """Fix all components on the lateral and bottom faces; the top stays traction-free."""
    nodes = boundary_nodes(mesh)
    if len(nodes) == 0:
        raise ValueError("empty boundary node set")
    fixed = (nodes[:, None] * 3 + np.arange(3)).ravel()
    mask = np.ones(system.n_dof, dtype=bool)
    mask[fixed] = False
    return GlobalSystem(system.stiffness, system.load, np.sort(fixed), np.flatnonzero(mask))


def reduced(system: GlobalSystem) -> sp.csc_matrix:
    f = system.free
    return system.stiffness[f][:, f].tocsc()


# ---------------------------------------------------------------- interface operator


def interface_operator(mesh: Mesh) -> sp.csr_matrix:
    """G with rows (element, component) giving the weighted jump sum_k w_k R (u_B - u_A).

    Component order per element: normal, strike, up-dip.
    """
    m = mesh.n_interface
    R = mesh.basis  # (m, 3, 3)
    w = mesh.weights  # (m, 4)
    rows = np.repeat(np.arange(3 * m).reshape(m, 3), 4 * 3 * 2, axis=1)
    vals = []
    cols = []
    for side, nodes in ((1.0, mesh.nodes_b), (-1.0, mesh.nodes_a)):
        v = side * w[:, None, :, None] * R[:, :, None, :]  # (m, comp, node, dir)
        c = nodes[:, None, :, None] * 3 + np.arange(3)[None, None, None, :]
        vals.append(v)
        cols.append(np.broadcast_to(c, v.shape))
    vals = np.concatenate(vals, axis=2).reshape(3 * m, -1)
    cols = np.concatenate(cols, axis=2).reshape(3 * m, -1)
    G = sp.csr_matrix((vals.ravel(), (rows.reshape(3 * m, -1).ravel(), cols.ravel())), shape=(3 * m, 3 * mesh.n_nodes))
    G.sum_duplicates()
    G.eliminate_zeros()
    return G


# ------------------------------------------------------------------- factorization


class CholeskyFactor:
    """Factorization of a sparse SPD matrix, reusable for many right-hand sides."""

    def __init__(self, A: sp.spmatrix):
        self.n = A.shape[0]
        self._solver = PardisoSolver(A, mtype=2)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self._solver.solve(b)


def schur_compliance(K: sp.spmatrix, G: sp.spmatrix) -> np.ndarray:
    """Dense C = G K^{-1} G^T via the Schur complement of the bordered matrix [[K, G^T], [G, 0]]."""
    n, m = K.shape[0], G.shape[0]
    if m == 0:
        return np.zeros((0, 0))
    tiny = sp.diags(np.r_[np.zeros(n), np.full(m, 1e-300)])
    A = sp.bmat([[sp.csr_matrix(K), sp.csr_matrix(G).T], [sp.csr_matrix(G), None]], format="csr") + tiny
    mark = np.r_[np.zeros(n, dtype=np.int32), np.ones(m, dtype=np.int32)]
    S = PardisoSolver(A, mtype=-2, schur_rows=mark)
    C = S.schur
    S.schur = None
    S.release()
    np.negative(C, out=C)
    return C
