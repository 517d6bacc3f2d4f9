"""Conceptual geometry, layered materials, initial stress and the fault-conforming hex mesh.

Coordinates: x, y horizontal, z elevation (positive up, ground surface at z = 0).
Depths handed to the public API are positive downward (depth = -z).

Two reservoir compartments sit side by side at the domain centre::

    block 1: -B <= x <= 0,  block 2: 0 <= x <= B,  |y| <= B/2   (B = block_size)

Faults: F1 at x = -B and F2 at x = +B (along y), F3 at x = 0 between the blocks,
F4 at y = -B/2 and F5 at y = +B/2 (along x). All span fault_depth_top..fault_depth_bottom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.80665
WATER_DENSITY = 1000.0

FAULT_IDS = ("F1", "F2", "F3", "F4", "F5")

# hex local node -> structured offsets (di, dj, dk); k grows with depth, so the
# first four nodes form the deeper (bottom) face, counter-clockwise seen from above
HEX_OFFSETS = np.array(
    [
        (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
        (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    ]
)


class GeometryError(ValueError):
    pass


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class DomainGeometry:
    extent_x: float = 30000.0
    extent_y: float = 30000.0
    extent_z: float = 5000.0
    reservoir_depth_top: float = 2000.0
    reservoir_thickness: float = 200.0
    block_size: float = 2000.0
    fault_depth_top: float = 1600.0
    fault_depth_bottom: float = 3000.0
    dip_f1: float = 85.0
    dip_f2: float = -85.0
    dip_f3: float = 90.0
    block2_offset: float = 0.0

    @property
    def reservoir_depth_bottom(self) -> float:
        return self.reservoir_depth_top + self.reservoir_thickness

    @property
    def pivot_depth(self) -> float:
        """Depth at which dipping fault planes pass through their nominal trace."""
        return self.reservoir_depth_top + 0.5 * self.reservoir_thickness


@dataclass(frozen=True)
class MaterialLayer:
    name: str
    depth_top: float
    depth_bottom: float
    density: float
    young: float
    poisson: float


def reference_layers() -> list[MaterialLayer]:
    """Overburden / Zechstein salt / Upper Rotliegend reservoir / underburden."""
    return [
        MaterialLayer("overburden", 0.0, 1600.0, 2200.0, 10.0e9, 0.25),
        MaterialLayer("zechstein", 1600.0, 2000.0, 2100.0, 40.0e9, 0.30),
        MaterialLayer("reservoir", 2000.0, 2200.0, 2400.0, 11.0e9, 0.15),
        MaterialLayer("underburden", 2200.0, 5000.0, 2600.0, 30.0e9, 0.20),
    ]


RESERVOIR_LAYER = 2


def check_layers(layers: list[MaterialLayer], extent_z: float = 5000.0) -> None:
    if not layers:
        raise GeometryError("empty layer list")
    if layers[0].depth_top != 0.0 or not math.isclose(layers[-1].depth_bottom, extent_z):
        raise GeometryError(f"layers must tile [0, {extent_z}] m")
    for upper, lower in zip(layers, layers[1:]):
        if upper.depth_bottom != lower.depth_top:
            raise GeometryError(f"gap or overlap between {upper.name} and {lower.name}")
    for layer in layers:
        if layer.depth_bottom <= layer.depth_top:
            raise GeometryError(f"layer {layer.name} has non-positive thickness")
        if not 0.0 < layer.poisson < 0.5 or layer.young <= 0.0:
            raise GeometryError(f"layer {layer.name} has invalid elastic constants")


@dataclass(frozen=True)
class StressRegime:
    M1: float = 0.74
    M2: float = 0.83
    theta: float = 0.0
    water_density: float = WATER_DENSITY
    gravity: float = GRAVITY


def build_geometry(
    dip_f3: float = 90.0,
    block2_offset: float = 0.0,
    vertical_cell: float = 20.0,
    **overrides: float,
) -> DomainGeometry:
    """Validated geometry; dips are signed, positive planes move toward +x with depth."""
    if not 65.0 <= abs(dip_f3) <= 90.0:
        raise GeometryError(f"dip_f3 = {dip_f3} deg outside the +/-65..90 deg range")
    geom = DomainGeometry(dip_f3=float(dip_f3), block2_offset=float(block2_offset), **overrides)
    if not 0.0 <= block2_offset <= geom.reservoir_thickness:
        raise GeometryError(
            f"block2_offset = {block2_offset} m outside [0, {geom.reservoir_thickness}] m"
        )
    ratio = block2_offset / vertical_cell
    if abs(ratio - round(ratio)) > 1e-9:
        raise GeometryError(
            f"block2_offset = {block2_offset} m is not a multiple of the {vertical_cell} m cell"
        )
    for name in ("dip_f1", "dip_f2"):
        if not 45.0 <= abs(getattr(geom, name)) <= 90.0:
            raise GeometryError(f"{name} out of range")
    return geom


# --------------------------------------------------------------------------- mesh


@dataclass(frozen=True)
class MeshResolution:
    dx: float = 200.0
    dy: float = 200.0
    dz: float = 20.0
    fine_top: float = 1800.0
    fine_bottom: float = 2400.0
    grading: float = 2.0
    f3_band: float = 1000.0
    pad_cells: int = 2


@dataclass
class Mesh:
    """Hexahedral grid with zero-thickness interface quads on the faults.

    Interface arrays are indexed by interface element; ``nodes_a``/``nodes_b``
    hold the coincident quadruples on side A / side B and ``normal`` points from
    A to B. ``basis`` rows are (normal, strike tangent, up-dip tangent).
    """

    nodes: np.ndarray
    hexes: np.ndarray
    hex_material: np.ndarray
    hex_block: np.ndarray
    hex_ijk: np.ndarray
    shape: tuple[int, int, int]
    axes: tuple[np.ndarray, np.ndarray, np.ndarray]
    fault: np.ndarray
    hex_a: np.ndarray
    hex_b: np.ndarray
    nodes_a: np.ndarray
    nodes_b: np.ndarray
    basis: np.ndarray
    weights: np.ndarray
    area: np.ndarray
    centroid: np.ndarray
    row: np.ndarray
    col: np.ndarray
    fault_columns: dict[str, int] = field(default_factory=dict)
    geometry: DomainGeometry | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_interface(self) -> int:
        return len(self.fault)

    @property
    def normal(self) -> np.ndarray:
        return self.basis[:, 0, :]

    @property
    def depth(self) -> np.ndarray:
        return -self.centroid[:, 2]

    def fault_mask(self, fault: str | int) -> np.ndarray:
        idx = FAULT_IDS.index(fault) if isinstance(fault, str) else int(fault)
        return self.fault == idx

    def summary(self) -> dict[str, object]:
        counts = {f: int(self.fault_mask(f).sum()) for f in FAULT_IDS}
        return {
            "nodes": self.n_nodes,
            "hexahedra": len(self.hexes),
            "interface_elements": self.n_interface,
            "per_fault": counts,
            "grid_cells": self.shape,
        }


def graded_sizes(length: float, h0: float, ratio_max: float) -> np.ndarray:
    """Fewest geometrically growing cells (common ratio <= ratio_max) starting after h0."""
    if length <= 0:
        return np.zeros(0)
    for n in range(1, 200):
        full = h0 * sum(ratio_max**k for k in range(1, n + 1))
        if full >= length - 1e-9:
            break
    lo, hi = 1e-6, ratio_max
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if h0 * sum(mid**k for k in range(1, n + 1)) < length:
            lo = mid
        else:
            hi = mid
    r = 0.5 * (lo + hi)
    sizes = h0 * r ** np.arange(1, n + 1)
    return sizes * (length / sizes.sum())


def _symmetric_axis(half_extent: float, half_fine: float, h: float, ratio: float) -> np.ndarray:
    n_fine = round(half_fine / h)
    if abs(n_fine * h - half_fine) > 1e-6:
        raise MeshError(f"cell size {h} does not divide {half_fine}")
    fine = np.arange(0, n_fine + 1) * h
    outer = half_fine + np.cumsum(graded_sizes(half_extent - half_fine, h, ratio))
    pos = np.concatenate([fine, outer])
    return np.concatenate([-pos[:0:-1], pos])


def _depth_axis(geom: DomainGeometry, res: MeshResolution) -> np.ndarray:
    n_fine = round((res.fine_bottom - res.fine_top) / res.dz)
    if abs(n_fine * res.dz - (res.fine_bottom - res.fine_top)) > 1e-6:
        raise MeshError("dz does not divide the refined band")
    for d in (geom.reservoir_depth_top, geom.reservoir_depth_bottom):
        if abs((d - res.fine_top) / res.dz - round((d - res.fine_top) / res.dz)) > 1e-9:
            raise MeshError("dz does not divide the reservoir thickness")
    if geom.reservoir_depth_bottom + geom.block2_offset > res.fine_bottom + 1e-9:
        raise MeshError("offset reservoir leaves the refined band")
    if not geom.fault_depth_top <= res.fine_top < res.fine_bottom <= geom.fault_depth_bottom:
        raise MeshError("refined band must lie inside the fault depth range")
    fine = res.fine_top + np.arange(n_fine + 1) * res.dz
    up1 = res.fine_top - np.cumsum(graded_sizes(res.fine_top - geom.fault_depth_top, res.dz, res.grading))
    h_up = -np.diff(np.concatenate([[res.fine_top], up1]))[-1] if len(up1) else res.dz
    up2 = up1[-1] - np.cumsum(graded_sizes(up1[-1], h_up, res.grading)) if len(up1) else []
    down1 = res.fine_bottom + np.cumsum(
        graded_sizes(geom.fault_depth_bottom - res.fine_bottom, res.dz, res.grading)
    )
    h_dn = np.diff(np.concatenate([[res.fine_bottom], down1]))[-1] if len(down1) else res.dz
    last = down1[-1] if len(down1) else res.fine_bottom
    down2 = last + np.cumsum(graded_sizes(geom.extent_z - last, h_dn, res.grading))
    depth = np.concatenate([np.asarray(up2)[::-1], up1[::-1], fine, down1, down2])
    depth[np.abs(depth) < 1e-9] = 0.0
    return np.round(depth, 9)


def _index_of(axis: np.ndarray, value: float) -> int:
    i = int(np.argmin(np.abs(axis - value)))
    if abs(axis[i] - value) > 1e-6:
        raise MeshError(f"no grid plane at {value}")
    return i


def _fault_shift(geom: DomainGeometry, dip: float, depth: np.ndarray) -> np.ndarray:
    if abs(abs(dip) - 90.0) < 1e-12:
        return np.zeros_like(depth)
    d = np.clip(depth, geom.fault_depth_top, geom.fault_depth_bottom)
    return (d - geom.pivot_depth) / math.tan(math.radians(dip))


def generate_mesh(geom: DomainGeometry, res: MeshResolution | None = None) -> Mesh:
    res = res or MeshResolution()
    if res.grading < 1.0:
        raise MeshError("grading ratio must be >= 1")
    half_b = 0.5 * geom.block_size
    for h, span in ((res.dx, geom.block_size), (res.dy, geom.block_size), (res.dz, geom.reservoir_thickness)):
        if abs(span / h - round(span / h)) > 1e-9:
            raise MeshError(f"cell size {h} m does not divide {span} m")
    xs = _symmetric_axis(0.5 * geom.extent_x, geom.block_size + res.pad_cells * res.dx, res.dx, res.grading)
    ys = _symmetric_axis(0.5 * geom.extent_y, half_b + res.pad_cells * res.dy, res.dy, res.grading)
    ds = _depth_axis(geom, res)
    nx, ny, nz = len(xs) - 1, len(ys) - 1, len(ds) - 1
    i1, i3, i2 = (_index_of(xs, v) for v in (-geom.block_size, 0.0, geom.block_size))
    j4, j5 = _index_of(ys, -half_b), _index_of(ys, half_b)
    kt, kb = _index_of(ds, geom.fault_depth_top), _index_of(ds, geom.fault_depth_bottom)

    # node coordinates with sheared columns around dipping faults
    X, Y, D = np.meshgrid(xs, ys, ds, indexing="ij")
    Xs = X.copy()
    bands = [
        (-geom.block_size, geom.dip_f1, res.pad_cells * res.dx),
        (0.0, geom.dip_f3, res.f3_band),
        (geom.block_size, geom.dip_f2, res.pad_cells * res.dx),
    ]
    for x0, dip, band in bands:
        w = np.clip(1.0 - np.abs(X - x0) / band, 0.0, None)
        Xs = Xs + w * _fault_shift(geom, dip, D)
    nodes = np.column_stack([Xs.ravel(), Y.ravel(), -D.ravel()])
    nid = np.arange(nodes.shape[0]).reshape(nx + 1, ny + 1, nz + 1)

    I, J, K = (a.ravel() for a in np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"))
    hex_ijk = np.column_stack([I, J, K])
    hexes = np.stack([nid[I + o[0], J + o[1], K + o[2]] for o in HEX_OFFSETS], axis=1)
    hid = np.arange(len(hexes)).reshape(nx, ny, nz)

    # materials and compartments
    layers = reference_layers()
    dmid = 0.5 * (ds[K] + ds[K + 1])
    in_b1 = (I >= i1) & (I < i3) & (J >= j4) & (J < j5)
    in_b2 = (I >= i3) & (I < i2) & (J >= j4) & (J < j5)
    shifted = np.where(in_b2 & (dmid > geom.fault_depth_top) & (dmid < geom.fault_depth_bottom), geom.block2_offset, 0.0)
    dref = dmid.copy()
    # inside block-2 columns the reservoir and everything between it and the
    # salt base is lowered by the offset; the salt fills the vacated interval
    top, bot = geom.reservoir_depth_top, geom.reservoir_depth_bottom
    lowered = shifted > 0
    salt_gap = lowered & (dmid > top) & (dmid < top + shifted)
    res_gap = lowered & (dmid > top + shifted) & (dmid < bot + shifted)
    under_gap = lowered & (dmid > bot) & (dmid < bot + shifted) & ~res_gap
    material = np.searchsorted([l.depth_bottom for l in layers], dref, side="left")
    material = np.minimum(material, len(layers) - 1)
    material[salt_gap] = 1
    material[res_gap] = RESERVOIR_LAYER
    material[under_gap] = 3
    is_res = material == RESERVOIR_LAYER
    block = np.zeros(len(hexes), dtype=int)
    block[is_res & in_b1] = 1
    block[is_res & in_b2] = 2

    # fault faces as (fault index, hex A, hex B, plane axis, plane index)
    faces = []
    kk = np.arange(kt, kb)
    for fidx, i in ((0, i1), (1, i2), (2, i3)):
        for j in range(j4, j5):
            for k in kk:
                faces.append((fidx, hid[i - 1, j, k], hid[i, j, k], 0, j, k))
    for fidx, j in ((3, j4), (4, j5)):
        for i in range(i1, i2):
            for k in kk:
                faces.append((fidx, hid[i, j - 1, k], hid[i, j, k], 1, i, k))
    faces_arr = np.array(faces, dtype=int)
    fault_pairs = {(int(a), int(b)) for _, a, b, *_ in faces} | {(int(b), int(a)) for _, a, b, *_ in faces}

    hexes = _split_nodes(hexes, hex_ijk, hid, fault_pairs, faces_arr, nid, nodes.shape[0])
    n_total = int(hexes.max()) + 1
    if n_total > nodes.shape[0]:
        extra = np.zeros((n_total - nodes.shape[0], 3))
        nodes = np.vstack([nodes, extra])
    # copies inherit the coordinates of their original structured position
    nodes = _copy_coordinates(nodes, hexes, hex_ijk, nid)

    fault = faces_arr[:, 0]
    ha, hb = faces_arr[:, 1], faces_arr[:, 2]
    na = np.empty((len(faces_arr), 4), dtype=int)
    nb = np.empty_like(na)
    for m, (_, a, b, axis, t, k) in enumerate(faces_arr):
        if axis == 0:
            loc_a = _local(1, None, None, hex_ijk[a], (None, t, k))
            loc_b = _local(0, None, None, hex_ijk[b], (None, t, k))
        else:
            loc_a = _local(None, 1, None, hex_ijk[a], (t, None, k))
            loc_b = _local(None, 0, None, hex_ijk[b], (t, None, k))
        na[m] = hexes[a, loc_a]
        nb[m] = hexes[b, loc_b]

    quads = nodes[na]
    basis, weights, area, centroid = _interface_geometry(quads, nodes, hexes, ha, hb)
    row = faces_arr[:, 5] - kt
    col = np.where(faces_arr[:, 3] == 0, faces_arr[:, 4] - j4, faces_arr[:, 4] - i1)

    mesh = Mesh(
        nodes=nodes,
        hexes=hexes,
        hex_material=material,
        hex_block=block,
        hex_ijk=hex_ijk,
        shape=(nx, ny, nz),
        axes=(xs, ys, ds),
        fault=fault,
        hex_a=ha,
        hex_b=hb,
        nodes_a=na,
        nodes_b=nb,
        basis=basis,
        weights=weights,
        area=area,
        centroid=centroid,
        row=row,
        col=col,
        fault_columns={"i1": i1, "i2": i2, "i3": i3, "j4": j4, "j5": j5, "kt": kt, "kb": kb},
        geometry=geom,
    )
    check_mesh(mesh)
    return mesh


def _local(di, dj, dk, ijk, corner):
    """Hex-local indices of the four face nodes, ordered like the quad (s, k) loop."""
    out = []
    i0, j0, k0 = ijk
    if di is not None:
        _, t, k = corner
        cand = [(di, t - j0, k - k0), (di, t + 1 - j0, k - k0), (di, t + 1 - j0, k + 1 - k0), (di, t - j0, k + 1 - k0)]
    else:
        t, _, k = corner
        cand = [(t - i0, dj, k - k0), (t + 1 - i0, dj, k - k0), (t + 1 - i0, dj, k + 1 - k0), (t - i0, dj, k + 1 - k0)]
    for c in cand:
        out.append(int(np.flatnonzero((HEX_OFFSETS == c).all(axis=1))[0]))
    return out


def _split_nodes(hexes, hex_ijk, hid, fault_pairs, faces, nid, n_nodes):
    """Duplicate fault nodes: one copy per group of hexes connected around the node
    through non-fault faces. Fault tips therefore stay shared."""
    hexes = hexes.copy()
    nx, ny, nz = hid.shape
    touched = set()
    for _, a, _, axis, t, k in faces:
        i0, j0, _ = hex_ijk[a]
        if axis == 0:
            i = i0 + 1
            for dj in (0, 1):
                for dk in (0, 1):
                    touched.add((i, t + dj, k + dk))
        else:
            j = j0 + 1
            for di in (0, 1):
                for dk in (0, 1):
                    touched.add((t + di, j, k + dk))
    next_id = n_nodes
    for (i, j, k) in sorted(touched):
        around = []
        for di in (-1, 0):
            for dj in (-1, 0):
                for dk in (-1, 0):
                    a, b, c = i + di, j + dj, k + dk
                    if 0 <= a < nx and 0 <= b < ny and 0 <= c < nz:
                        around.append((a, b, c))
        parent = {h: h for h in around}

        def find(h):
            while parent[h] != h:
                parent[h] = parent[parent[h]]
                h = parent[h]
            return h

        for p in around:
            for q in around:
                if p < q and sum(abs(np.subtract(p, q))) == 1:
                    hp, hq = int(hid[p]), int(hid[q])
                    if (hp, hq) not in fault_pairs:
                        parent[find(p)] = find(q)
        groups: dict[tuple, list] = {}
        for h in around:
            groups.setdefault(find(h), []).append(h)
        ordered = sorted(groups.values(), key=lambda g: min(int(hid[h]) for h in g))
        orig = nid[i, j, k]
        for g in ordered[1:]:
            for h in g:
                e = int(hid[h])
                hexes[e][hexes[e] == orig] = next_id
            next_id += 1
    return hexes


def _copy_coordinates(nodes, hexes, hex_ijk, nid):
    n_struct = nid.size
    n_total = int(hexes.max()) + 1
    if n_total == n_struct:
        return nodes
    out = np.zeros((n_total, 3))
    out[:n_struct] = nodes[:n_struct]
    mask = hexes >= n_struct
    e, l = np.nonzero(mask)
    ijk = hex_ijk[e] + HEX_OFFSETS[l]
    out[hexes[e, l]] = nodes[nid[ijk[:, 0], ijk[:, 1], ijk[:, 2]]]
    return out


_GP = np.array([-1.0, 1.0]) / math.sqrt(3.0)


def _interface_geometry(quads, nodes, hexes, ha, hb):
    n = len(quads)
    weights = np.zeros((n, 4))
    xi = np.array([(-1, -1), (1, -1), (1, 1), (-1, 1)], dtype=float)
    for s in _GP:
        for t in _GP:
            N = 0.25 * (1 + xi[:, 0] * s) * (1 + xi[:, 1] * t)
            dNs = 0.25 * xi[:, 0] * (1 + xi[:, 1] * t)
            dNt = 0.25 * xi[:, 1] * (1 + xi[:, 0] * s)
            a = np.einsum("k,mkj->mj", dNs, quads)
            b = np.einsum("k,mkj->mj", dNt, quads)
            jac = np.linalg.norm(np.cross(a, b), axis=1)
            weights += jac[:, None] * N[None, :]
    area = weights.sum(axis=1)
    normal = np.cross(quads[:, 2] - quads[:, 0], quads[:, 3] - quads[:, 1])
    normal /= np.linalg.norm(normal, axis=1)[:, None]
    ca = nodes[hexes[ha]].mean(axis=1)
    cb = nodes[hexes[hb]].mean(axis=1)
    flip = np.einsum("ij,ij->i", normal, cb - ca) < 0
    normal[flip] *= -1.0
    ez = np.array([0.0, 0.0, 1.0])
    updip = ez[None, :] - normal[:, 2:3] * normal
    updip /= np.linalg.norm(updip, axis=1)[:, None]
    strike = np.cross(updip, normal)
    basis = np.stack([normal, strike, updip], axis=1)
    centroid = quads.mean(axis=1)
    return basis, weights, area, centroid


def hex_jacobian_dets(nodes: np.ndarray, hexes: np.ndarray) -> np.ndarray:
    """Jacobian determinants at the 8 Gauss points, shape (n_hex, 8)."""
    from .fem import shape_derivatives

    dN = shape_derivatives()
    X = nodes[hexes]
    J = np.einsum("gai,eaj->egij", dN, X)
    return np.linalg.det(J)


def check_mesh(mesh: Mesh) -> None:
    dets = hex_jacobian_dets(mesh.nodes, mesh.hexes)
    if (dets <= 0).any():
        raise MeshError(f"{int((dets.min(axis=1) <= 0).sum())} inverted hexahedra")
    gap = np.abs(mesh.nodes[mesh.nodes_a] - mesh.nodes[mesh.nodes_b]).max() if mesh.n_interface else 0.0
    if gap > 1e-6:
        raise MeshError("interface node quadruples are not coincident")
    if (mesh.area <= 0).any():
        raise MeshError("degenerate interface element")


# ------------------------------------------------------------------------ stress


def vertical_effective_stress(depth, layers: list[MaterialLayer], regime: StressRegime = StressRegime()):
    """sigma_v'(z) = int_0^z rho g ds - rho_w g z  (compression positive, Pa)."""
    depth = np.asarray(depth, dtype=float)
    tops = np.array([l.depth_top for l in layers])
    bots = np.array([l.depth_bottom for l in layers])
    rho = np.array([l.density for l in layers])
    thick = np.clip(depth[..., None], tops, bots) - tops
    sv = regime.gravity * (thick * rho).sum(axis=-1) - regime.water_density * regime.gravity * depth
    if np.any(sv < -1e-6):
        raise GeometryError("negative vertical effective stress; water density too high")
    return sv


def principal_tensor(sv, regime: StressRegime) -> np.ndarray:
    """Compression-positive effective stress tensors for vertical stresses ``sv``.

    sigma_h acts along x (normal to F1/F2) and sigma_H along y when theta = 0;
    theta rotates sigma_H about the vertical axis.
    """
    sv = np.asarray(sv, dtype=float)
    th = math.radians(regime.theta)
    e_H = np.array([-math.sin(th), math.cos(th), 0.0])
    e_h = np.array([math.cos(th), math.sin(th), 0.0])
    ez = np.array([0.0, 0.0, 1.0])
    T = (
        regime.M1 * np.einsum("i,j->ij", e_h, e_h)
        + regime.M2 * np.einsum("i,j->ij", e_H, e_H)
        + np.einsum("i,j->ij", ez, ez)
    )
    return sv[..., None, None] * T


def resolve_traction(stress: np.ndarray, normal: np.ndarray, basis: np.ndarray | None = None):
    """Normal stress (compression positive) and shear vector on a plane.

    Returns the global shear vector, or its components in ``basis`` rows
    (strike, up-dip) when a 2x3 tangent basis is given.
    """
    stress = np.asarray(stress, dtype=float)
    normal = np.asarray(normal, dtype=float)
    nn = np.linalg.norm(normal, axis=-1)
    if np.any(np.abs(nn - 1.0) > 1e-9):
        raise ValueError("normal must be a unit vector")
    t = np.einsum("...ij,...j->...i", stress, normal)
    sigma_n = np.einsum("...i,...i->...", t, normal)
    tau = t - sigma_n[..., None] * normal
    if basis is not None:
        tau = np.einsum("...ij,...j->...i", basis, tau)
    return sigma_n, tau


def column_layers(layers: list[MaterialLayer], offset: float) -> list[MaterialLayer]:
    """Layer stack inside block-2 columns, whose reservoir is lowered by ``offset``."""
    if offset == 0:
        return layers
    out = []
    for idx, l in enumerate(layers):
        top, bot = l.depth_top, l.depth_bottom
        if idx >= 2:
            top += offset
        if 1 <= idx <= 2:
            bot += offset
        out.append(MaterialLayer(l.name, top, bot, l.density, l.young, l.poisson))
    return out


@dataclass
class StressField:
    hex_stress: np.ndarray
    sigma_n0: np.ndarray
    tau0: np.ndarray


def compute_initial_stress(
    mesh: Mesh, layers: list[MaterialLayer], regime: StressRegime = StressRegime()
) -> StressField:
    geom = mesh.geometry or DomainGeometry()
    check_layers(layers, geom.extent_z)
    c = mesh.fault_columns
    ijk = mesh.hex_ijk
    in_b2 = (ijk[:, 0] >= c["i3"]) & (ijk[:, 0] < c["i2"]) & (ijk[:, 1] >= c["j4"]) & (ijk[:, 1] < c["j5"])
    hex_depth = -mesh.nodes[mesh.hexes].mean(axis=1)[:, 2]
    shifted = column_layers(layers, geom.block2_offset)
    sv = np.where(
        in_b2,
        vertical_effective_stress(hex_depth, shifted, regime),
        vertical_effective_stress(hex_depth, layers, regime),
    )
    hex_stress = principal_tensor(sv, regime)

    d = mesh.depth
    sv_a = np.where(in_b2[mesh.hex_a], vertical_effective_stress(d, shifted, regime), vertical_effective_stress(d, layers, regime))
    sv_b = np.where(in_b2[mesh.hex_b], vertical_effective_stress(d, shifted, regime), vertical_effective_stress(d, layers, regime))
    sig = principal_tensor(0.5 * (sv_a + sv_b), regime)
    sigma_n, tau = resolve_traction(sig, mesh.normal, mesh.basis[:, 1:, :])
    return StressField(hex_stress=hex_stress, sigma_n0=sigma_n, tau0=tau)
