"""Frictional contact on fault interface elements with element-wise constant
Lagrange multipliers.

Tractions are stored per element as (normal, strike, up-dip) components acting on
side B; the normal component is compression-positive and includes the initial
effective traction. Jumps are side B relative to side A.

The saddle-point problem is condensed onto the multipliers through the dense
compliance ``C = G K^-1 G^T``. Because constant multipliers on a conforming
split mesh admit spurious zero-energy patterns, a small edge-jump term ``S`` is
added (``C + S`` is then invertible). Stick means the stabilized pseudo-jump
``g + (C + S) dL`` vanishes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class Mode(IntEnum):
    STICK = 0
    SLIP = 1
    OPEN = 2


@dataclass(frozen=True)
class FrictionLaw:
    cohesion: float = 2.0e6
    phi_s: float = 30.0
    phi_d: float = 30.0
    d_c: float = 0.0
    weakening_enabled: bool = False

    def __post_init__(self):
        if self.cohesion < 0:
            raise ValueError("cohesion must be >= 0")
        if not 0.0 < self.phi_s < 90.0:
            raise ValueError("phi_s must lie in (0, 90) deg")
        if self.weakening_enabled:
            if not 0.0 < self.phi_d <= self.phi_s:
                raise ValueError("phi_d must lie in (0, phi_s]")
            if self.d_c <= 0:
                raise ValueError("d_c must be positive when weakening is enabled")

    @classmethod
    def weakening(cls, cohesion: float, phi_s: float, phi_d: float, d_c: float) -> "FrictionLaw":
        return cls(cohesion, phi_s, phi_d, d_c, True)


def update_friction_angle(delta, law: FrictionLaw):
    """Linear slip weakening from phi_s to phi_d over d_c (degrees)."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 0):
        raise ValueError("cumulative slip must be non-negative")
    if not law.weakening_enabled:
        return np.full_like(delta, law.phi_s) if delta.ndim else float(law.phi_s)
    phi = law.phi_s + (law.phi_d - law.phi_s) * np.minimum(delta / law.d_c, 1.0)
    return phi if delta.ndim else float(phi)


def friction_slope(delta, law: FrictionLaw) -> np.ndarray:
    """d tan(phi) / d delta, zero once fully weakened."""
    delta = np.asarray(delta, dtype=float)
    if not law.weakening_enabled:
        return np.zeros_like(delta)
    phi = np.radians(update_friction_angle(delta, law))
    dphi = np.radians(law.phi_d - law.phi_s) / law.d_c
    return np.where(delta < law.d_c, dphi / np.cos(phi) ** 2, 0.0)


def coulomb_limit(lambda_n, law: FrictionLaw, phi=None, dp_f=0.0):
    """tau_L = c + tan(phi) * max(lambda_n - dP_f, 0), compression positive."""
    phi = law.phi_s if phi is None else phi
    eff = np.maximum(np.asarray(lambda_n, dtype=float) - dp_f, 0.0)
    return law.cohesion + np.tan(np.radians(phi)) * eff


def classify(lambda_n, lambda_t, tau_L, tol: float = 1e-8, tol_n: float = 1e3):
    """OPEN below -tol_n (Pa), SLIP on or outside the cone (relative tol), else STICK."""
    lambda_n = np.asarray(lambda_n, dtype=float)
    tmag = np.linalg.norm(np.asarray(lambda_t, dtype=float), axis=-1)
    out = np.where(tmag >= np.asarray(tau_L) * (1.0 - tol), Mode.SLIP, Mode.STICK)
    out = np.where(lambda_n < -tol_n, Mode.OPEN, out)
    return out.astype(int) if out.ndim else Mode(int(out))


@dataclass
class ContactState:
    lambda_n: np.ndarray
    lambda_t: np.ndarray
    gap: np.ndarray
    slip_increment: np.ndarray
    slip_vector: np.ndarray
    cumulative_slip: np.ndarray
    phi_current: np.ndarray
    mode: np.ndarray

    @classmethod
    def initial(cls, sigma_n0, tau0, law: FrictionLaw) -> "ContactState":
        sigma_n0 = np.asarray(sigma_n0, dtype=float)
        m = len(sigma_n0)
        return cls(
            lambda_n=sigma_n0.copy(),
            lambda_t=np.array(tau0, dtype=float).reshape(m, 2),
            gap=np.zeros(m),
            slip_increment=np.zeros((m, 2)),
            slip_vector=np.zeros((m, 2)),
            cumulative_slip=np.zeros(m),
            phi_current=np.full(m, law.phi_s),
            mode=np.zeros(m, dtype=int),
        )

    def copy(self) -> "ContactState":
        return ContactState(**{k: np.array(v, copy=True) for k, v in self.__dict__.items()})

    @property
    def tau_mag(self) -> np.ndarray:
        return np.linalg.norm(self.lambda_t, axis=1)

    def traction(self) -> np.ndarray:
        return np.column_stack([self.lambda_n, self.lambda_t])


# ----------------------------------------------------------------- condensed problem


def edge_pairs(fault: np.ndarray, row: np.ndarray, col: np.ndarray) -> np.ndarray:
    """Index pairs of elements on the same fault that share an edge."""
    key = {(int(f), int(r), int(c)): e for e, (f, r, c) in enumerate(zip(fault, row, col))}
    pairs = []
    for (f, r, c), e in key.items():
        for dr, dc in ((1, 0), (0, 1)):
            o = key.get((f, r + dr, c + dc))
            if o is not None:
                pairs.append((e, o))
    return np.array(sorted(pairs), dtype=int).reshape(-1, 2)


def stabilization(C_diag: np.ndarray, pairs: np.ndarray, beta: float) -> sp.csr_matrix:
    """Sparse edge-jump term coupling neighbouring elements, scaled by the compliance diagonal."""
    m3 = len(C_diag)
    rows, cols, vals = [], [], []
    for comp in range(3):
        i = 3 * pairs[:, 0] + comp
        j = 3 * pairs[:, 1] + comp
        s = beta * np.sqrt(C_diag[i] * C_diag[j])
        rows += [i, j, i, j]
        cols += [i, j, j, i]
        vals += [s, s, -s, -s]
    if not pairs.size:
        return sp.csr_matrix((m3, m3))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m3, m3))


def _invert_spd_inplace(A: np.ndarray, block: int = 1024) -> np.ndarray:
    """Overwrite a symmetric positive definite Fortran/C array with its inverse."""
    from scipy.linalg import lapack

    n = A.shape[0]
    # a C-ordered symmetric array is its own Fortran transpose; work on the F view
    F = A.T
    c, info = lapack.dpotrf(F, lower=1, overwrite_a=1, clean=0)
    if info != 0:
        raise np.linalg.LinAlgError("singular saddle-point system (C + S not positive definite)")
    inv, info = lapack.dpotri(c, lower=1, overwrite_c=1)
    if info != 0:
        raise np.linalg.LinAlgError("inversion of C + S failed")
    F = inv
    for s0 in range(0, n, block):
        s1 = min(n, s0 + block)
        # mirror the lower triangle (Fortran view) into the upper one
        F[s0:s1, s1:] = F[s1:, s0:s1].T
        blk = F[s0:s1, s0:s1]
        F[s0:s1, s0:s1] = np.tril(blk) + np.tril(blk, -1).T
    return F.T


@dataclass
class ContactProblem:
    """Condensed interface operator for one stiffness segment.

    ``C`` is consumed: its storage is reused for ``Z = (C + S)^-1``.
    """

    C: np.ndarray
    area: np.ndarray
    S: sp.spmatrix | None = None
    Z: np.ndarray = field(init=False, repr=False)
    kappa: np.ndarray = field(init=False, repr=False)
    c_diag: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        C = np.ascontiguousarray(self.C, dtype=float)
        m3 = C.shape[0]
        self.c_diag = np.diag(C).copy()
        if self.S is None:
            self.S = sp.csr_matrix((m3, m3))
        self.S = sp.csr_matrix(self.S)
        Sc = self.S.tocoo()
        np.add.at(C, (Sc.row, Sc.col), Sc.data)
        self.Z = _invert_spd_inplace(C) if m3 else C
        self.C = None
        ct = self.c_diag.reshape(-1, 3)[:, 1:].mean(axis=1)
        self.kappa = self.area / ct

    @property
    def n(self) -> int:
        return len(self.area)


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 100
    tol_direction: float = 1e-5
    tol_friction: float = 1e-9
    tol_open: float = 1e3
    stabilization: float = 0.05
    weakening_tangent: float = 0.5


@dataclass
class StepDiagnostics:
    iterations: int
    cone_violation: float
    complementarity: float
    slip_angle: float
    dissipation: float
    constraint_residual: float
    n_slip: int
    n_open: int


# relative round-off allowance for elements already on the cone
CONE_BAND = 1e-12


class ContactConvergenceError(RuntimeError):
    def __init__(self, message: str, elements: np.ndarray | None = None):
        super().__init__(message)
        self.elements = elements if elements is not None else np.zeros(0, dtype=int)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, n, out=np.zeros_like(v), where=n > 0)


def _perp(v: np.ndarray) -> np.ndarray:
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def active_set_solve(
    problem: ContactProblem,
    state: ContactState,
    ghat: np.ndarray,
    law: FrictionLaw,
    dp_f: np.ndarray,
    config: SolverConfig = SolverConfig(),
) -> tuple[np.ndarray, ContactState, StepDiagnostics]:
    """Advance the contact state by one load increment.

    ``ghat`` is the jump increment the load would produce with frozen tractions
    (3 per element). Modes come from the combined quantity
    z = lambda_t + c_r * (forward slip): SLIP where |z| reaches tau_L, which also
    sends back-sliding elements to STICK. On SLIP elements lambda_t = tau_L z/|z|
    is linearized about the current z, so the outer loop is a semismooth Newton
    iteration on modes, slip directions and slip-weakened friction together.
    Returns (traction increment, new state, diagnostics).
    """
    m = problem.n
    Z, A = problem.Z, problem.area
    dp_f = np.broadcast_to(np.asarray(dp_f, dtype=float), (m,))
    ghat = np.asarray(ghat, dtype=float)
    L0 = state.traction()
    delta0 = state.cumulative_slip
    q = Z @ ghat
    c = law.cohesion

    # traction per unit slip used to combine traction and slip in the slip test
    zdiag = np.diag(Z).reshape(m, 3) if m else np.zeros((0, 3))
    c_r = A * zdiag[:, 1:].mean(axis=1)
    smag = np.zeros(m)
    mu = np.tan(np.radians(update_friction_angle(delta0, law)))

    # elastic predictor: start from the all-stick trial so that elements whose
    # load reverses do not enter the step pinned to their old slip direction
    trial = L0 - q.reshape(m, 3)
    tl_trial = c + mu * np.maximum(trial[:, 0] - dp_f, 0.0)
    tmag_trial = np.linalg.norm(trial[:, 1:], axis=1)
    mode = state.mode.copy()
    closed = mode != Mode.OPEN
    lim = tl_trial * np.where(mode == Mode.SLIP, 1.0 - CONE_BAND, 1.0 + config.tol)
    mode[closed] = np.where((tmag_trial >= lim) & (tmag_trial > 0), Mode.SLIP, Mode.STICK)[closed]
    adir = np.where((mode == Mode.SLIP)[:, None], _unit(trial[:, 1:]), _unit(state.lambda_t))
    g = np.where(mode == Mode.SLIP, np.minimum(tl_trial / np.maximum(tmag_trial, 1e-300), 1.0), 1.0)
    dmu = friction_slope(delta0, law)
    L = L0.copy()
    history = []
    changed = np.zeros(m, dtype=bool)
    for it in range(1, config.max_iter + 1):
        slip_e = np.flatnonzero(mode == Mode.SLIP)
        open_e = np.flatnonzero(mode == Mode.OPEN)
        P = np.sort(np.concatenate([3 * slip_e + 1, 3 * slip_e + 2, 3 * open_e, 3 * open_e + 1, 3 * open_e + 2])).astype(int)
        nP = len(P)
        dtil = np.zeros(3 * m)
        if nP:
            pos = np.full(3 * m, -1)
            pos[P] = np.arange(nP)
            B = np.zeros((nP, 3 * m))
            D = np.zeros((nP, nP))
            rhs = np.zeros(nP)
            eff_it = np.maximum(L[:, 0] - dp_f, 0.0)
            for e in slip_e:
                r_par, r_perp = pos[3 * e + 1], pos[3 * e + 2]
                a = adir[e]
                pv = _perp(a)
                B[r_par, 3 * e + 1 : 3 * e + 3] = a
                B[r_par, 3 * e] = -mu[e]
                rhs[r_par] = c + mu[e] * (L0[e, 0] - dp_f[e]) - L0[e, 1:] @ a
                # capped below the element self-stiffness to keep the system well posed
                h = min(-dmu[e] * eff_it[e], config.weakening_tangent * A[e] * zdiag[e, 1:].min())
                if h > 0.0:
                    # weakening linearized in the slip along a, s = -a . dtil_t / A
                    D[r_par, pos[3 * e + 1]] -= h * a[0] / A[e]
                    D[r_par, pos[3 * e + 2]] -= h * a[1] / A[e]
                    rhs[r_par] += h * smag[e]
                # lambda_t = tau_L z / |z| linearized across the direction
                B[r_perp, 3 * e + 1 : 3 * e + 3] = (1.0 - g[e]) * pv
                rhs[r_perp] = -(1.0 - g[e]) * (L0[e, 1:] @ pv)
                kp = g[e] * c_r[e] / A[e]
                D[r_perp, pos[3 * e + 1]] += kp * pv[0]
                D[r_perp, pos[3 * e + 2]] += kp * pv[1]
            for e in open_e:
                for k in range(3):
                    r = pos[3 * e + k]
                    B[r, 3 * e + k] = 1.0
                    rhs[r] = (dp_f[e] if k == 0 else 0.0) - L0[e, k]
            ZP = Z[:, P]
            x = np.linalg.solve(B @ ZP + D, rhs + B @ q)
            dL = ZP @ x - q
            dtil[P] = x
        else:
            dL = -q
        # frictional slip and opening come from the multiplier-conjugate part only;
        # -S dL is the recoverable interface compliance added by the stabilization
        jump = dtil.reshape(m, 3)
        L = L0 + dL.reshape(m, 3)

        slip = np.zeros((m, 2))
        sl = mode == Mode.SLIP
        slip[sl] = jump[sl, 1:] / A[sl, None]
        snorm = np.linalg.norm(slip, axis=1)
        delta = delta0 + snorm
        mu_new = np.tan(np.radians(update_friction_angle(delta, law)))
        eff = L[:, 0] - dp_f
        tauL = c + mu_new * np.maximum(eff, 0.0)
        tmag = np.linalg.norm(L[:, 1:], axis=1)
        z = L[:, 1:] - c_r[:, None] * slip
        zmag = np.linalg.norm(z, axis=1)

        new_mode = np.where(mode == Mode.OPEN, Mode.OPEN, Mode.STICK)
        closed = mode != Mode.OPEN
        # slipping elements keep sliding down to a round-off band below the cone;
        # a wider band would let them converge with a small backward slip
        lim = tauL * np.where(mode == Mode.SLIP, 1.0 - CONE_BAND, 1.0 + config.tol)
        new_mode[closed & (zmag >= lim) & (zmag > 0)] = Mode.SLIP
        to_open = closed & (eff < -config.tol_open)
        op = mode == Mode.OPEN
        gap_new = state.gap + np.where(op, jump[:, 0] / A, 0.0)
        new_mode[op & (gap_new < 0.0)] = Mode.STICK
        new_mode[to_open] = Mode.OPEN
        new_dir = np.where((new_mode == Mode.SLIP)[:, None], _unit(z), adir)

        changed = new_mode != mode
        sl_both = (new_mode == Mode.SLIP) & sl
        ddir = float(np.abs(new_dir - adir)[sl_both].max()) if sl_both.any() else 0.0
        dfric = float(np.abs(mu_new - mu).max()) if m else 0.0
        log.debug(
            "it %d slip %d open %d changed %d ddir %.2e dmu %.2e",
            it, int((new_mode == Mode.SLIP).sum()), int((new_mode == Mode.OPEN).sum()), int(changed.sum()), ddir, dfric,
        )
        if not changed.any() and ddir < config.tol_direction and dfric < config.tol_friction:
            break
        key = (tuple(np.flatnonzero(new_mode == Mode.SLIP)), tuple(np.flatnonzero(new_mode == Mode.OPEN)))
        if changed.any() and key in history[-6:]:
            # cycling between active sets: keep loaded elements on the cone
            cyc = np.flatnonzero(changed)
            log.debug("cycle: elements %s ratio %s", cyc, zmag[cyc] / np.maximum(tauL[cyc], 1.0))
            over = cyc[(tmag[cyc] >= tauL[cyc]) & (new_mode[cyc] == Mode.STICK)]
            new_mode[over] = Mode.SLIP
            new_dir[over] = _unit(L[over, 1:])
        history.append(key)
        smag = np.where(new_mode == Mode.SLIP, snorm, 0.0)
        g = np.where(new_mode == Mode.SLIP, np.minimum(tauL / np.maximum(zmag, 1e-300), 1.0), 1.0)
        mode, adir = new_mode, new_dir
        mu = np.tan(np.radians(update_friction_angle(delta0 + smag, law)))
        dmu = friction_slope(delta0 + smag, law)
    else:
        raise ContactConvergenceError(
            f"active set did not converge in {config.max_iter} iterations", np.flatnonzero(changed)
        )

    new = ContactState(
        lambda_n=L[:, 0].copy(),
        lambda_t=L[:, 1:].copy(),
        gap=np.where(mode == Mode.OPEN, np.maximum(gap_new, 0.0), 0.0),
        slip_increment=slip,
        slip_vector=state.slip_vector + slip,
        cumulative_slip=delta,
        phi_current=update_friction_angle(delta, law),
        mode=mode.astype(int),
    )
    diag = diagnostics(new, slip, tauL, eff, it, problem, mode)
    return dL.reshape(m, 3), new, diag


def diagnostics(new, slip, tauL, eff, it, problem, mode) -> StepDiagnostics:
    tmag = np.linalg.norm(new.lambda_t, axis=1)
    cone = float(np.max((tmag - tauL) / np.maximum(tauL, 1.0))) if len(tmag) else 0.0
    comp = float(np.sum(np.abs(new.gap * eff)))
    sl = mode == Mode.SLIP
    ang = 0.0
    moving = sl & (np.linalg.norm(slip, axis=1) > 1e-14)
    if moving.any():
        cosang = -np.einsum("ij,ij->i", _unit(slip[moving]), _unit(new.lambda_t[moving]))
        ang = float(np.max(np.arccos(np.clip(cosang, -1.0, 1.0))))
    diss = float(-np.sum(np.einsum("ij,ij->i", new.lambda_t, slip) * problem.area))
    return StepDiagnostics(
        iterations=it,
        cone_violation=cone,
        complementarity=comp,
        slip_angle=ang,
        dissipation=diss,
        constraint_residual=float("nan"),
        n_slip=int(sl.sum()),
        n_open=int((mode == Mode.OPEN).sum()),
    )


def stick_components(mode: np.ndarray) -> np.ndarray:
    """Mask over (element, component) rows whose pseudo-jump must vanish."""
    mode = np.asarray(mode)
    mask = np.ones((len(mode), 3), dtype=bool)
    mask[mode == Mode.SLIP, 1:] = False
    mask[mode == Mode.OPEN] = False
    return mask.ravel()


def constraint_residual(pseudo_jump: np.ndarray, mode: np.ndarray, scale: float | None = None) -> float:
    """Largest stick-row pseudo-jump relative to ``scale`` (default: largest pseudo-jump)."""
    pseudo_jump = np.asarray(pseudo_jump, dtype=float).ravel()
    mask = stick_components(mode)
    if not mask.any():
        return 0.0
    if scale is None:
        scale = float(np.abs(pseudo_jump).max())
    scale = max(scale, 1e-300)
    return float(np.abs(pseudo_jump[mask]).max() / scale)
