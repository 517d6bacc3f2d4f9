"""End-to-end acceptance criteria 1-9 at the default desk mesh.

Slow: the catalog batch plus the reference runs take tens of minutes on one core.
Each criterion prints one PASS/FAIL line in the pytest terminal summary.
"""

import time

import numpy as np
import pytest
import scipy.sparse.linalg as spla

import conftest
from bandwidth_cases import CASES
from conftest import COARSE
from test_bandwidth import make
from test_contact import _case, _oracle, _single
from test_fem import box, props

from faultbands import fem
from faultbands.bandwidth import advise
from faultbands.cli import main
from faultbands.contact import Mode, active_set_solve
from faultbands.metrics import compute_history
from faultbands.pressure import Phase
from faultbands.scenarios import catalog_ids, rank, run_batch
from faultbands.solver import SimulationConfig, kkt_summary, run_simulation

MPA = 1e6
RES_TOP, RES_BOTTOM = 2000.0, 2200.0


def report(k, ok, detail=""):
    conftest.CRITERIA[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def reference():
    t0 = time.time()
    result = run_simulation(SimulationConfig())
    return result, compute_history(result), time.time() - t0


@pytest.fixture(scope="module")
def catalog_batch():
    runs = [(i, "CH4") for i in catalog_ids()]
    runs += [("C2", f) for f in ("CO2", "N2", "H2")]
    runs += [(i, f) for i in ("W", "H") for f in ("CO2", "H2")]
    outcomes, records = [], []
    for sid, fluid in runs:
        b = run_batch([sid], [fluid])
        outcomes += b.runs
        records += b.records
    from faultbands.scenarios import BatchResult

    return BatchResult(outcomes, records)


# ----------------------------------------------------------------------- 1


def test_criterion_1_fe_verification():
    t0 = time.time()
    g = np.linspace(0.0, 2.0, 3)
    m = box(g, g, g)
    inner = np.flatnonzero(np.all(np.isclose(m.nodes, [1.0, 1.0, -1.0]), axis=1))
    m.nodes[inner] += [0.21, -0.13, 0.17]
    K = fem.assemble_stiffness(m, props(len(m.hexes), 2.0, 0.3)).stiffness.tocsr()
    A = np.array([[1e-3, 2e-3, -1e-3], [0.5e-3, -2e-3, 3e-3], [1e-3, 0.0, 1e-3]])
    exact = (m.nodes @ A.T + [0.1, 0.2, 0.3]).ravel()
    free = np.zeros(3 * m.n_nodes, dtype=bool)
    free[3 * inner[0] : 3 * inner[0] + 3] = True
    u = exact.copy()
    u[free] = spla.spsolve(K[free][:, free].tocsc(), -(K[free][:, ~free] @ exact[~free]))
    patch = np.abs(u - exact).max() / np.abs(exact).max()

    E, nu, h, dp = 11e9, 0.15, 200.0, -18 * MPA
    m = box([0, 100.0], [0, 100.0], np.linspace(2000, 2000 + h, 5))
    K = fem.assemble_stiffness(m, props(len(m.hexes), E, nu)).stiffness.tocsr()
    f = fem.assemble_pressure_load(m, np.full(len(m.hexes), dp), alpha=1.0)
    fixed = np.zeros((m.n_nodes, 3), dtype=bool)
    fixed[:, :2] = True
    fixed[np.isclose(m.nodes[:, 2], -(2000 + h)), 2] = True
    fr = ~fixed.ravel()
    u = np.zeros(3 * m.n_nodes)
    u[fr] = spla.spsolve(K[fr][:, fr].tocsc(), f[fr])
    settle = -u.reshape(-1, 3)[np.isclose(m.nodes[:, 2], -2000.0), 2].mean()
    err = abs(settle - 0.31) / 0.31
    dt = time.time() - t0
    report(
        1,
        patch <= 1e-10 and err <= 0.02 and dt < 10,
        f"patch rel err {patch:.1e}, oedometer {settle:.4f} m ({100 * err:.2f}% from 0.31 m), {dt:.1f} s",
    )


# ----------------------------------------------------------------------- 2


def test_criterion_2_kkt_suite(catalog_batch):
    bad = []
    worst = dict(cone=0.0, comp=0.0, angle=0.0, diss=np.inf)
    for r in catalog_batch.runs:
        if r.error is not None:
            bad.append(f"{r.scenario}/{r.fluid}: {r.error}")
            continue
        s = r.kkt
        worst["cone"] = max(worst["cone"], s.cone_violation)
        worst["comp"] = max(worst["comp"], s.complementarity)
        worst["angle"] = max(worst["angle"], s.slip_angle)
        worst["diss"] = min(worst["diss"], s.min_dissipation)
        if not s.passes(cone=1e-6, comp=1e-8, angle=1e-3):
            bad.append(f"{r.scenario}/{r.fluid}: {s}")
    report(
        2,
        not bad,
        f"{len(catalog_batch.runs)} runs; worst cone {worst['cone']:.1e}, complementarity {worst['comp']:.1e}, "
        f"angle {worst['angle']:.1e} rad, min dissipation {worst['diss']:.3g}" + (f"; failures {bad}" if bad else ""),
    )


# ----------------------------------------------------------------------- 3


def test_criterion_3_single_element_oracle():
    rng = np.random.default_rng(12345)
    mismatches, n_slip = [], 0
    for k in range(100):
        cn, ct, area, law, sigma_n, tau, ghat, dp = _case(rng)
        prob, state = _single(cn, ct, area, law, sigma_n, tau)
        _, new, _ = active_set_solve(prob, state, ghat, law, dp)
        kind, s, Ln, Lt = _oracle(cn, ct, area, law, sigma_n, tau, ghat, 0.0, dp)
        n_slip += kind == "slip"
        ok = (
            new.mode[0] == (Mode.SLIP if kind == "slip" else Mode.STICK)
            and abs(new.lambda_n[0] - Ln) <= 1e-10 * abs(Ln)
            and np.allclose(new.lambda_t[0], Lt, rtol=1e-8, atol=1e-6 * MPA)
            and abs(new.cumulative_slip[0] - s) <= max(1e-8 * s, 1e-12)
        )
        if not ok:
            mismatches.append(k)
    report(3, not mismatches, f"100 cases ({n_slip} slip), mismatches {mismatches}")


# ----------------------------------------------------------------------- 4


def test_criterion_4_reference_symmetry(reference):
    result, h, runtime = reference
    chi3 = h.series("F3", "chi_max").max()
    slip3 = max(float(r.state.cumulative_slip[result.mesh.fault_mask("F3")].max()) for r in result.records)
    dev = 0.0
    for name in ("chi_max", "t80", "delta_max", "delta_avg"):
        a, b = h.series("F4", name), h.series("F5", name)
        dev = max(dev, float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300))))
    report(
        4,
        chi3 < 1e-3 and slip3 == 0.0 and dev <= 1e-6 and runtime < 600,
        f"chi(F3) max {chi3:.1e}, slip(F3) max {slip3:.1e} m, F4/F5 rel dev {dev:.1e}, runtime {runtime:.0f} s",
    )


# ----------------------------------------------------------------------- 5


def _top_f1_element(mesh, dz):
    sel = np.flatnonzero(mesh.fault_mask("F1") & (mesh.depth > RES_TOP - dz) & (mesh.depth < RES_TOP))
    return int(sel[np.argmin(np.abs(mesh.centroid[sel, 1]))])


def test_criterion_5_reference_mechanisms(reference):
    result, h, _ = reference
    mesh, recs = result.mesh, result.records
    dz = result.config.resolution.dz
    pp = [i for i, r in enumerate(recs) if r.phase in (Phase.INIT, Phase.PP)]
    chi1 = h.series("F1", "chi_max")[pp]
    i_ok = bool(np.all(np.diff(chi1) >= -1e-12))

    first = next(i for i, r in enumerate(recs) if (r.state.mode == Mode.SLIP).any())
    act = np.flatnonzero(recs[first].state.mode == Mode.SLIP)
    d = mesh.depth[act]
    near = (np.abs(d - RES_TOP) < dz) | (np.abs(d - RES_BOTTOM) < dz)
    ii_ok = bool(near.all())
    year = recs[first].label
    iii_ok = 3 <= year <= 7 and recs[first].phase == Phase.PP

    e = _top_f1_element(mesh, dz)
    s10 = result.record(10).state.lambda_t[e, 1]
    s12 = result.record(12).state.lambda_t[e, 1]
    iv_ok = s10 * s12 < 0

    t12 = result.record(12).state.traction()
    t13 = result.record(13).state.traction()
    v_dev = np.abs(t13 - t12).max() / np.abs(t12).max()
    v_ok = v_dev <= 1e-6

    end_pp = result.schedule.phase_end((Phase.PP,))
    dm = {f: h.table[f][end_pp].delta_max * 100 for f in ("F1", "F2")}
    vi_ok = all(0.3 <= v <= 5.0 for v in dm.values())

    report(
        5,
        i_ok and ii_ok and iii_ok and iv_ok and v_ok and vi_ok,
        f"(i) {i_ok} (ii) {ii_ok} depths {sorted(set(np.round(d).astype(int)))} (iii) {iii_ok} year {year:g} "
        f"(iv) {iv_ok} shear {s10 / MPA:+.3f} -> {s12 / MPA:+.3f} MPa (v) {v_ok} dev {v_dev:.1e} "
        f"(vi) {vi_ok} delta_max F1 {dm['F1']:.2f} cm F2 {dm['F2']:.2f} cm",
    )


# ----------------------------------------------------------------------- 6


def test_criterion_6_scenario_orderings(catalog_batch):
    b = catalog_batch
    h2d, h1, h6b, h3c = (b.history(s) for s in ("2d", "1", "6b", "3c"))
    d2d = {f: h2d.series(f, "delta_max").max() for f in h2d.table}
    a_ok = all(d2d["F3"] > v for f, v in d2d.items() if f != "F3") and 0.02 <= d2d["F3"] <= 0.15

    def first_year(h):
        acts = [h.first_activation[f] for f in ("F1", "F2") if h.first_activation[f] is not None]
        return min(acts) if acts else np.inf

    b_ok = first_year(h6b) < first_year(h1)

    def ugs_chi(h):
        idx = [i for i, p in enumerate(h.phases) if p in (Phase.UGS_P.value, Phase.UGS_S.value)]
        return h.series("F2", "chi_max")[idx].max()

    c_ok = ugs_chi(h3c) >= ugs_chi(h1)
    ch4 = [r for r in b.records if r.fluid == "CH4"]
    order2 = [r.scenario for r in rank(ch4, "F2")]
    order3 = [r.scenario for r in rank(ch4, "F3")]
    d_ok = order2.index("3c") < order2.index("1") and order3.index("2d") < order3.index("2c")
    report(
        6,
        a_ok and b_ok and c_ok and d_ok,
        f"2d delta_max(F3) {100 * d2d['F3']:.2f} cm ({a_ok}); activation 6b {first_year(h6b):g} vs 1 {first_year(h1):g} ({b_ok}); "
        f"chi_UGS(F2) 3c {ugs_chi(h3c):.3f} vs 1 {ugs_chi(h1):.3f} ({c_ok}); rank F2 3c@{order2.index('3c') + 1} 1@{order2.index('1') + 1}, "
        f"F3 2d@{order3.index('2d') + 1} 2c@{order3.index('2c') + 1} ({d_ok})",
    )


# ----------------------------------------------------------------------- 7


def test_criterion_7_t80(catalog_batch):
    b = catalog_batch
    parts, ok = [], True
    for fluid in ("CH4", "CO2", "N2", "H2"):
        h = b.history("C2", fluid)
        rec = [i for i, p in enumerate(h.phases) if p in (Phase.CGI.value, Phase.ST.value)]
        t = h.series("F2", "t80")
        end, low = t[rec[-1]], t[rec[:-1]].min()
        ok &= end > low
        parts.append(f"{fluid} end {end:.1f} m > min {low:.1f} m")
    wh = max(b.history(s, f).series("F3", "chi_max").max() for s in ("W", "H") for f in ("CO2", "H2"))
    ok &= wh < 1e-3
    report(7, ok, "; ".join(parts) + f"; W/H chi(F3) max {wh:.1e}")


# ----------------------------------------------------------------------- 8


def test_criterion_8_bandwidth_table():
    wrong = []
    for k, (inp, (case, dp, cap, floor, ib)) in enumerate(CASES, 1):
        a = advise(make(*inp))
        got = (a.case, a.dP_max / MPA, a.P_max_cap / MPA, a.P_min_floor / MPA, None if a.interblock_dP_cap is None else a.interblock_dP_cap / MPA)
        if got[0] != case or not np.allclose(got[1:4], (dp, cap, floor), rtol=0, atol=1e-9) or (ib is None) != (got[4] is None) or (ib is not None and abs(got[4] - ib) > 1e-9):
            wrong.append(k)
    report(8, len(CASES) == 12 and not wrong, f"{len(CASES)} cases, mismatches {wrong}")


# ----------------------------------------------------------------------- 9


def test_criterion_9_determinism(tmp_path, capsys):
    ref_cfg = tmp_path / "reference.ini"
    ref_cfg.write_text("# reference scenario at the default mesh\n")
    for d in ("a", "b"):
        assert main(["simulate", str(ref_cfg), "--out", str(tmp_path / d)]) == 0
    same_metrics = (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    coarse = tmp_path / "coarse.ini"
    coarse.write_text(f"[mesh]\ndx = {COARSE.dx:g}\ndy = {COARSE.dy:g}\ndz = {COARSE.dz:g}\n")
    ids = ["1", "2c", "2d", "3c", "6b"]
    for jobs in (1, 4):
        code = main(["scenarios", "run", *ids, "--config", str(coarse), "--jobs", str(jobs), "--out", str(tmp_path / f"j{jobs}")])
        assert code == 0
    names = sorted(p.name for p in (tmp_path / "j1").glob("ranking*.csv"))
    same_rank = names == sorted(p.name for p in (tmp_path / "j4").glob("ranking*.csv")) and all(
        (tmp_path / "j1" / n).read_bytes() == (tmp_path / "j4" / n).read_bytes() for n in names
    )
    capsys.readouterr()
    report(9, same_metrics and same_rank and len(names) == 6, f"metrics.csv identical {same_metrics}; ranking CSVs identical jobs 1/4 {same_rank} ({len(names)} files)")
