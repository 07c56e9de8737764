"""Acceptance suite: one PASS/FAIL line per criterion, tolerances and runtime budgets pinned."""

import json
import time

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from hullopt.active_subspace import build_subspace, estimate_gradients
from hullopt.asga import AsgaConfig, optimize
from hullopt.cli import main
from hullopt.ffd import (
    FfdLattice,
    apply_parameter_map,
    bernstein_basis,
    build_dtc_lattice,
    ffd_deform,
)
from hullopt.fixtures import hull_fixture, mirror_permutation, unit_cube_surface
from hullopt.fom import SnapshotDb, generate_snapshots, sample_parameters
from hullopt.geometry import NodalField, SurfaceMesh, quality_report
from hullopt.objective import HullCondition, compute_ct
from hullopt.rbf_morph import RbfSystem, wendland_kernel
from hullopt.rom import FIELD_KINDS, GaussianProcess, build_rom, pod

pytestmark = pytest.mark.acceptance

RIDGE_A = np.array([1.0, -2.0, 0.5, 3.0, 0.0, 1.5, -1.0, 0.25, 2.0, -0.75])


def _angle(u, v):
    return float(np.arccos(min(1.0, abs(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v)))))


def test_criterion_1_rbf_exactness(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(50):
        m = int(rng.integers(3, 31))
        ctrl = rng.uniform(-1, 1, (m, 3))
        rhs = rng.normal(size=(m, 3))
        R = rng.uniform(0.5, 4.0)
        w = RbfSystem(ctrl, R).solve(rhs)
        resid = wendland_kernel(cdist(ctrl, ctrl), R) @ w - rhs
        worst = max(worst, np.abs(resid).max() / np.abs(rhs).max())
    units = [abs(wendland_kernel(0.0, 1.0) - 1.0), abs(wendland_kernel(1.0, 1.0)),
             abs(wendland_kernel(0.5, 1.0) - 0.1875)]
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and max(units) <= 1e-12 and elapsed < 5
    assert criterion(1, "RBF exactness", ok,
                     f"max constraint residual {worst:.2e} (<=1e-8), kernel unit error {max(units):.1e} "
                     f"(<=1e-12), {elapsed:.2f} s (<5 s)")


def test_criterion_2_ffd_correctness(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(102)
    lat = FfdLattice([1.0, -2.0, 0.5], np.diag([2.0, 3.0, 1.5]), (4, 5, 3))
    pts = rng.uniform(-3, 4, (2000, 3))
    identity = np.abs(ffd_deform(pts, lat) - pts).max()
    t = rng.uniform(0, 1, 200)
    pou = max(np.abs(bernstein_basis(n, t).sum(axis=-1) - 1).max() for n in range(17))
    moved = lat.with_displacements(rng.normal(size=(4, 5, 3, 3)))
    ref = lat.psi(pts)
    outside = np.any((ref < 0) | (ref > 1), axis=1)
    fixity = np.abs(ffd_deform(pts[outside], moved) - pts[outside]).max()
    axes = np.diag([2.0, 3.0, 4.0])
    disp = np.zeros((2, 2, 2, 3))
    d = np.array([0.3, -0.2, 0.1])
    disp[1, 1, 1] = d
    cube = FfdLattice([0, 0, 0], axes, (2, 2, 2), disp)
    centre = cube.psi_inverse([0.5, 0.5, 0.5])
    corner = np.abs(ffd_deform(centre[None], cube)[0] - centre - (d / 8) @ axes).max()
    hull = hull_fixture()
    dtc, pmap = build_dtc_lattice(hull)
    perm = mirror_permutation()
    sym = 0.0
    for mu in rng.uniform(-0.2, 0.2, (10, 10)):
        out = ffd_deform(hull.vertices, apply_parameter_map(pmap, mu, dtc))
        sym = max(sym, np.abs(out[perm, 1] + out[:, 1]).max(), np.abs(out[perm][:, [0, 2]] - out[:, [0, 2]]).max())
    elapsed = time.perf_counter() - t0
    ok = identity <= 1e-14 and pou <= 1e-12 and fixity == 0 and corner <= 1e-12 and sym <= 1e-10 and elapsed < 5
    assert criterion(2, "FFD correctness", ok,
                     f"identity {identity:.1e}, partition {pou:.1e}, outside {fixity:.1e} over {outside.sum()} "
                     f"points, corner {corner:.1e}, symmetry {sym:.1e}, {elapsed:.2f} s (<5 s)")


def test_criterion_3_morph_safety(design, criterion):
    t0 = time.perf_counter()
    base = quality_report(design.volume)
    mus = np.random.default_rng(103).uniform(-0.2, 0.2, (20, 10))
    hashes, min_area, min_vol, drift = set(), np.inf, np.inf, []
    for mu in mus:
        vol, rep = design.morph(mu)
        hashes.add(vol.topology_hash)
        min_area, min_vol = min(min_area, rep.min_face_area), min(min_vol, rep.min_cell_volume)
        drift.append(rep.avg_non_orthogonality - base.avg_non_orthogonality)
    elapsed = time.perf_counter() - t0
    ok = (hashes == {design.volume.topology_hash} and min_area > 0 and min_vol > 0 and max(drift) <= 5.0
          and elapsed < 180)
    assert criterion(3, "morph safety", ok,
                     f"topology kept {hashes == {design.volume.topology_hash}}, min face area {min_area:.2e}, "
                     f"min cell volume {min_vol:.2e}, max mean non-orthogonality increase {max(drift):.3f} deg "
                     f"(<=5, baseline {base.avg_non_orthogonality:.2f}), {elapsed:.1f} s (<180 s)")


def test_criterion_4_pod(criterion):
    t0 = time.perf_counter()
    X = np.random.default_rng(104).normal(size=(500, 50))
    basis, C = pod(X, 50)
    recon = np.linalg.norm(basis.lift(C) - X) / np.linalg.norm(X)
    errs = [np.linalg.norm(b.lift(c) - X) for b, c in (pod(X, n) for n in range(1, 51))]
    monotone = bool(np.all(np.diff(errs) <= 1e-12 * errs[0]))
    gram = np.sqrt(np.sort(np.linalg.eigvalsh(X.T @ X))[::-1])
    sv = np.abs(basis.singular_values / gram - 1).max()
    elapsed = time.perf_counter() - t0
    ok = recon <= 1e-10 and monotone and sv <= 1e-8 and elapsed < 10
    assert criterion(4, "POD", ok, f"full-rank error {recon:.1e} (<=1e-10), monotone {monotone}, "
                                   f"singular values vs Gram {sv:.1e} (<=1e-8), {elapsed:.2f} s (<10 s)")


def test_criterion_5_gpr(criterion):
    t0 = time.perf_counter()
    gp = GaussianProcess(sigma=1.0, length=0.5, nugget=0.0, normalize=False)
    gp.fit([[0.0], [1.0]], [1.0, -1.0])
    rho, k1, k2 = np.exp(-1.0), np.exp(-0.0625), np.exp(-0.5625)
    mean = (k1 - k2) / (1 - rho)
    var = 1 - (k1**2 - 2 * rho * k1 * k2 + k2**2) / (1 - rho**2)
    m, sd = gp.predict([[0.25]], return_std=True)
    hand = max(abs(m[0] - mean), abs(sd[0] ** 2 - var))
    X = np.random.default_rng(105).uniform(-0.2, 0.2, (40, 10))
    y = np.exp(X.sum(axis=1)) + np.cos(5 * X[:, 0])
    interp = np.max(np.abs(GaussianProcess(nugget=1e-10).fit(X, y).predict(X) - y) / np.abs(y))
    elapsed = time.perf_counter() - t0
    ok = hand <= 1e-10 and interp <= 1e-5 and elapsed < 10
    assert criterion(5, "GPR", ok, f"2x2 posterior error {hand:.1e} (<=1e-10), training interpolation "
                                   f"{interp:.1e} (<=1e-5), {elapsed:.2f} s (<10 s)")


def test_criterion_6_rom_accuracy(surface_design, tmp_path, criterion):
    t0 = time.perf_counter()
    d = surface_design
    db = SnapshotDb(tmp_path / "db", d.hull.topology_hash, d.hull.n_vertices, d.spec.hash)
    generate_snapshots(sample_parameters(200, seed=0), d, db, workers=4)
    roms = {k: build_rom(db.snapshot_matrix(k), 20, db.mesh_hash) for k in FIELD_KINDS}
    held = sample_parameters(20, seed=606)
    p, tau = d.fom_fields(held)
    rp = roms["pressure"].predict(held).reshape(p.shape)
    rt = roms["shear"].predict(held).reshape(tau.shape)
    ep = np.linalg.norm(rp - p, axis=1) / np.linalg.norm(p, axis=1)
    et = np.linalg.norm((rt - tau).reshape(20, -1), axis=1) / np.linalg.norm(tau.reshape(20, -1), axis=1)
    ct_fom = d.ct_from_fields(held, p, tau[..., 0])["ct"]
    ct_rom = d.ct_from_fields(held, rp, rt[..., 0])["ct"]
    ect = np.abs(ct_rom - ct_fom) / np.abs(ct_fom)
    elapsed = time.perf_counter() - t0
    field = max(np.median(ep), np.median(et))
    ok = field < 0.01 and np.median(ect) < 0.01 and elapsed < 300
    assert criterion(6, "ROM accuracy", ok,
                     f"median field error pressure {np.median(ep):.2e} shear {np.median(et):.2e} (<1e-2), "
                     f"median C_t error {np.median(ect):.2e} (<1e-2), {elapsed:.1f} s (<300 s)")


def test_criterion_7_active_subspace_recovery(criterion):
    t0 = time.perf_counter()
    a = RIDGE_A / np.linalg.norm(RIDGE_A)
    X = np.random.default_rng(107).uniform(-1, 1, (500, 10))
    exact = build_subspace(2 * (X @ a)[:, None] * a, 1)
    est = build_subspace(estimate_gradients(X, (X @ a) ** 2).gradients, 1)
    e_angle, l_angle = _angle(exact.W1[:, 0], a), _angle(est.W1[:, 0], a)
    elapsed = time.perf_counter() - t0
    ok = e_angle <= 1e-2 and l_angle <= 0.15 and elapsed < 30
    assert criterion(7, "active subspace recovery", ok,
                     f"exact-gradient angle {e_angle:.1e} rad (<=1e-2), local-linear angle {l_angle:.3f} rad "
                     f"(<=0.15), {elapsed:.2f} s (<30 s)")


# The ridge direction is the synthetic oracle's seeded w (seed 2024), scaled so the
# uniform initial population hits f < 1e-3 with probability of about 0.13.
RIDGE_SCALE = np.sqrt(1000.0)


def _ridge_direction():
    w = np.random.default_rng(2024).standard_normal(10)
    return RIDGE_SCALE * w / np.linalg.norm(w)


def _evaluations_to_target(method, a, seed, **kw):
    cfg = AsgaConfig(seed=seed, **kw)
    res = optimize(lambda P: (P @ a - 0.7) ** 2, (-1.0, 1.0), cfg, method=method, vectorized=True, n_params=10,
                   stop_below=1e-3)
    e = res.evaluations_to_reach(1e-3)
    return np.inf if e is None else e


def test_criterion_8_asga_vs_ga(criterion):
    t0 = time.perf_counter()
    a = _ridge_direction()
    ga = [_evaluations_to_target("ga", a, s) for s in range(10)]
    asga = [_evaluations_to_target("asga", a, s) for s in range(10)]
    elapsed = time.perf_counter() - t0
    ratio = np.median(asga) / np.median(ga)
    # informational: the alternative reduced-coordinate bounds
    pop = [_evaluations_to_target("asga", a, s, reduced_bounds="population") for s in range(10)]
    print(f"  population-range bounds: median {np.median(pop):.0f}, ratio {np.median(pop) / np.median(ga):.3f}")
    ok = ratio <= 0.5 and elapsed < 120
    assert criterion(8, "ASGA vs GA", ok,
                     f"median evaluations ASGA {np.median(asga):.0f} vs GA {np.median(ga):.0f}, ratio {ratio:.3f} "
                     f"(<=0.5), {elapsed:.1f} s (<120 s)")


def test_criterion_9_end_to_end(surface_design, tmp_path, criterion):
    work = tmp_path / "run"
    base = ["--workdir", str(work), "--seed", "0"]
    t0 = time.perf_counter()
    for step in (["sample"], ["snapshots"], ["rom-build"]):
        assert main(base + step) == 0, step
    for run in (1, 2, 3):
        assert main(base + ["optimize"]) == 0
        assert main(base + ["validate", "--run", str(run), "--enrich"]) == 0
    elapsed = time.perf_counter() - t0
    runs = json.loads((work / "validation.json").read_text())["runs"]
    errors = [r["rom_error"]["ct_relative"] for r in runs]
    found = runs[-1]["rom_error"]["ct_fom"]

    d = surface_design
    brute_mu = sample_parameters(100_000, (d.lower, d.upper), seed=12345)
    brute_ct = d.fom_ct(brute_mu)
    brute = float(brute_ct.min())
    # local polish of the brute-force best on the oracle itself
    start = d.to_genes(brute_mu[np.argmin(brute_ct)])
    pol = minimize(lambda g: d.fom_ct(d.from_genes(g)[None])[0], start, method="L-BFGS-B",
                   bounds=[(-1, 1)] * d.n_params, options={"ftol": 1e-15, "gtol": 1e-12})
    polished = min(float(pol.fun), brute)
    # the sampled optimum is an upper estimate of the true one; landing below it is not a miss
    within_brute = found <= brute * 1.01
    monotone = bool(np.all(np.diff(errors) <= 0))
    ok = within_brute and monotone and elapsed < 600
    assert criterion(9, "end-to-end", ok,
                     f"validated C_t {found:.6g} vs brute-force 1e5 optimum {brute:.6g} "
                     f"({(found - brute) / brute:+.2%}, <=+1%), ROM C_t error by run "
                     f"{', '.join(f'{e:.2e}' for e in errors)} (non-increasing {monotone}), pipeline "
                     f"{elapsed:.0f} s (<600 s); polished oracle optimum {polished:.6g}, "
                     f"gap {(found - polished) / polished:+.2%}")

def test_criterion_10_objective_sanity(criterion):
    hull = hull_fixture()
    h = hull.topology_hash
    zero = NodalField(h, np.zeros((hull.n_vertices, 3)))
    div = abs(compute_ct(hull, NodalField(h, np.full(hull.n_vertices, 1234.5)), zero, HullCondition()).ct)

    cube = unit_cube_surface()
    box = SurfaceMesh(cube.vertices * [2.0, 1.0, 1.5] - [0, 0, 1.0], cube.triangles)
    hb = box.topology_hash
    cond = HullCondition(waterline_z=-0.25)
    c = 0.004
    tau = NodalField(hb, np.broadcast_to([c, 0.0, 0.0], (box.n_vertices, 3)))
    r = compute_ct(box, NodalField(hb, np.zeros(box.n_vertices)), tau, cond)
    draft = 0.75
    expect = cond.rho * c * (2.0 + 2 * draft * 3.0) / (cond.dynamic_pressure * (2.0 * draft) ** (2 / 3))
    shear = abs(r.ct - expect) / expect

    rng = np.random.default_rng(110)
    p = NodalField(h, rng.normal(size=hull.n_vertices))
    t = NodalField(h, rng.normal(size=(hull.n_vertices, 3)))
    ref = compute_ct(hull, p, t, HullCondition(speed=1.0)).ct
    scaling = max(abs(compute_ct(hull, p, t, HullCondition(speed=v)).ct * v**2 / ref - 1) for v in (0.5, 1.668, 7.0))
    ok = div <= 1e-10 and shear <= 1e-10 and scaling <= 1e-12
    assert criterion(10, "objective sanity", ok,
                     f"constant-pressure C_t {div:.1e} (<=1e-10), uniform-shear closed form {shear:.1e} "
                     f"(<=1e-10), V^-2 scaling deviation {scaling:.1e} (exact to 1e-12)")
