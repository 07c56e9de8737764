"""Snapshots, POD-GPR models and three validated ASGA runs with enrichment.

Usage: python3 demos/rom_optimization.py
"""

import tempfile

import numpy as np

from hullopt.asga import AsgaConfig, optimize
from hullopt.fom import SnapshotDb, generate_snapshots, sample_parameters
from hullopt.pipeline import default_design
from hullopt.rom import FIELD_KINDS, build_rom, enrich


def main():
    d = default_design(with_volume=False)
    db = SnapshotDb(tempfile.mkdtemp(), d.hull.topology_hash, d.hull.n_vertices, d.spec.hash)
    generate_snapshots(sample_parameters(200, (d.lower, d.upper), seed=0), d, db, workers=4)
    roms = {k: build_rom(db.snapshot_matrix(k), 20, db.mesh_hash) for k in FIELD_KINDS}
    baseline = d.fom_ct(np.zeros((1, d.n_params)))[0]
    print(f"{len(db)} snapshots, baseline C_t {baseline:.5f}")
    population = None
    for run in (1, 2, 3):
        res = optimize(lambda P: d.rom_ct(roms, P), (d.lower, d.upper), AsgaConfig(seed=0), vectorized=True,
                       initial=population)
        population = res.population
        mu = res.best_parameters
        p, tau = d.fom_fields(mu[None])
        ct = d.ct_from_fields(mu[None], p, tau[..., 0])["ct"][0]
        print(f"run {run}: ROM C_t {res.best.fitness:.6f}, oracle C_t {ct:.6f}, "
              f"ROM error {abs(res.best.fitness - ct) / ct:.2e}, reduction {(baseline - ct) / baseline:.1%}")
        if db.has(mu):
            print("optimum already validated; the loop has converged")
            continue
        roms = enrich(db, mu, (p[0], tau[0]), 20)


if __name__ == "__main__":
    main()
