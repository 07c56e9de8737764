"""Deform the bundled hull with the prow FFD lattice and morph its volume mesh.

Usage: python3 demos/morph_hull.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from hullopt.geometry import quality_report, write_stl, write_vmesh
from hullopt.pipeline import default_design


def main(out=Path("demo-morph")):
    out.mkdir(parents=True, exist_ok=True)
    design = default_design(with_volume=True)
    base = quality_report(design.volume)
    print(f"hull: {design.hull.n_vertices} vertices, volume mesh: {design.volume.n_cells} cells")
    print(f"reference mean non-orthogonality {base.avg_non_orthogonality:.2f} deg")
    rng = np.random.default_rng(0)
    for k, mu in enumerate(rng.uniform(-0.2, 0.2, (3, design.n_params))):
        vol, rep = design.morph(mu)
        ct = design.fom_ct(mu[None])[0]
        print(f"sample {k}: C_t {ct:.5f}, min cell volume {rep.min_cell_volume:.2e}, "
              f"mean non-orthogonality {rep.avg_non_orthogonality:.2f} deg, inverted cells {rep.negative_cells}")
        write_stl(design.deform(mu), out / f"hull_{k}.stl", name=f"hull_{k}")
        write_vmesh(vol, out / f"volume_{k}.vmesh")
    print(f"meshes written to {out}/")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo-morph"))
