"""Smoke test for the tomosar_py extension module.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/tomosar_py-*.whl
"""

import math
import sys
import tempfile
from pathlib import Path

import tomosar_py as ts

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    geo = ts.Geometry(
        0.031,
        600_000.0,
        [-420.0, 130.0, -60.0, 310.0, 540.0],
        [100.0, 150.0, 195.0, 240.0, 345.0],
    )
    assert len(geo) == 5
    rayleigh = geo.rayleigh_resolution()
    assert 30.0 < rayleigh < 45.0, rayleigh
    grid = geo.grid(-30.0, 120.0)
    assert abs(grid[1] - grid[0] - rayleigh / 16) < 1e-9

    # Noiseless single scatterer: exact elevation and power.
    values, level = geo.simulate_pixel([(22.0, 2.0)], looks=1)
    assert level > 0.0
    unit = [complex(math.cos(-k * 22.0), math.sin(-k * 22.0)) * 2.0 for k in geo.baseline_wavenumbers()]
    scatterers, method = ts.invert_pixel(geo, grid, unit, 0.0)
    assert len(scatterers) == 1 and method == "nls", (scatterers, method)
    assert abs(scatterers[0][0] - 22.0) < 1e-3 and abs(scatterers[0][1] - 2.0) < 1e-6

    # Layover pair from 50 looks at high SNR.
    values, level = geo.simulate_pixel([(5.0, 1.0), (62.0, 1.0)], looks=50, snr_db=10.0, seed=3)
    scatterers, method = ts.invert_pixel(geo, grid, values, level)
    assert len(scatterers) == 2, scatterers
    print("layover pair:", [(round(e, 2), round(p, 3)) for e, p in scatterers], method)

    profile = ts.cs_profile(geo, grid, unit, 0.0)
    assert max(range(len(profile)), key=profile.__getitem__) == min(
        range(len(grid)), key=lambda i: abs(grid[i] - 22.0)
    )
    assert len(ts.svd_profile(geo, grid, unit, 1e-3)) == len(grid)
    assert len(ts.beamforming_profile(geo, grid, unit)) == len(grid)

    estimate, _, converged = ts.robust_fuse([10, 10, 10, 10, 100], "huber", 1.0)
    assert converged and abs(estimate - 10.25) < 1e-6, estimate

    report = ts.compare({1: 10.5, 2: 11.5, 3: 30.0}, {1: 10.0, 2: 10.0, 3: 10.0})
    assert report["retained"] == 2 and abs(report["std"] - math.sqrt(0.5)) < 1e-12

    with tempfile.TemporaryDirectory() as out:
        times = ts.run(str(ROOT / "configs" / "small.toml"), "simulate,filter", out=out, workers=1)
        assert [name for name, _ in times] == ["simulate", "filter"]
        assert (Path(out) / "filtered.bin").exists()

    print("python smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
