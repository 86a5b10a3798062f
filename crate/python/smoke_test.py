"""Smoke test for the blochhom extension module.

Build first:
    cargo build --release -p bloch-homog-py --features extension-module
then run:
    python3 python/smoke_test.py [path/to/libblochhom.so]
"""

import importlib.util
import json
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]


def load(lib):
    tmp = pathlib.Path(tempfile.mkdtemp())
    target = tmp / "blochhom.so"
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("blochhom", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    lib = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "target" / "release" / "libblochhom.so"
    bh = load(lib)

    assert set(bh.Model.zoo_names()) >= {"acoustics_1d", "hermitian_2d", "schrodinger", "pauli"}

    acoustics = bh.Model("acoustics_1d")
    h = bh.Homogenizer(acoustics)
    g0 = h.g0()[0][0][0]
    assert abs(g0 - math.sqrt(3.0)) < 1e-9, g0
    assert json.loads(h.effective_json())["basis_size"] > 16

    fits = json.loads(h.fit_bands_json([1.0]))
    assert abs(fits[0]["gamma"] - math.sqrt(3.0)) < 1e-6, fits[0]["gamma"]

    lows = h.bands([0.3], 2)
    assert len(lows) == 2 and lows[0] <= lows[1]

    d = h.discrepancy([0.5], 0.1, 1.0, 2.0)
    assert 0.0 <= d <= 2.0

    table = json.loads(h.cauchy_json([1 / 16, 1 / 32, 1 / 64], 3.0, "general", fiber_cutoff=40.0))
    assert abs(table["fitted_slope"] - 1.0) < 0.05, table["fitted_slope"]

    herm = bh.Homogenizer(bh.Model("hermitian_2d", {"c": 0.1}))
    report = json.loads(herm.classify_json(64))
    assert report["label"] == "general only", report["label"]
    assert abs(report["n0_max"] - 1.5e-3) < 1e-4, report["n0_max"]

    inline = bh.Model.from_config(
        'schema_version = 1\n[model]\nname = "custom"\n[model.inline]\n'
        'lattice = [[1.0]]\nb = [{ re = [[1.0]] }]\ng = "2 + cos(2*pi*x1)"\ndefault_cutoff = 100.5\n'
    )
    assert abs(bh.Homogenizer(inline).g0()[0][0][0] - math.sqrt(3.0)) < 1e-9

    try:
        bh.Model("no_such_model")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown model accepted")

    try:
        bh.normalize_config("schema_version = 1\ncutoff = -1.0\n")
    except ValueError:
        pass
    else:
        raise AssertionError("negative cutoff accepted")

    print("blochhom smoke test passed")


if __name__ == "__main__":
    main()
