"""Smoke test for the pyatlasreg extension.

Build first, e.g. `maturin develop -m crates/python/Cargo.toml`, then run
`python python/smoke_test.py`.
"""

import math
import os
import tempfile

import pyatlasreg as ar

QUICK = "affine_iterations = 40\ndense_iterations = 40\n"


def check_volume_roundtrip(tmp):
    v = ar.Volume([3, 2, 2], [float(i) for i in range(12)], spacing=[1.0, 2.0, 3.0])
    assert v.dims == [3, 2, 2]
    assert v.get(1, 1, 0) == 4.0
    path = os.path.join(tmp, "v.vvol")
    ar.write_volume(path, v)
    back = ar.read_volume(path)
    assert back.data() == v.data()
    assert back.spacing == [1.0, 2.0, 3.0]
    try:
        ar.Volume([2, 2, 2], [0.0] * 7)
    except ValueError:
        pass
    else:
        raise AssertionError("bad length accepted")
    try:
        ar.read_volume(os.path.join(tmp, "missing.vvol"))
    except IOError:
        pass
    else:
        raise AssertionError("missing file accepted")


def check_registration(tmp):
    p = ar.phantom("translation", 20)
    assert p.atlas.dims == [20, 20, 20]
    assert "organ" in p.atlas_labels.names
    assert ar.mutual_information(p.patient, p.patient) > 0.5

    before = ar.dice(p.atlas_labels.channel("organ"), p.patient_labels.channel("organ"))
    r = ar.register(p.atlas, p.patient, p.atlas_labels, p.patient_labels, config=QUICK, seed=3)
    masks = r.propagate(p.atlas_labels)
    after = ar.dice(masks.channel("organ"), p.patient_labels.channel("organ"))
    print(f"organ dice {before:.3f} -> {after:.3f}, folding {r.folding_fraction:.4f}")
    assert after > before
    assert r.folding_fraction < 0.005
    assert math.isfinite(r.final_objective)
    assert r.final_objective < r.initial_objective
    assert [s for s, _ in r.traces()][-1] == "dense_2"
    assert r.metrics_csv(p.atlas_labels, p.patient_labels).startswith("label,dice,voxels_gt,voxels_pred")

    again = ar.register(p.atlas, p.patient, p.atlas_labels, p.patient_labels, config=QUICK, seed=3)
    assert again.composed.component(0) == r.composed.component(0)

    path = os.path.join(tmp, "u.vvol")
    ar.write_displacement(path, r.composed)
    u = ar.read_displacement(path)
    assert abs(u.mean_norm() - r.composed.mean_norm()) < 1e-4


def main():
    with tempfile.TemporaryDirectory() as tmp:
        check_volume_roundtrip(tmp)
        check_registration(tmp)
    print("smoke test passed")


if __name__ == "__main__":
    main()
