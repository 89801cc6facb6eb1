"""Smoke test for the pynodecorr extension and the nodecorr CLI outputs.

Build the extension first, e.g. ``maturin develop -m crates/python/Cargo.toml``
or ``cargo build --release -p nodecorr-python --features extension-module``
followed by copying ``target/release/libpynodecorr.so`` to ``pynodecorr.so``
somewhere on ``PYTHONPATH`` (``--lib-dir`` does that for you).
"""

import argparse
import json
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema
from referencing import Registry, Resource

ROOT = Path(__file__).resolve().parent.parent
SCHEMA_DIR = ROOT / "crates" / "cli" / "schema"
QUICK = """
[training.adam]
iterations = 30

[ensemble]
members = 4
"""


def import_module(lib_dir):
    if lib_dir is not None:
        built = Path(lib_dir) / "libpynodecorr.so"
        staging = Path(tempfile.mkdtemp())
        if built.exists():
            shutil.copy(built, staging / "pynodecorr.so")
            sys.path.insert(0, str(staging))
        else:
            sys.path.insert(0, str(lib_dir))
    import pynodecorr

    return pynodecorr


def check_bindings(nc):
    scen = nc.Scenario(QUICK)
    assert scen.tf == 43.0
    assert len(scen.initial_state()) == 7
    assert nc.Scenario(scen.to_toml()).to_toml() == scen.to_toml()
    try:
        nc.Scenario("[mission]\ntff = 1.0\n")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")

    theta, report = nc.train(scen, 0)
    assert len(theta) == scen.param_count
    assert report["format"] == "nodecorr-train-report"
    assert report["best_cost"] <= report["history"][0]
    again, _ = nc.train(scen, 0)
    assert again == theta, "training is not deterministic"

    study = nc.Study(scen, theta)
    runs = {m: study.run(m) for m in ("none", "theta", "u")}
    for name, run in runs.items():
        metrics = run["metrics"]
        assert all(math.isfinite(metrics[k]) for k in ("e_rf", "e_vf", "m_f")), name
        assert len(run["times"]) == len(run["states"]) == len(run["controls"])
    assert runs["none"]["diagnostics"] is None
    assert runs["theta"]["diagnostics"]["rank"] >= 1
    print("bindings: e_rf none {:.2f}, theta {:.2f}, u {:.2f}".format(
        *(runs[m]["metrics"]["e_rf"] for m in ("none", "theta", "u"))))

    csv = study.run_csv("none")
    assert csv.splitlines()[0] == nc.CSV_SCHEMA

    stats, members = study.ensemble(["none", "theta"])
    assert [s["method"] for s in stats] == ["none", "theta"]
    assert [m["index"] for m in members] == [0, 1, 2, 3] * 2

    x, rank = nc.pinv_solve([[1.0, 1.0]], [2.0])
    assert rank == 1 and all(abs(v - 1.0) < 1e-12 for v in x)

    checks = nc.verify()
    assert all(c["passed"] for c in checks), [c["name"] for c in checks if not c["passed"]]
    faulty = nc.verify("psi-asymmetry")
    assert not all(c["passed"] for c in faulty)
    print("bindings: {} checks pass, fault detected".format(len(checks)))


def registry():
    resources = []
    for path in SCHEMA_DIR.glob("*.schema.json"):
        schema = json.loads(path.read_text())
        resources.append((schema["$id"], Resource.from_contents(schema)))
    return Registry().with_resources(resources)


def validate(path, schema_name, reg):
    schema = json.loads((SCHEMA_DIR / schema_name).read_text())
    jsonschema.Draft202012Validator(schema, registry=reg).validate(json.loads(Path(path).read_text()))


def check_cli(cli):
    reg = registry()
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        scen = tmp / "quick.toml"
        scen.write_text(QUICK)
        out = tmp / "out"
        common = ["--scenario", str(scen), "--out", str(out), "--seed", "0,1"]
        for cmd in (["train"], ["correct"], ["ensemble", "--method", "theta"]):
            subprocess.run([cli, *cmd, *common], check=True, capture_output=True)
        subprocess.run([cli, "verify", "--out", str(out)], check=True, capture_output=True)
        validate(out / "correct-single-summary.json", "correct-summary.schema.json", reg)
        validate(out / "ensemble-single-summary.json", "ensemble-summary.schema.json", reg)
        validate(out / "verify.json", "verify.schema.json", reg)
        bad = subprocess.run([cli, "train", "--seed", "3,3", "--out", str(out)], capture_output=True)
        assert bad.returncode == 2
    print("cli: summaries match the shipped schemas")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--lib-dir", help="directory holding libpynodecorr.so or pynodecorr.so")
    parser.add_argument("--cli", help="path to the nodecorr binary; skipped when absent")
    args = parser.parse_args()

    check_bindings(import_module(args.lib_dir))
    cli = args.cli or shutil.which("nodecorr")
    if cli:
        check_cli(cli)
    else:
        print("cli: no binary given, schema checks skipped")
    print("smoke test passed")


if __name__ == "__main__":
    main()
