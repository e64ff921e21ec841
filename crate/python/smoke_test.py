"""Smoke test for the fsep_py extension module.

Builds the extension with cargo, imports it from a scratch directory and runs
a small split-sphere analysis end to end.

    python3 python/smoke_test.py [--release]
"""

import argparse
import importlib
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build(release: bool) -> Path:
    cmd = ["cargo", "build", "-p", "fsep-python"]
    if release:
        cmd.append("--release")
    subprocess.run(cmd, cwd=ROOT, check=True)
    target = Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target"))
    profile = "release" if release else "debug"
    for name in ("libfsep_py.so", "libfsep_py.dylib", "fsep_py.dll"):
        lib = target / profile / name
        if lib.exists():
            return lib
    sys.exit(f"extension library not found under {target / profile}")


def load(lib: Path, scratch: Path):
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    shutil.copy(lib, scratch / f"fsep_py{suffix}")
    sys.path.insert(0, str(scratch))
    return importlib.import_module("fsep_py")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--release", action="store_true")
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        fsep = load(build(args.release), tmp)

        offset, volume = fsep.plic_offset((1.0, 1.0, 1.0), 0.5)
        assert abs(volume - 0.5) < 1e-9, volume
        assert abs(offset - 3**0.5 / 2) < 1e-9, offset

        manifest = fsep.generate("split-sphere", 16, 5, tmp / "data")
        config = tmp / "run.cfg"
        config.write_text(
            f"dataset = {manifest}\noutput = out\nt0 = 0\ntf = 4\nrefinement = 1\n"
        )
        report = fsep.run(config)
        assert report["initial_features"] == 1, report
        assert report["final_features"] == 2, report
        assert report["boundary_meshes"] == 2, report
        assert fsep.load_report(tmp / "out") == report

        meshes = sorted((tmp / "out" / "meshes").glob("*boundary*.obj"))
        assert len(meshes) == 2, meshes
        vertices, triangles = fsep.load_obj(meshes[0])
        assert vertices and triangles
        assert max(max(t) for t in triangles) < len(vertices)

        table = fsep.contribution_table("split-sphere", 16, 5, refinement=1)
        targets = {(i, j) for i, j, _, _ in table}
        assert {(0, 0), (0, 1)} <= targets, table
        total = sum(c for _, _, c, _ in table)
        assert total == report["particles"], (total, report)

        try:
            fsep.generate("no-such-scenario", 8, 3, tmp / "x")
        except ValueError:
            pass
        else:
            raise AssertionError("unknown scenario accepted")
        try:
            fsep.load_report(tmp / "missing")
        except OSError:
            pass
        else:
            raise AssertionError("missing report accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
