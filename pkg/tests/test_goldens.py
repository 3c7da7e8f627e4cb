import json

import pytest

from golden_corpus import CORPUS, DIALECTS, GOLDEN_DIR, golden_path, launcher_golden, render

DIRECTIVE_512 = {"slurm": "#SBATCH --ntasks=512", "pbs": "#PBS -l select=512:ncpus=1:mpiprocs=1",
                 "lsf": "#BSUB -n 512", "mock": "#MOCK -n 512"}


def read_golden(path):
    return path.read_bytes().replace(b"\r\n", b"\n").decode()


@pytest.mark.parametrize("case", sorted(CORPUS))
@pytest.mark.parametrize("dialect", DIALECTS)
def test_script_matches_golden(dialect, case, tmp_path):
    assert render(dialect, case, tmp_path) == read_golden(golden_path(dialect, case))


@pytest.mark.parametrize("dialect", DIALECTS)
def test_rendering_is_stable_across_work_directories(dialect, tmp_path):
    a = render(dialect, "cps-eig", tmp_path / "a")
    b = render(dialect, "cps-eig", tmp_path / "b")
    assert a == b


@pytest.mark.parametrize("dialect", DIALECTS)
def test_512_process_directive(dialect):
    lines = read_golden(golden_path(dialect, "cps-eig")).splitlines()
    assert DIRECTIVE_512[dialect] in lines
    assert lines[-1].endswith("srun --ntasks=512 /opt/cps/bin/NOARCH.x -qmp-geom 8 4 4 4 do_arg.vml "
                              "evo_arg.vml eig_arg.vml 0.00 Overlap")


def test_launcher_goldens():
    expected = json.loads((GOLDEN_DIR / "launchers.json").read_text())
    assert [launcher_golden(e["launcher"]) for e in expected] == expected
    assert {e["launcher"] for e in expected if e["source"] == "documentation-derived"} == {"srun", "jsrun", "aprun"}


def test_no_stray_goldens():
    on_disk = {p.relative_to(GOLDEN_DIR).as_posix() for p in GOLDEN_DIR.rglob("*.sh")}
    assert on_disk == {f"{d}/{c}.sh" for d in DIALECTS for c in CORPUS}
