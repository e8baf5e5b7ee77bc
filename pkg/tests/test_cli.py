import subprocess
import sys

import pytest

from cpialm import bench, cli


class TestExitCodes:
    def test_success(self, tmp_path, capsys):
        out = tmp_path / "r.csv"
        rc = cli.main(["--n", "5", "--m", "1", "--trials", "1", "--max-outer", "2",
                       "--solver", "apg", "--out", str(out)])
        assert rc == cli.EXIT_OK
        assert out.exists()
        assert "wrote table" in capsys.readouterr().out

    def test_markdown(self, tmp_path):
        out = tmp_path / "r.md"
        rc = cli.main(["--n", "5", "--trials", "1", "--max-outer", "1", "--solver", "apg",
                       "--format", "markdown", "--out", str(out)])
        assert rc == cli.EXIT_OK
        assert out.read_text().startswith("# Benchmark n=5")

    def test_solver_failure(self, tmp_path, monkeypatch, capsys):
        def boom(problem, cfg):
            raise RuntimeError("injected")

        monkeypatch.setattr(bench, "ialm_solve_apg", boom)
        rc = cli.main(["--n", "5", "--trials", "1", "--solver", "apg",
                       "--out", str(tmp_path / "r.csv")])
        assert rc == cli.EXIT_FAILURE
        assert "injected" in capsys.readouterr().err

    @pytest.mark.parametrize("argv", [["--n", "1"], ["--trials", "0"], ["--eps", "-1"],
                                      ["--sigma", "1"], ["--solver", "ipm"], ["--n", "x"],
                                      ["--m", "0"], ["--unknown"]])
    def test_config_error(self, tmp_path, argv, capsys):
        assert cli.main(argv + ["--out", str(tmp_path / "r.csv")]) == cli.EXIT_CONFIG

    def test_unwritable_output(self, tmp_path):
        rc = cli.main(["--n", "5", "--out", str(tmp_path / "no" / "r.csv")])
        assert rc == cli.EXIT_CONFIG

    def test_bad_thread_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(bench.THREADS_ENV, "many")
        rc = cli.main(["--n", "5", "--trials", "1", "--out", str(tmp_path / "r.csv")])
        assert rc == cli.EXIT_CONFIG

    def test_help(self, capsys):
        assert cli.main(["--help"]) == cli.EXIT_OK
        assert "--verify" in capsys.readouterr().out


class TestModuleEntry:
    def test_python_dash_m(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "cpialm", "--n", "4", "--trials", "1",
                               "--max-outer", "1", "--solver", "apg",
                               "--out", str(tmp_path / "r.csv")],
                              capture_output=True, text=True, timeout=120)
        assert proc.returncode == 0, proc.stderr
