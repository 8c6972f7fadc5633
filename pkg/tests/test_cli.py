import json

from abimhd.cli import main
from abimhd.snapshots import read_snapshot


def write_cfg(path, text):
    path.write_text(text)
    return str(path)


class TestDmhdRun:
    def test_trivial_run_constant_energy(self, tmp_path):
        cfg = write_cfg(tmp_path / "run.cfg",
                        "[scenario]\nname = trivial\n"
                        "[grid]\nn = 8\n"
                        "[run]\nt_final = 0.002\n")
        out = tmp_path / "out"
        assert main(["dmhd-run", "--config", cfg, "--out", str(out),
                     "--quiet"]) == 0
        lines = (out / "dmhd_diagnostics.csv").read_text().splitlines()
        assert lines[0].startswith("t,energy")
        energies = [float(l.split(",")[1]) for l in lines[1:]]
        assert all(e == 0.5 for e in energies)
        grid, comps = read_snapshot(out / "dmhd_final.abim")
        assert grid.n == 8 and len(comps) == 4
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["subcommand"] == "dmhd-run"
        assert manifest["config"]["scenario.name"] == "trivial"

    def test_deterministic_outputs(self, tmp_path):
        cfg = write_cfg(tmp_path / "run.cfg",
                        "[scenario]\nname = random_smooth\namp_h = 0.1\n"
                        "[grid]\nn = 8\n[run]\nt_final = 0.001\n")
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            assert main(["dmhd-run", "--config", cfg, "--out", str(out),
                         "--seed", "42", "--quiet"]) == 0
            outs.append((out / "dmhd_diagnostics.csv").read_bytes()
                        + (out / "dmhd_final.abim").read_bytes())
        assert outs[0] == outs[1]


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path):
        cfg = write_cfg(tmp_path / "bad.cfg", "[grid]\nn = 7\n")
        assert main(["dmhd-run", "--config", cfg,
                     "--out", str(tmp_path / "o")]) == 2

    def test_malformed_config_is_2(self, tmp_path):
        cfg = write_cfg(tmp_path / "bad.cfg", "just some words\n")
        assert main(["dmhd-run", "--config", cfg,
                     "--out", str(tmp_path / "o")]) == 2

    def test_missing_config_file_is_2(self, tmp_path):
        assert main(["dmhd-run", "--config", str(tmp_path / "none.cfg"),
                     "--out", str(tmp_path / "o")]) == 2

    def test_numerical_abort_is_3(self, tmp_path):
        # a step size far beyond the parabolic bound is rejected
        cfg = write_cfg(tmp_path / "run.cfg",
                        "[grid]\nn = 8\n[run]\ndt = 0.5\nt_final = 1.0\n")
        assert main(["dmhd-run", "--config", cfg,
                     "--out", str(tmp_path / "o"), "--quiet"]) == 3

    def test_certify_corruption_is_4(self, tmp_path):
        cfg = write_cfg(tmp_path / "run.cfg",
                        "[grid]\nn = 8\n[run]\nt_final = 0.01\n"
                        "[certify]\nmomentum_offset = 0.5\n")
        out = tmp_path / "o"
        assert main(["certify", "--config", cfg, "--out", str(out),
                     "--quiet"]) == 4
        assert (out / "entropy_report_solution.csv").exists()


class TestCertify:
    def test_genuine_run_passes(self, tmp_path):
        cfg = write_cfg(tmp_path / "run.cfg",
                        "[grid]\nn = 8\n[run]\nt_final = 0.004\n")
        out = tmp_path / "o"
        assert main(["certify", "--config", cfg, "--out", str(out),
                     "--quiet"]) == 0
        lines = (out / "entropy_report_solution.csv").read_text().splitlines()
        assert lines[0] == "t,lambda,lambda_tilde_cum,R,slack"
        assert lines[-1].startswith("# r_used=")


class TestOtherSubcommands:
    def test_abi_run(self, tmp_path):
        cfg = write_cfg(tmp_path / "run.cfg",
                        "[grid]\nn = 8\n[run]\nt_final = 0.01\n")
        out = tmp_path / "o"
        assert main(["abi-run", "--config", cfg, "--out", str(out),
                     "--quiet"]) == 0
        grid, comps = read_snapshot(out / "abi_final.abim")
        assert len(comps) == 10

    def test_galerkin_run(self, tmp_path):
        cfg = write_cfg(tmp_path / "run.cfg",
                        "[grid]\nn = 8\n"
                        "[galerkin]\nN = 3\neps = 0.2\nl = 1\n"
                        "dt = 0.0005\nT = 0.002\n")
        out = tmp_path / "o"
        assert main(["galerkin-run", "--config", cfg, "--out", str(out),
                     "--quiet"]) == 0
        raw = (out / "galerkin_coefficients.bin").read_bytes()
        import struct
        (count,) = struct.unpack("<Q", raw[:8])
        assert count == 2 * 3 * 6   # d and v coefficients, 6N each
        assert len(raw) == 8 + 8 * count

    def test_mollify(self, tmp_path):
        data = tmp_path / "data.txt"
        data.write_text("atoms 1\n0.5 0.5 0.5 1.0\n")
        cfg = write_cfg(tmp_path / "run.cfg",
                        "[grid]\nn = 16\n"
                        f"[mollify]\ndata = {data}\n"
                        "eps_schedule = 0.2 0.1\n")
        out = tmp_path / "o"
        assert main(["mollify", "--config", cfg, "--out", str(out),
                     "--quiet"]) == 0
        assert (out / "mollified_eps0.2.abim").exists()
        assert (out / "lambda_monotonicity.csv").exists()

    def test_compare(self, tmp_path):
        cfg = write_cfg(tmp_path / "run.cfg",
                        "[grid]\nn = 8\n"
                        "[compare]\nt_min = 0.01\nt_max = 0.04\nsamples = 4\n")
        out = tmp_path / "o"
        assert main(["compare", "--config", cfg, "--out", str(out),
                     "--quiet"]) == 0
        text = (out / "rate_report.csv").read_text()
        assert text.splitlines()[0] == "t,err_h,err_B,cum_err_D,cum_err_P"
        assert "slope_h=" in text

    def test_identity_check(self, tmp_path):
        cfg = write_cfg(tmp_path / "run.cfg",
                        "[grid]\nn = 16\n"
                        "[identity]\nsteps = 6\n")
        out = tmp_path / "o"
        assert main(["identity-check", "--config", cfg, "--out", str(out),
                     "--quiet"]) == 0
        assert (out / "identity_check.csv").exists()
