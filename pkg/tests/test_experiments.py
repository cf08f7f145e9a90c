"""Configuration, CLI contract, artifact formats, determinism."""

import json
import struct

import numpy as np
import pytest

from ergowave.cli import main
from ergowave.config import ConfigError, load_config, parse_text, render
from ergowave.experiments import (
    model_spec_from_config,
    read_snapshot,
    run_experiment,
    write_snapshot,
)


class TestConfig:
    def test_defaults_cover_schema(self):
        cfg = load_config(None)
        assert cfg["K"] == 64
        assert cfg["phi.family"] == "power"
        assert cfg["mixing.times"] == (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)

    def test_round_trip_lossless(self):
        cfg = load_config(None, ["phi.lambda=2.5", "mixing.times=1,3,9",
                                 "seed=42"])
        again = parse_text(render(cfg))
        assert again == cfg

    def test_file_and_override_precedence(self, tmp_path):
        p = tmp_path / "model.cfg"
        p.write_text("# comment\nK = 16\nnoise.decay = 4.0\n")
        cfg = load_config(str(p), ["K=8"])
        assert cfg["K"] == 8
        assert cfg["noise.decay"] == 4.0

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="no.such.key"):
            load_config(None, ["no.such.key=1"])

    def test_bad_value_named(self):
        with pytest.raises(ConfigError, match="K"):
            load_config(None, ["K=banana"])

    def test_model_bridge(self):
        cfg = load_config(None, ["K=16", "phi.lambda=1.0", "L=1.0"])
        spec = model_spec_from_config(cfg)
        assert spec.n_modes == 16
        assert spec.nonlinearity.lam == 1.0
        assert spec.domain_length == 1.0


class TestSnapshotFormat:
    def test_layout_bytes(self, tmp_path):
        path = tmp_path / "s.bin"
        times = np.array([0.0, 0.5])
        rows = np.arange(8.0).reshape(2, 4)
        write_snapshot(str(path), times, rows)
        raw = path.read_bytes()
        assert raw[:6] == b"SWAVE1"
        version, K, count = struct.unpack_from("<III", raw, 6)
        assert (version, K, count) == (1, 2, 2)
        t0 = struct.unpack_from("<d", raw, 18)[0]
        assert t0 == 0.0
        assert len(raw) == 18 + 2 * (8 + 32)

    def test_round_trip(self, tmp_path):
        path = tmp_path / "s.bin"
        rng = np.random.default_rng(0)
        times = np.array([0.0, 1.0, 2.0])
        rows = rng.standard_normal((3, 128))
        write_snapshot(str(path), times, rows)
        t2, r2 = read_snapshot(str(path))
        np.testing.assert_array_equal(t2, times)
        np.testing.assert_array_equal(r2, rows)

    def test_corrupt_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTMAGIC" + b"\0" * 20)
        with pytest.raises(ValueError):
            read_snapshot(str(path))


SMALL = ["K=16", "sim.T=1.0", "sim.dt=0.01", "seed=77"]


class TestRunExperiment:
    def test_simulate_zero_horizon(self, tmp_path):
        cfg = load_config(None, ["K=16", "sim.T=0.0"])
        manifest, violations, _ = run_experiment("simulate", cfg, str(tmp_path))
        assert not violations
        times, rows = read_snapshot(tmp_path / "snapshot.bin")
        assert list(times) == [0.0]
        np.testing.assert_array_equal(rows, np.zeros((1, 32)))

    def test_simulate_deterministic_digests(self, tmp_path):
        cfg = load_config(None, SMALL)
        m1, _, _ = run_experiment("simulate", cfg, str(tmp_path / "a"))
        m2, _, _ = run_experiment("simulate", cfg, str(tmp_path / "b"))
        assert m1.artifacts == m2.artifacts

    def test_worker_count_does_not_change_digests(self, tmp_path):
        base = ["K=16", "couple.pairs=6", "couple.T=2.0", "couple.dt=0.01",
                "couple.dsmall_pairs=4", "couple.dsmall_paths=4",
                "couple.dsmall_t=1.0", "seed=9"]
        m1, _, _ = run_experiment("couple", load_config(None, base + ["threads=1"]),
                                  str(tmp_path / "w1"))
        m2, _, _ = run_experiment("couple", load_config(None, base + ["threads=4"]),
                                  str(tmp_path / "w4"))
        assert m1.artifacts == m2.artifacts

    def test_manifest_digests_match_files(self, tmp_path):
        import hashlib
        cfg = load_config(None, SMALL)
        manifest, _, _ = run_experiment("simulate", cfg, str(tmp_path))
        for name, digest in manifest.artifacts.items():
            data = (tmp_path / name).read_bytes()
            assert hashlib.sha256(data).hexdigest() == digest
        saved = json.loads((tmp_path / "manifest.json").read_text())
        assert saved["artifacts"] == manifest.artifacts
        assert parse_text(saved["config"]) == cfg

    def test_validate_artifacts(self, tmp_path):
        cfg = load_config(None)
        _, violations, _ = run_experiment("validate", cfg, str(tmp_path))
        assert violations == []
        payload = json.loads((tmp_path / "validation.json").read_text())
        assert payload["all_ok"]
        assert payload["witnesses"] == {"a1": 1.0, "a2": 1.0, "a3": 0.0,
                                        "a4": 3.0, "a5": 0.0}

    def test_couple_emits_decay_and_certificate(self, tmp_path):
        cfg = load_config(None, ["K=16", "couple.pairs=4", "couple.T=2.0",
                                 "couple.dt=0.01", "couple.dsmall_pairs=4",
                                 "couple.dsmall_paths=4", "couple.dsmall_t=1.0"])
        manifest, _, _ = run_experiment("couple", cfg, str(tmp_path))
        assert {"decay.csv", "dsmall.csv", "dsmall.json"} <= set(manifest.artifacts)
        header = (tmp_path / "decay.csv").read_text().splitlines()[0]
        assert header == "t,mean,stderr,n_paths"
        header = (tmp_path / "dsmall.csv").read_text().splitlines()[0]
        assert header == "R,t,rho_hat,stderr"

    def test_simulate_companion_manifest_fields(self, tmp_path):
        cfg = load_config(None, SMALL)
        manifest, _, _ = run_experiment("simulate", cfg, str(tmp_path))
        payload = json.loads((tmp_path / "snapshot.json").read_text())
        assert payload["snapshot_sha256"] == manifest.artifacts["snapshot.bin"]
        assert payload["seed"] == 77
        assert payload["dt"] == 0.01
        assert payload["model"]["K"] == 16

    def test_lyapunov_small_run_artifacts(self, tmp_path):
        cfg = load_config(None, [
            "K=16", "lyapunov.n=1,2", "lyapunov.paths=16", "lyapunov.T=2.0",
            "lyapunov.dt=0.01", "lyapunov.phi0=0,5",
            "lyapunov.horizon=30", "lyapunov.burn_in=10", "lyapunov.chains=2",
            "lyapunov.thin=2", "lyapunov.samples=16", "lyapunov.moment_p=2",
        ])
        manifest, violations, _ = run_experiment("lyapunov", cfg, str(tmp_path))
        assert violations == []
        header = (tmp_path / "drift_phi0_n1.csv").read_text().splitlines()[0]
        assert header == "t,E_phi_n,stderr,running_integral"
        report = json.loads((tmp_path / "drift_report.json").read_text())
        assert report["all_feasible"]
        assert all(r["c"] > 0 for r in report["reports"])

    def test_ratekit_check_report(self, tmp_path):
        cfg = load_config(None, ["ratekit.sequences=50", "ratekit.quad_points=5"])
        manifest, violations, _ = run_experiment("ratekit-check", cfg,
                                                 str(tmp_path))
        assert violations == []
        report = json.loads((tmp_path / "ratekit_report.json").read_text())
        assert report["all_ok"]
        assert report["chart_worst_rel_err"] < 1e-8
        cert = json.loads((tmp_path / "rate_certificate.json").read_text())
        assert set(cert) == {"rho1", "t0", "R", "K1", "K2", "cn_star",
                             "Cn_star", "n", "gamma", "exponent"}


class TestCli:
    def test_validate_default_exit_zero(self, tmp_path, capsys):
        code = main(["validate", "--out", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "overall: PASS" in out

    def test_lambda_range_strict_violation(self, tmp_path):
        code = main(["validate", "--set", "phi.lambda=3", "--set", "dim=3",
                     "--strict", "--quiet", "--out", str(tmp_path)])
        assert code == 1
        code = main(["validate", "--set", "phi.lambda=3", "--set", "dim=3",
                     "--quiet", "--out", str(tmp_path)])
        assert code == 0  # report-only without --strict

    def test_unknown_key_usage_error(self, tmp_path, capsys):
        code = main(["validate", "--set", "nope=1", "--out", str(tmp_path)])
        assert code == 2
        assert "nope" in capsys.readouterr().err

    def test_mixing_flags_map_to_keys(self, tmp_path):
        # tiny mixing run exercising the --n/--gamma shortcuts end to end
        code = main(["mixing", "--n", "4", "--gamma", "0.25", "--quiet",
                     "--out", str(tmp_path),
                     "--set", "K=8", "--set", "mixing.samples=8",
                     "--set", "mixing.times=0.5,1.0",
                     "--set", "mixing.dt=0.01",
                     "--set", "mixing.horizon=30", "--set", "mixing.burn_in=10",
                     "--set", "mixing.chains=2", "--set", "mixing.thin=2",
                     "--set", "mixing.boot=20"])
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["theoretical_exponent"] == pytest.approx(3.25)
        header = (tmp_path / "mixing_curve.csv").read_text().splitlines()[0]
        assert header == "t,wd_hat,ci_lo,ci_hi,n_samples"

    def test_config_file_workflow(self, tmp_path, capsys):
        cfgfile = tmp_path / "default.cfg"
        cfgfile.write_text("K = 16\nseed = 5\n")
        code = main(["validate", "--config", str(cfgfile), "--out",
                     str(tmp_path / "out")])
        assert code == 0
