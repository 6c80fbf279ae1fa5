"""Command-line front-end: artifacts, manifests, exit codes."""

import json
import socket
import threading

import pytest

from tcpsbench.cli import EXIT_CONFIG, EXIT_EXPERIMENT, EXIT_OK, run_command
from tcpsbench.core import extract_metrics, read_curve_csv
from tcpsbench.loopsim import LoopConfig


def run(args):
    return run_command([str(a) for a in args])


def free_port() -> int:
    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


class TestStep:
    def test_ideal_step_writes_good_curve(self, tmp_path):
        out = tmp_path / "run"
        assert run(["step", "--config", "ideal", "--out", out]) == EXIT_OK
        curve = read_curve_csv(str(out / "curve.csv"), LoopConfig())
        metrics = extract_metrics(curve)
        assert 1.3 <= metrics.t_r <= 1.7
        assert metrics.is_good
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "step"
        assert manifest["config"]["loop"]["seed"] == 1
        assert "curve.csv" in manifest["artifacts"]

    def test_byte_identical_artifacts_for_same_seed(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(["step", "--config", "testbed-overhead-like", "--seed", 5, "--out", a]) == EXIT_OK
        assert run(["step", "--config", "testbed-overhead-like", "--seed", 5, "--out", b]) == EXIT_OK
        assert (a / "curve.csv").read_bytes() == (b / "curve.csv").read_bytes()
        assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()

    def test_seed_changes_artifacts(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run(["step", "--config", "testbed-overhead-like", "--seed", 5, "--out", a])
        run(["step", "--config", "testbed-overhead-like", "--seed", 6, "--out", b])
        assert (a / "curve.csv").read_bytes() != (b / "curve.csv").read_bytes()


class TestConfigErrors:
    def test_unknown_subcommand(self, capsys):
        assert run(["frobnicate"]) == EXIT_CONFIG

    def test_missing_subcommand(self):
        assert run([]) == EXIT_CONFIG

    def test_malformed_json_reports_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{\n  "loop": {\n    "k_p": oops\n  }\n}\n')
        assert run(["step", "--config", bad, "--out", tmp_path / "o"]) == EXIT_CONFIG
        err = capsys.readouterr().err
        assert "line 3" in err

    def test_unknown_field_rejected(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"channel": {"type": "ideal"}, "loop": {"k_pp": 1}}))
        assert run(["step", "--config", bad, "--out", tmp_path / "o"]) == EXIT_CONFIG
        assert "k_pp" in capsys.readouterr().err

    def test_missing_channel_rejected(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"loop": {}}))
        assert run(["step", "--config", bad, "--out", tmp_path / "o"]) == EXIT_CONFIG

    def test_invalid_loop_constants_rejected(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"channel": {"type": "ideal"},
                                   "loop": {"k_p": 2.0, "k_2": 1.2}}))
        assert run(["step", "--config", bad, "--out", tmp_path / "o"]) == EXIT_CONFIG


class TestExperimentErrors:
    def test_no_good_delta_exits_3(self, tmp_path):
        cfg = tmp_path / "dead.json"
        cfg.write_text(json.dumps({
            "channel": {"type": "impaired",
                        "forward": {"drop_prob": 1.0}, "backward": {"drop_prob": 1.0}},
            "search": {"delta_min_ms": 0.5, "delta_max_ms": 1.0, "delta_step_ms": 0.5},
        }))
        assert run(["qoc", "--config", cfg, "--gspec", 0.9,
                    "--out", tmp_path / "o"]) == EXIT_EXPERIMENT


class TestSearchCommands:
    def test_delta_opt(self, tmp_path):
        out = tmp_path / "o"
        assert run(["delta-opt", "--config", "ideal", "--out", out]) == EXIT_OK
        text = (out / "delta_opt.txt").read_text()
        assert abs(float(text.split(":")[1]) - 1.0) < 1e-9

    def test_qoc_summary_and_csv(self, tmp_path):
        out = tmp_path / "o"
        assert run(["qoc", "--config", "ideal", "--gspec", 1.0, "--out", out]) == EXIT_OK
        csv_text = (out / "qoc.csv").read_text().splitlines()
        assert csv_text[0] == "g_spec,delta_opt_ms,t_r_ms,qoc,v_max"
        g_spec, delta, t_r, qoc, vmax = csv_text[1].split(",")
        assert float(qoc) == pytest.approx(0.0, abs=0.06)

    def test_curve_command(self, tmp_path):
        out = tmp_path / "o"
        assert run(["curve", "--config", "testbed-overhead-like",
                    "--gspec-list", "0.5,0.9", "--out", out]) == EXIT_OK
        rows = (out / "perf_curve.csv").read_text().strip().splitlines()
        assert len(rows) == 3
        qocs = [float(r.split(",")[3]) for r in rows[1:]]
        assert qocs[1] <= qocs[0] + 1e-9

    def test_vmax_from_t_r(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert run(["vmax", "--t-r-ms", 3.364, "--out", out]) == EXIT_OK
        text = (out / "vmax.txt").read_text()
        assert "v_max_mps: 0.44" in text

    def test_vmax_needs_input(self, tmp_path):
        assert run(["vmax", "--out", tmp_path / "o"]) == EXIT_CONFIG


class TestSickness:
    def test_synth_predict_roundtrip(self, tmp_path):
        out = tmp_path / "s"
        assert run(["sickness", "synth", "--fs", 30, "--steps", 2000, "--vmax", 0.02,
                    "--fraction", 0.82, "--seed", 3, "--out", out]) == EXIT_OK
        assert run(["sickness", "predict", "--traj", out / "trajectory.csv",
                    "--vmax", 0.02, "--out", out]) == EXIT_OK
        text = (out / "sickness.txt").read_text()
        assert "predicted_E_pct: 82.0" in text

    def test_measure_on_ideal(self, tmp_path):
        out = tmp_path / "s"
        run(["sickness", "synth", "--fs", 30, "--steps", 600, "--vmax", 0.05,
             "--fraction", 0.9, "--seed", 4, "--out", out])
        assert run(["sickness", "measure", "--traj", out / "trajectory.csv",
                    "--config", "ideal", "--vmax", 0.05, "--out", out]) == EXIT_OK
        assert (out / "error_histogram.csv").exists()
        summary = (out / "sickness.txt").read_text()
        assert "measured_E_pct" in summary


class TestNetsim:
    def test_placement_sweep_no_traffic(self, tmp_path):
        out = tmp_path / "n"
        code = run(["netsim", "--config", "usnet-nw", "--gspec", 0.9,
                    "--rates", "0", "--placements", "S0:S8,S6:S8",
                    "--out", out])
        assert code == EXIT_OK
        rows = (out / "netsim.csv").read_text().strip().splitlines()
        assert rows[0].startswith("te_master,te_slave,rate_bps")
        assert len(rows) == 3


class TestProbe:
    def test_echo_roundtrip_on_loopback(self, tmp_path):
        port = free_port()
        serve = threading.Thread(
            target=run, args=(["probe", "serve", "--bind", f"127.0.0.1:{port}",
                               "--count", 5, "--deadline-ms", 3000,
                               "--out", tmp_path / "srv"],),
            daemon=True)
        serve.start()
        code = run(["probe", "measure", "--local", "127.0.0.1:0",
                    "--remote", f"127.0.0.1:{port}", "--count", 5,
                    "--interval-ms", 1, "--deadline-ms", 2000,
                    "--out", tmp_path / "cli"])
        serve.join(timeout=10.0)
        assert code == EXIT_OK
        text = (tmp_path / "cli" / "probe.txt").read_text()
        assert "rtt_mean_ms:" in text and "lost: 0" in text
        assert "budget_haptic: within" in text

    def test_socket_step_against_plant_responder(self, tmp_path):
        port = free_port()
        plant_cfg = tmp_path / "plant.json"
        plant_cfg.write_text(json.dumps({
            "loop": {"delta_ms": 5.0, "sweep_len": 30, "step_at": 15},
            "channel": {"type": "ideal"},
        }))
        sock_cfg = tmp_path / "sock.json"
        sock_cfg.write_text(json.dumps({
            "loop": {"delta_ms": 5.0, "sweep_len": 30, "step_at": 15},
            "channel": {"type": "socket", "local": "127.0.0.1:0",
                        "remote": f"127.0.0.1:{port}"},
        }))
        results = {}

        def serve():
            results["code"] = run(["probe", "serve", "--bind", f"127.0.0.1:{port}",
                                   "--plant-config", plant_cfg,
                                   "--deadline-ms", 3000, "--out", tmp_path / "srv"])

        thread = threading.Thread(target=serve, daemon=True)
        thread.start()
        code = run(["step", "--config", sock_cfg, "--deadline-ms", 3000,
                    "--out", tmp_path / "op"])
        thread.join(timeout=15.0)
        assert code == EXIT_OK
        assert results.get("code") == EXIT_OK
        trace = (tmp_path / "op" / "operator_trace.csv").read_text().splitlines()
        assert trace[0] == "t_ms,x,y"
        assert len(trace) == 31
        curve = read_curve_csv(str(tmp_path / "srv" / "curve.csv"),
                               LoopConfig(delta_ms=5.0, sweep_len=30, step_at=15))
        assert len(curve.samples) >= 28
