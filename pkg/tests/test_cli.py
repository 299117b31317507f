import json
import os
import signal
import subprocess
import sys
import time

import pytest
import yaml

from echoscope import cli
from echoscope.config import describe_keys
from echoscope.prober import live


def _run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _summary(out):
    return json.loads(out.strip().splitlines()[-1])


def test_simulate_benign_has_no_alerts(capsys, tmp_path):
    code, out, _ = _run(capsys, "simulate", "benign_1switch", "--log-dir", str(tmp_path))
    s = _summary(out)
    assert code == 0 and s["post_grace_alerts"] == 0 and s["windowed_alerts"] == 0
    assert (tmp_path / "scores.jsonl").exists()


def test_simulate_attack_alerts_after_onset(capsys, tmp_path):
    code, out, _ = _run(capsys, "simulate", "il_dh_onset", "--log-dir", str(tmp_path))
    assert code == 0 and _summary(out)["post_grace_alerts"] > 0
    recs = [json.loads(x) for x in open(tmp_path / "scores.jsonl")]
    hits = [r for r in recs if r["is_alert"]]
    assert sum(r["attack"] for r in hits) / len(hits) > 0.95


def test_simulate_without_seed_is_config_error(capsys, tmp_path):
    p = tmp_path / "noseed.yaml"
    p.write_text(yaml.safe_dump({"hosts": [{"address": "10.0.0.2"}]}))
    code, _, err = _run(capsys, "simulate", str(p), "--log-dir", str(tmp_path))
    assert code == 1 and "seed" in err


def test_unknown_key_is_config_error(capsys, tmp_path):
    code, _, err = _run(capsys, "simulate", "benign_1switch", "--set", "detector.nope=1",
                        "--log-dir", str(tmp_path))
    assert code == 1 and "detector.nope: unknown key" in err


def test_malformed_set(capsys):
    code, _, err = _run(capsys, "simulate", "benign_1switch", "--set", "detector.window")
    assert code == 1 and "key=value" in err


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["simulate", "--help"])
    assert e.value.code == 0
    out = capsys.readouterr().out
    for line in describe_keys().splitlines():
        assert line.split()[0] in out


def test_simulation_logs_are_byte_identical(capsys, tmp_path):
    for d in ("a", "b"):
        assert _run(capsys, "simulate", "il_nb", "--probes", "150", "--set",
                    "hosts.0.attack.onset_probe=120", "--log-dir", str(tmp_path / d))[0] == 0
    for f in ("scores.jsonl", "alerts.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_different_seed_changes_log(capsys, tmp_path):
    _run(capsys, "simulate", "benign_1switch", "--probes", "20", "--log-dir", str(tmp_path / "a"))
    _run(capsys, "simulate", "benign_1switch", "--probes", "20", "--seed", "999",
         "--log-dir", str(tmp_path / "b"))
    assert (tmp_path / "a/scores.jsonl").read_bytes() != (tmp_path / "b/scores.jsonl").read_bytes()


def test_calibrate_from_mean_rtt(capsys):
    code, out, _ = _run(capsys, "calibrate", "--mu", "0.0002")
    res = json.loads(out)
    assert code == 0 and res["rate_hz"] == pytest.approx(10000.0)
    assert res["bandwidth"]["bytes_per_probe"] == 810216


def test_calibrate_simulated(capsys):
    code, out, _ = _run(capsys, "calibrate", "--scenario", "benign_1switch")
    res = json.loads(out)
    assert code == 0 and res["hosts"]["10.0.0.2"]["rate_hz"] == pytest.approx(11343.33, rel=0.02)


def test_calibrate_needs_a_source(capsys):
    assert _run(capsys, "calibrate")[0] == 1


def test_analyze_missing_logs(capsys, tmp_path):
    code, _, err = _run(capsys, "analyze", str(tmp_path / "nothing"))
    assert code != 0 and "no score log" in err


def test_analyze_needs_input(capsys):
    assert _run(capsys, "analyze")[0] == 1


def test_analyze_run_directory(capsys, tmp_path):
    _run(capsys, "simulate", "il_nb", "--probes", "160", "--set",
         "hosts.0.attack.onset_probe=120", "--log-dir", str(tmp_path))
    code, out, _ = _run(capsys, "analyze", str(tmp_path))
    res = json.loads(out)
    assert code == 0 and res["export"]["rows"] == 160
    assert res["summary"]["hosts"]["10.0.0.2"]["auc"] > 0.9
    assert (tmp_path / "report" / "scores.dat").exists()


def test_analyze_regression(capsys, tmp_path):
    code, out, _ = _run(capsys, "analyze", "--regression", "regression_load", "--signals", "300",
                        "--k", "5", "--m", "5", "--out", str(tmp_path))
    res = json.loads(out)["regression"]
    assert code == 0 and os.path.exists(res["file"])
    lines = open(res["file"]).read().splitlines()
    assert len(lines) == 2 + 6


def test_monitor_without_privileges(capsys, monkeypatch, tmp_path):
    def deny(*a, **k):
        raise PermissionError("operation not permitted")

    monkeypatch.setattr(live.socket, "socket", deny)
    code, _, err = _run(capsys, "monitor", "--loopback", "--log-dir", str(tmp_path))
    assert code == 3 and "privilege" in err


def _can_raw():
    try:
        live.open_socket().close()
        return True
    except live.PrivilegeError:
        return False


needs_raw = pytest.mark.skipif(not _can_raw(), reason="raw ICMP sockets unavailable")


@needs_raw
def test_monitor_loopback_smoke(capsys, tmp_path):
    code, _, err = _run(capsys, "monitor", "--loopback", "--log-dir", str(tmp_path),
                        "--set", "live.max_cycles=3")
    recs = [json.loads(x) for x in open(tmp_path / "scores.jsonl")]
    assert code == 0 and len(recs) == 3
    assert all(r["grace"] and not r["is_alert"] for r in recs)
    assert (tmp_path / "profiles" / "127.0.0.1.json").exists()


def _spawn(*args):
    return subprocess.Popen([sys.executable, "-m", "echoscope.cli", *args],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)


def _wait_for(pred, timeout=30.0):
    end = time.time() + timeout
    while time.time() < end:
        if pred():
            return True
        time.sleep(0.1)
    return False


@needs_raw
def test_sigterm_saves_profiles_for_restart(tmp_path):
    scores = tmp_path / "scores.jsonl"
    proc = _spawn("monitor", "--loopback", "--log-dir", str(tmp_path))
    try:
        assert _wait_for(lambda: scores.exists() and len(scores.read_text().splitlines()) >= 3)
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=30) == 0
    finally:
        proc.kill()
    assert (tmp_path / "profiles" / "127.0.0.1.json").exists()
    again = _spawn("monitor", "--loopback", "-v", "--log-dir", str(tmp_path),
                   "--set", "live.max_cycles=1")
    _, err = again.communicate(timeout=60)
    assert again.returncode == 0 and "resumed profile for 127.0.0.1" in err


@needs_raw
def test_no_hosts_heartbeat_then_clean_stop(tmp_path):
    proc = _spawn("monitor", "-v", "--log-dir", str(tmp_path), "--set", "live.heartbeat_s=0.2")
    time.sleep(2.0)
    proc.send_signal(signal.SIGTERM)
    try:
        _, err = proc.communicate(timeout=30)
    finally:
        proc.kill()
    assert proc.returncode == 0 and "heartbeat: no hosts to protect" in err
