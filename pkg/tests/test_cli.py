import json

import pytest

from oceclab.cli import main
from oceclab.keystore import Keystore


def run_cli(*argv) -> int:
    return main(list(argv))


@pytest.fixture
def enrolled(tmp_path):
    ks = tmp_path / "ks.jsonl"
    fleet = tmp_path / "fleet.json"
    rc = run_cli("register", "--meters", "3", "--keystore", str(ks),
                 "--fleet", str(fleet), "--seed", "4")
    assert rc == 0
    return ks, fleet


class TestRegisterRun:
    def test_register_creates_keystore_and_fleet(self, enrolled):
        ks, fleet = enrolled
        store = Keystore.open(ks)
        assert len(store) == 3
        meta = json.loads(fleet.read_text())
        assert meta["format"] == "ocec-fleet/1"
        assert all(m["current_id"] for m in meta["meters"])

    def test_run_evolves_identities_and_keystore(self, enrolled, tmp_path):
        ks, fleet = enrolled
        ids_before = {m["current_id"] for m in json.loads(fleet.read_text())["meters"]}
        out = tmp_path / "run.json"
        log = tmp_path / "events.jsonl"
        rc = run_cli("run", "--sessions", "6", "--keystore", str(ks),
                     "--fleet", str(fleet), "--seed", "9",
                     "--out", str(out), "--log", str(log))
        assert rc == 0
        summary = json.loads(out.read_text())
        assert summary["accepted"] == 6
        ids_after = {m["current_id"] for m in json.loads(fleet.read_text())["meters"]}
        assert ids_before.isdisjoint(ids_after)
        store = Keystore.open(ks)
        assert {r.id.hex() for r in store.dump()} == ids_after
        events = [json.loads(line) for line in log.read_text().splitlines()]
        assert any(e["evt"] == "ng_accept" for e in events)

    def test_run_continues_across_invocations(self, enrolled, tmp_path):
        ks, fleet = enrolled
        for seed in ("9", "10"):
            rc = run_cli("run", "--sessions", "3", "--keystore", str(ks),
                         "--fleet", str(fleet), "--seed", seed,
                         "--out", str(tmp_path / f"r{seed}.json"))
            assert rc == 0


class TestAttack:
    @pytest.mark.parametrize("scenario,sessions", [
        ("soak", "20"), ("replay", "15"), ("tamper", "20"), ("dos", "20"),
        ("leak", "50"), ("capture", "12"),
    ])
    def test_builtin_scenarios_pass(self, tmp_path, scenario, sessions):
        out = tmp_path / "report.json"
        rc = run_cli("attack", "--scenario", scenario, "--sessions", sessions,
                     "--meters", "2", "--seed", "6", "--out", str(out))
        assert rc == 0
        report = json.loads(out.read_text())
        assert report["attacks_succeeded"] == 0

    def test_desync_strict_and_recovery_modes(self, tmp_path):
        rc = run_cli("attack", "--scenario", "desync", "--seed", "2",
                     "--out", str(tmp_path / "d1.json"))
        assert rc == 0
        assert json.loads((tmp_path / "d1.json").read_text())["extras"][
            "permanently_blocked"]
        rc = run_cli("attack", "--scenario", "desync", "--seed", "2",
                     "--recovery", "--out", str(tmp_path / "d2.json"))
        assert rc == 0
        report = json.loads((tmp_path / "d2.json").read_text())
        assert report["recovery_extension"]
        assert report["extras"]["recovered_via_fallback"]

    def test_script_file_scenario(self, tmp_path):
        script = {
            "name": "scripted-tamper",
            "meters": 2,
            "sessions": 8,
            "seed": 3,
            "temps": {"uniform": [0, 80]},
            "script": [
                {"kind": "tamper", "target": "ng->sm",
                 "when": {"kinds": ["msg2"], "mod": [2, 0]},
                 "byte_offset": 33, "xor_mask": 128},
            ],
        }
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(script))
        out = tmp_path / "report.json"
        rc = run_cli("attack", "--script", str(path), "--out", str(out))
        assert rc == 0
        report = json.loads(out.read_text())
        assert report["attacks_launched"] == 4
        assert report["attacks_succeeded"] == 0
        assert report["sessions_accepted"] == 4

    def test_malformed_script_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"script": [{"kind": "warp"}]}))
        assert run_cli("attack", "--script", str(path)) == 2


class TestReports:
    def test_puf_stats_csv_and_figures(self, tmp_path):
        out = tmp_path / "stats.csv"
        rc = run_cli("puf-stats", "--instances", "4", "--evals", "2",
                     "--seed", "1", "--out", str(out))
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("n_not_gates,yield_mean")
        assert len(lines) == 6
        rendered = sorted(p.name for p in tmp_path.glob("stats_*.png"))
        assert rendered == ["stats_ber.png", "stats_interhd.png",
                            "stats_quality.png", "stats_yield.png"]
        assert all((tmp_path / n).stat().st_size > 0 for n in rendered)

    def test_no_figures_flag(self, tmp_path):
        out = tmp_path / "stats.csv"
        rc = run_cli("puf-stats", "--instances", "3", "--evals", "1",
                     "--seed", "1", "--out", str(out), "--no-figures")
        assert rc == 0
        assert not list(tmp_path.glob("*.png"))

    def test_csv_byte_reproducibility_across_invocations(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (a, b):
            rc = run_cli("puf-stats", "--instances", "4", "--evals", "2",
                         "--seed", "77", "--out", str(path), "--no-figures")
            assert rc == 0
        assert a.read_bytes() == b.read_bytes()

    def test_bench_csv_and_figures(self, tmp_path):
        out = tmp_path / "bench.csv"
        rc = run_cli("bench", "--sessions", "10", "--seed", "2",
                     "--out", str(out))
        assert rc == 0
        assert (tmp_path / "bench_profile.png").exists()
        rows = out.read_text().splitlines()
        assert rows[1].split(",")[1:4] == ["8", "1", "2"]

    def test_randomness_json(self, tmp_path):
        out = tmp_path / "rand.json"
        rc = run_cli("randomness", "--sessions", "60", "--meters", "4",
                     "--seed", "3", "--out", str(out))
        assert rc == 0
        report = json.loads(out.read_text())
        assert report["ok"]
        assert (tmp_path / "rand_bytes.png").exists()

    def test_bench_violation_exits_nonzero(self, tmp_path, monkeypatch):
        from oceclab.protocol import SmDevice
        original = SmDevice._hash

        def extra_hash(self, fields, widths):
            self.counters.hash += 1
            return original(self, fields, widths)

        monkeypatch.setattr(SmDevice, "_hash", extra_hash)
        rc = run_cli("bench", "--sessions", "2", "--seed", "2",
                     "--out", str(tmp_path / "bench.csv"), "--no-figures")
        assert rc == 1

    def test_config_file_plumbs_through(self, tmp_path):
        cfg = tmp_path / "lab.cfg"
        cfg.write_text("n_not_gates = 0\nnoise_enabled = false\n")
        out = tmp_path / "stats.csv"
        rc = run_cli("puf-stats", "--instances", "2", "--evals", "1",
                     "--n-not", "0", "--seed", "1", "--config", str(cfg),
                     "--out", str(out), "--no-figures")
        assert rc == 0
        row = out.read_text().splitlines()[1].split(",")
        assert row[0] == "0"
        assert float(row[4]) == 0.0  # noise off: raw BER exactly zero
