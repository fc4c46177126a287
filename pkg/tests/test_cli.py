import json
from pathlib import Path

import pytest

from lethe import canonical_encode, canonical_loads
from lethe.cli import main

SEED_ARGS = ["seed", "--concepts", "10", "--facts", "25", "--seed", "7", "--dim", "8", "--epochs", "60"]


@pytest.fixture
def data_dir(tmp_path, capsys):
    d = str(tmp_path / "data")
    assert main(SEED_ARGS + ["--data-dir", d]) == 0
    capsys.readouterr()  # drain the seed banner so tests see only their own output
    return d


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def assert_json_round_trips(stdout: str) -> dict:
    document = json.loads(stdout)
    encoded = canonical_encode(document)  # floats would raise
    assert canonical_loads(encoded) == document
    return document


def test_unknown_subcommand_exits_one(capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 1
    assert "usage" in err.lower()


def test_unknown_flag_exits_one(capsys):
    code, _, err = run(capsys, "audit", "--bogus")
    assert code == 1
    assert "usage" in err.lower()


def test_no_command_prints_usage(capsys):
    code, _, err = run(capsys, )
    assert code == 1 and "usage" in err.lower()


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    capsys.readouterr()


def test_audit_verify_on_fresh_data_dir(capsys, tmp_path):
    code, out, _ = run(capsys, "audit", "--verify", "--data-dir", str(tmp_path / "fresh"))
    assert code == 0
    assert "valid, 0 entries" in out


def test_seed_then_forget_end_to_end(capsys, data_dir):
    code, out, _ = run(capsys, "forget", "--concept", "c2", "--data-dir", data_dir, "--format", "json")
    assert code == 0
    document = assert_json_round_trips(out)
    assert document["status"] == "COMPLETED"
    report = document["reports"][0]
    assert float(report["final_influence"]) <= float(report["threshold"])

    code, out, _ = run(capsys, "audit", "--verify", "--data-dir", data_dir)
    assert code == 0
    assert "valid, 3 entries" in out


def test_forget_unknown_concept_exits_one(capsys, data_dir):
    code, _, err = run(capsys, "forget", "--concept", "nosuch", "--data-dir", data_dir)
    assert code == 1
    assert "nosuch" in err


def test_forget_without_model_exits_two(capsys, tmp_path):
    code, _, err = run(capsys, "forget", "--concept", "c1", "--data-dir", str(tmp_path / "empty"))
    assert code == 2
    assert "seed" in err


def test_forget_conflict_unresolved_exits_two(capsys, data_dir):
    code, _, err = run(
        capsys, "forget", "--concept", "c2", "--data-dir", data_dir, "--conflict-floor", "1.01"
    )
    assert code == 2
    assert "conflict" in err.lower()


def test_audit_invalid_exits_three(capsys, data_dir):
    assert main(["forget", "--concept", "c2", "--data-dir", data_dir]) == 0
    capsys.readouterr()
    ledger_path = Path(data_dir) / "ledger.jsonl"
    data = bytearray(ledger_path.read_bytes())
    data[25] ^= 0x01
    ledger_path.write_bytes(bytes(data))
    code, out, _ = run(capsys, "audit", "--verify", "--data-dir", data_dir)
    assert code == 3
    assert "INVALID" in out


def test_report_lists_every_concept(capsys, data_dir):
    code, out, _ = run(capsys, "report", "--data-dir", data_dir, "--format", "json")
    assert code == 0
    document = assert_json_round_trips(out)
    assert len(document["concepts"]) == 10
    assert all("influence" in row for row in document["concepts"])


def test_probe_and_conflict_commands(capsys, data_dir):
    code, out, _ = run(capsys, "probe", "--concept", "c2", "--data-dir", data_dir, "--format", "json")
    assert code == 0
    document = assert_json_round_trips(out)
    assert document["target"] == "c2" and document["forget"]

    code, out, _ = run(capsys, "conflict", "--concept", "c2", "--data-dir", data_dir, "--format", "json")
    assert code == 0
    document = assert_json_round_trips(out)
    assert document["conflict"]["score"] == "1.0"


def test_ingest_and_sweep_commands(capsys, tmp_path, data_dir):
    sample = tmp_path / "sample.json"
    sample.write_text(
        json.dumps(
            {
                "subject_id": "s1",
                "features": [0.1],
                "tokens": [],
                "categories": [],
                "facts": [{"subject": "c0", "object": "c5", "categories": []}],
            }
        )
    )
    code, out, _ = run(capsys, "ingest", "--file", str(sample), "--data-dir", data_dir, "--format", "json")
    assert code == 0
    document = assert_json_round_trips(out)
    assert document["action"] == "ACCEPT" and document["inserted_facts"] == 1

    code, out, _ = run(capsys, "sweep", "--data-dir", data_dir, "--format", "json")
    assert code == 0
    document = assert_json_round_trips(out)
    assert document["processed"] == []  # default policy retains forever


def test_ingest_missing_file_exits_two(capsys, data_dir):
    code, _, err = run(capsys, "ingest", "--file", "/nonexistent.json", "--data-dir", data_dir)
    assert code == 2


def test_audit_json_output_round_trips(capsys, data_dir):
    assert main(["forget", "--concept", "c2", "--data-dir", data_dir]) == 0
    capsys.readouterr()
    code, out, _ = run(capsys, "audit", "--data-dir", data_dir, "--format", "json")
    assert code == 0
    document = assert_json_round_trips(out)
    assert document["entry_count"] == 3


def test_data_dir_env_var_respected(capsys, tmp_path, monkeypatch):
    target = tmp_path / "env-dir"
    monkeypatch.setenv("LETHE_DATA_DIR", str(target))
    code, out, _ = run(capsys, *SEED_ARGS)
    assert code == 0
    assert (target / "model.json").exists()
    code, out, _ = run(capsys, "audit", "--verify")
    assert code == 0 and "valid" in out


def test_seed_out_flag_is_data_dir_alias(capsys, tmp_path):
    target = tmp_path / "out-dir"
    code, _, _ = run(capsys, *SEED_ARGS, "--out", str(target))
    assert code == 0
    assert (target / "model.json").exists()


def test_cli_and_api_produce_identical_ledger_entries(capsys, tmp_path):
    import threading

    import requests

    from lethe.engine import ComplianceEngine
    from lethe.service import make_server

    cli_dir = str(tmp_path / "via-cli")
    api_dir = str(tmp_path / "via-api")
    for d in (cli_dir, api_dir):
        assert main(SEED_ARGS + ["--data-dir", d]) == 0
    capsys.readouterr()

    assert main(["forget", "--concept", "c2", "--data-dir", cli_dir]) == 0
    capsys.readouterr()

    server = make_server(ComplianceEngine(api_dir), "127.0.0.1:0")
    threading.Thread(target=server.serve_forever, daemon=True).start()
    try:
        base = "http://{}:{}".format(*server.server_address[:2])
        response = requests.post(
            f"{base}/v1/erasure", json={"subject_id": "operator", "concepts": ["c2"]}
        )
        assert response.status_code == 202
    finally:
        server.shutdown()
        server.server_close()

    def lifecycle(data_dir):
        from lethe import Ledger

        entries = Ledger(str(Path(data_dir) / "ledger.jsonl")).entries()
        return [
            (e.event_type, e.payload.get("concept") or e.payload.get("concepts"),
             e.payload.get("report", {}).get("final_influence") if isinstance(e.payload.get("report"), dict) else None)
            for e in entries
        ]

    assert lifecycle(cli_dir) == lifecycle(api_dir)
