import json
import struct

import pytest

from mmtrace_export.cli import main

from conftest import mmtrace_cli


class TestExportCli:
    def test_mock_capture_end_to_end(self, tmp_path, media_file, capsys,
                                     require_mmtrace_cli):
        out = tmp_path / "cli.mmtr"
        code = main(["--model", "mock:demo", "--prompt", "what is shown",
                     "--media", media_file, "--replicate", "2",
                     "--out", str(out)])
        assert code == 0
        assert f"wrote {out}" in capsys.readouterr().out

        code, _, err = mmtrace_cli("validate", str(out))
        assert code == 0, err
        code, stdout, err = mmtrace_cli("analyze", str(out), "--format", "json")
        assert code == 0, err
        report = json.loads(stdout)
        assert report["counts"]["nontext"] > 0
        assert set(report["buckets"]) == {"early", "middle", "late"}

    def test_avg_heads_flag_reaches_header(self, tmp_path, media_file, capsys):
        out = tmp_path / "avg.mmtr"
        assert main(["--model", "mock:demo", "--prompt", "hi", "--media",
                     media_file, "--avg-heads", "--out", str(out)]) == 0
        data = out.read_bytes()
        (header_len,) = struct.unpack("<Q", data[8:16])
        header = json.loads(data[16:16 + header_len])
        assert header["heads"] == 1

    def test_missing_required_flags_exit_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--model", "mock:demo"])
        assert exc.value.code == 2

    def test_invalid_replicate_exits_two(self, tmp_path, media_file, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--model", "mock:demo", "--prompt", "x", "--media",
                  media_file, "--replicate", "0", "--out",
                  str(tmp_path / "x.mmtr")])
        assert exc.value.code == 2

    def test_capability_failure_exits_one(self, tmp_path, media_file, capsys):
        code = main(["--model", "mock:demo", "--prompt", "x", "--media",
                     media_file, "--replicate", "1000",
                     "--out", str(tmp_path / "x.mmtr")])
        assert code == 1
        assert "caps media tokens" in capsys.readouterr().err
