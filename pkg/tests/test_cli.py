import json
import subprocess
import sys

import numpy as np
import pytest

from evkit import cli
from evkit.accumulator import decode_ppm
from evkit.events import EventStream, SensorGeometry, write_binary, write_csv

GEOM = SensorGeometry(40, 30)
DIMS = ["--width", "40", "--height", "30"]


def _write_events(path, rng, count, t_hi=3000):
    t = np.sort(rng.integers(0, t_hi, count))
    stream = EventStream(t, rng.integers(0, 40, count), rng.integers(0, 30, count),
                         rng.choice([-1, 1], count), 40, 30)
    path.write_bytes(write_binary(stream) if path.suffix == ".bin" else write_csv(stream))
    return stream


def test_empty_input_gives_white_frames(tmp_path):
    src = tmp_path / "empty.csv"
    src.write_text("t,x,y,p\n")
    assert cli.main(["split", "--input", str(src), "--out", str(tmp_path / "o"), *DIMS]) == 0
    stats = json.loads((tmp_path / "o/stats.json").read_text())
    assert stats["per_cluster_counts"] == [0, 0, 0] and stats["event_count"] == 0
    for i in range(3):
        frame = decode_ppm((tmp_path / f"o/subframe_{i:03d}.ppm").read_bytes())
        assert frame.pixels.shape == (30, 40, 3) and (frame.pixels == 255).all()


def test_uniform_events_split_evenly(tmp_path):
    src = tmp_path / "ev.csv"
    src.write_text("t,x,y,p\n" + "".join(f"{t},1,2,1\n" for t in range(300)))
    out = tmp_path / "o"
    assert cli.main(["split", "--input", str(src), "--out", str(out), "--start-us", "0",
                     "--end-us", "300", *DIMS]) == 0
    stats = json.loads((out / "stats.json").read_text())
    assert stats["per_cluster_counts"] == [100, 100, 100]
    assert stats["boundaries"] == [0, 100, 200, 300] and stats["dropped"] == 0


def test_counts_additive(tmp_path, rng):
    src = tmp_path / "ev.bin"
    _write_events(src, rng, 2000)
    out = tmp_path / "o"
    assert cli.main(["split", "--input", str(src), "--out", str(out), "--n", "5",
                     "--write-counts", *DIMS]) == 0
    doc = json.loads((out / "counts.json").read_text())
    assert len(doc["subframes"]) == 5
    np.testing.assert_array_equal(np.sum(doc["subframes"], axis=0), doc["single_frame"])


def test_tied_projections_on_identical_subframes(tmp_path):
    src = tmp_path / "ev.csv"
    # the same spatial pattern in each of three 100 us windows
    rows = [f"{base + k},{(7 * k) % 40},{(3 * k) % 30},{1 if k % 3 else -1}\n"
            for base in (0, 100, 200) for k in range(50)]
    src.write_text("".join(rows))
    out = tmp_path / "o"
    assert cli.main(["stme", "--input", str(src), "--out", str(out), "--start-us", "0",
                     "--end-us", "300", "--cell", "8", "--channels", "4",
                     "--tie-projections", *DIMS]) == 0
    feats = json.loads((out / "features.json").read_text())
    assert [p["concat_half_diff_norm"] for p in feats["pairs"]] == [0.0, 0.0]


def test_stme_outputs_and_determinism(tmp_path, rng):
    src = tmp_path / "ev.csv"
    _write_events(src, rng, 1500)
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert cli.main(["stme", "--input", str(src), "--out", str(out), "--seed", "4",
                         "--cell", "10", *DIMS]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]
    assert set(outs[0]) == {"features.json", "sparsity_stats.json", "params.json"}
    feats = json.loads(outs[0]["features.json"])
    assert feats["grid"] == [3, 4] and feats["channels"] == 8 and len(feats["pairs"]) == 2
    stats = json.loads(outs[0]["sparsity_stats.json"])
    assert stats["pairs"][0]["self"]["kept_per_row"] == [6, 8, 9, 10]
    for pair in stats["pairs"]:
        for branch in ("self", "cross"):
            assert all(0 < m <= 1 + 1e-12 for m in pair[branch]["retained_mass"])


def test_params_file_reproduces_run(tmp_path, rng):
    src = tmp_path / "ev.csv"
    _write_events(src, rng, 800)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["stme", "--input", str(src), "--out", str(a), "--seed", "9",
                     "--cell", "10", *DIMS]) == 0
    assert cli.main(["stme", "--input", str(src), "--out", str(b), "--seed", "1",
                     "--cell", "10", "--params", str(a / "params.json"), *DIMS]) == 0
    fa = json.loads((a / "features.json").read_text())
    fb = json.loads((b / "features.json").read_text())
    assert fa["pairs"] == fb["pairs"]


def test_thread_count_does_not_change_output(tmp_path, rng, monkeypatch):
    src = tmp_path / "ev.csv"
    _write_events(src, rng, 1000)
    outs = []
    for threads in ("1", "4"):
        monkeypatch.setenv("EVKIT_THREADS", threads)
        out = tmp_path / f"t{threads}"
        assert cli.main(["stme", "--input", str(src), "--out", str(out), "--n", "4",
                         "--cell", "10", *DIMS]) == 0
        outs.append((out / "features.json").read_bytes())
    assert outs[0] == outs[1]


def test_bad_thread_env(tmp_path, monkeypatch, capsys):
    src = tmp_path / "ev.csv"
    src.write_text("0,1,1,1\n")
    monkeypatch.setenv("EVKIT_THREADS", "zero")
    assert cli.main(["split", "--input", str(src), "--out", str(tmp_path / "o"), *DIMS]) == 2
    assert "EVKIT_THREADS" in capsys.readouterr().err


def test_stme_needs_two_subframes(tmp_path, capsys):
    src = tmp_path / "ev.csv"
    src.write_text("0,1,1,1\n5,2,2,-1\n")
    code = cli.main(["stme", "--input", str(src), "--out", str(tmp_path / "o"), "--n", "1",
                     *DIMS])
    assert code == 2 and "at least 2" in capsys.readouterr().err


@pytest.mark.parametrize("text,needle", [
    ("t,x,y,p\n0,1,1,1\n5,99,1,1\n", ":3:"),
    ("0,1,1,1\n1,1,1,0\n", ":2:"),
    ("0,1,1\n", ":1:"),
])
def test_parse_errors_name_file_and_line(tmp_path, capsys, text, needle):
    src = tmp_path / "bad.csv"
    src.write_text(text)
    assert cli.main(["split", "--input", str(src), "--out", str(tmp_path / "o"), *DIMS]) == 2
    err = capsys.readouterr().err
    assert "bad.csv" + needle in err


def test_missing_input_and_unknown_suffix(tmp_path):
    assert cli.main(["split", "--input", str(tmp_path / "nope.csv"), "--out",
                     str(tmp_path / "o")]) == 2
    odd = tmp_path / "ev.txt"
    odd.write_text("0,1,1,1\n")
    assert cli.main(["split", "--input", str(odd), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["split", "--input", str(odd), "--format", "csv", "--out",
                     str(tmp_path / "o")]) == 0


def test_fraction_list_parsing():
    assert cli._number_list("0.5, 2/3,1") == (0.5, 2 / 3, 1.0)
    with pytest.raises(Exception):
        cli._number_list("half")


def test_selftest_quick_subset(capsys):
    assert cli.main(["selftest", "--quick", "--only", "AC1", "AC3", "AC9"]) == 0
    out = capsys.readouterr().out
    assert "AC1" in out and "AC9" in out and "FAIL" not in out


def test_selftest_fault_injection():
    # a zero fraction is an invalid config, so the run must not report success
    assert cli.main(["selftest", "--quick", "--only", "AC5", "--esa-fractions", "0"]) != 0


def test_module_entry_point(tmp_path):
    src = tmp_path / "ev.csv"
    src.write_text("0,1,1,1\n10,2,2,-1\n20,3,3,1\n")
    proc = subprocess.run([sys.executable, "-m", "evkit", "split", "--input", str(src),
                           "--out", str(tmp_path / "o"), *DIMS],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert json.loads((tmp_path / "o/stats.json").read_text())["event_count"] == 3
