"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete.
"""

import io
import itertools
import json
import struct
import time

import numpy as np

from mmtrace import (
    AttentionTrace,
    FormatError,
    ImportanceScores,
    ModalityCounts,
    ModalityMass,
    RoleMap,
    TokenRole,
    ToyConfig,
    aei,
    layer_mass,
    mdi,
    prune_topk,
    read_trace,
    run_prune_sweep,
    run_replication_sweep,
    threshold_for_budget,
    validate_trace,
)
from mmtrace.cli import main
from helpers import (
    baseline_fixture,
    random_trace,
    reduced95_fixture,
    trace_to_bytes,
    write_fixture,
)


def report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"ACCEPTANCE {status}: {name}{suffix}")
    assert ok, f"{name}{suffix}"


def test_metric_identities_on_randomized_pairs():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    ok = True
    for _ in range(1000):
        a_text = float(rng.uniform(1e-6, 1.0 - 1e-6))
        mass = ModalityMass(a_text, 1.0 - a_text)
        counts = ModalityCounts(int(rng.integers(1, 100_000)),
                                int(rng.integers(1, 100_000)))
        dom = mdi(mass, counts)
        eff_t = aei(mass, counts, TokenRole.TEXT)
        eff_o = aei(mass, counts, TokenRole.NONTEXT)
        if abs(dom - eff_t / eff_o) > 1e-9 * abs(dom):
            ok = False
        q_t = counts.n_text / (counts.n_text + counts.n_nontext)
        if abs(q_t * eff_t + (1.0 - q_t) * eff_o - 1.0) > 1e-9:
            ok = False
    elapsed = time.perf_counter() - start
    report("metric identities on 1000 random pairs", ok and elapsed < 1.0,
           f"{elapsed:.2f}s")


def test_formula_spot_checks():
    mass, counts = ModalityMass(0.9, 0.1), ModalityCounts(30, 270)
    ok = abs(mdi(mass, counts) - 81.0) < 1e-12
    ok &= abs(aei(mass, counts, TokenRole.TEXT) - 9.0) < 1e-12

    rng = np.random.default_rng(7)
    for _ in range(50):
        n_text = int(rng.integers(1, 60))
        n_nontext = int(rng.integers(1, 60))
        roles = ["text"] * n_text + ["nontext"] * n_nontext
        payload = np.full((1, 1, 1, len(roles)), 0.25, dtype=np.float32)
        trace = AttentionTrace(1, 1, len(roles), 1, RoleMap.from_strings(roles),
                               payload)
        m = layer_mass(trace, 0)
        c = ModalityCounts(n_text, n_nontext)
        ok &= abs(mdi(m, c) - 1.0) < 1e-12
        ok &= abs(aei(m, c, TokenRole.TEXT) - 1.0) < 1e-12
        ok &= abs(aei(m, c, TokenRole.NONTEXT) - 1.0) < 1e-12
    report("formula spot checks (dominance 81, efficiency 9, uniform = 1)", ok)


def _parse_table_mdi(text: str) -> dict:
    values = {}
    for line in text.splitlines():
        parts = line.split()
        if parts and parts[0] in {"early", "middle", "late"}:
            values[parts[0]] = float(parts[1])
    return values


def test_golden_fixture_reproduction(tmp_path, capsys):
    path = write_fixture(baseline_fixture(), tmp_path / "baseline.mmtr")
    assert main(["analyze", path]) == 0
    table = _parse_table_mdi(capsys.readouterr().out)
    ok = (
        abs(table["early"] - 1.58) < 1e-6
        and abs(table["middle"] - 10.23) < 1e-6
        and abs(table["late"] - 17.37) < 1e-6
    )

    other = write_fixture(reduced95_fixture(), tmp_path / "reduced.mmtr")
    assert main(["compare", path, other, "--format", "json"]) == 0
    middle = json.loads(capsys.readouterr().out)["buckets"]["middle"]
    ok &= abs(middle["a"]["mdi"] - 10.23) < 1e-6
    ok &= abs(middle["b"]["mdi"] - 0.86) < 1e-6
    ok &= abs(middle["delta_mdi"] - (0.86 - 10.23)) < 1e-6
    report("golden fixture reproduction (1.58/10.23/17.37; 10.23 -> 0.86)", ok,
           f"early={table['early']:.9f} middle={table['middle']:.9f} "
           f"late={table['late']:.9f}")


def test_pruning_oracle():
    grid = (0.0, 0.25, 0.5, 0.75, 1.0)
    start = time.perf_counter()
    ok = True
    for n in range(1, 9):
        for index, values in enumerate(itertools.product(grid, repeat=n)):
            m = (index % n) + 1
            rate = 0.0 if m >= n else (n - m - 0.5) / n
            kept = prune_topk(ImportanceScores(values), rate).kept
            order = np.lexsort((np.arange(n), -np.asarray(values)))
            if kept != tuple(sorted(int(i) for i in order[:m])):
                ok = False

    rng = np.random.default_rng(99)
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        values = rng.choice(grid, size=n) if rng.random() < 0.5 else rng.random(n)
        fraction = float(rng.uniform(0.0, 0.95))
        budget = int(n * (1.0 - fraction))
        scores = ImportanceScores(values)
        try:
            tau = threshold_for_budget(scores, fraction)
        except Exception:
            if budget == 0 or int((values == values.max()).sum()) > budget:
                continue
            ok = False
            continue
        if int((values >= tau).sum()) > budget:
            ok = False
        below = sorted({v for v in values if v < tau})
        if below and int((values >= below[-1]).sum()) <= budget:
            ok = False
    elapsed = time.perf_counter() - start
    report("pruning oracle (exhaustive top-k, 1000 thresholds)",
           ok and elapsed < 10.0, f"{elapsed:.2f}s")


def test_attention_dilution_direction():
    start = time.perf_counter()
    summary = run_replication_sweep(
        ToyConfig(redundancy=0.9), [1, 5, 10], seeds=range(20)
    ).summary
    elapsed = time.perf_counter() - start
    fraction = summary["fraction_late_mdi_increased"]
    report("attention dilution direction (late MDI up at x10 in >= 90% of seeds)",
           fraction >= 0.9 and elapsed < 120.0,
           f"fraction={fraction:.2f}, {elapsed:.1f}s")


def test_compression_rebalancing_direction():
    start = time.perf_counter()
    summary = run_prune_sweep(
        ToyConfig(), [0.0, 0.75, 0.9], seeds=range(20)
    ).summary
    elapsed = time.perf_counter() - start
    fraction = summary["fraction_late_mdi_rebalanced"]
    report("compression rebalancing direction (|MDI-1| down at r=0.9 in >= 80%)",
           fraction >= 0.8 and elapsed < 120.0,
           f"fraction={fraction:.2f}, {elapsed:.1f}s")


def test_format_round_trip_and_corruption_detection():
    start = time.perf_counter()
    rng = np.random.default_rng(1234)
    ok = True
    for _ in range(100):
        trace = random_trace(rng)
        data = trace_to_bytes(trace)
        again = read_trace(io.BytesIO(data))
        if again != trace or again.payload.tobytes() != trace.payload.tobytes():
            ok = False

    clean = trace_to_bytes(baseline_fixture())
    (header_len,) = struct.unpack("<Q", clean[8:16])
    payload_at = 16 + header_len
    corruptions = {
        "magic": b"QMTR" + clean[4:],
        "version": clean[:4] + struct.pack("<I", 9) + clean[8:],
        "truncated": clean[:-2],
        "trailing": clean + b"\x00",
        "nan": (clean[:payload_at] + struct.pack("<f", float("nan"))
                + clean[payload_at + 4:]),
        "negative": (clean[:payload_at] + struct.pack("<f", -1.0)
                     + clean[payload_at + 4:]),
    }
    for name, data in corruptions.items():
        detected = False
        try:
            trace = read_trace(io.BytesIO(data), validate=False)
            detected = bool(validate_trace(trace))
        except FormatError:
            detected = True
        if not detected:
            ok = False
    elapsed = time.perf_counter() - start
    report("format round-trip (100 traces) and corruption detection",
           ok and elapsed < 10.0, f"{elapsed:.2f}s")


def test_simulation_determinism(tmp_path, capsys):
    paths = [tmp_path / "first.mmtr", tmp_path / "second.mmtr"]
    reports = []
    for path in paths:
        assert main(["simulate", "--seed", "0", "--out", str(path),
                     "--format", "json"]) == 0
        data = json.loads(capsys.readouterr().out)
        data["manifest"].pop("timestamp")
        data["manifest"]["parameters"].pop("out")
        reports.append(data)
    ok = paths[0].read_bytes() == paths[1].read_bytes()
    ok &= reports[0] == reports[1]
    report("simulate --seed 0 determinism (files and reports)", ok)
