import csv
import math
from dataclasses import replace
from decimal import Decimal

import pytest

from sonswarm import harness
from sonswarm.cli import main
from sonswarm.errors import EmptyMetrics, InvalidCount
from sonswarm.harness import (
    PLOT_COLUMNS,
    EndpointLlm,
    MockLlm,
    TrialMetrics,
    emit_plot_data,
    metrics_csv,
    mixed_modes,
    parse_llm,
    run_batch,
    run_trial,
    summarize,
    write_trial,
)
from sonswarm.llm import mock_llm
from sonswarm.scenario import demo_scenario, without_obstacles


@pytest.fixture(scope="module")
def demo_ex1():
    return run_trial(demo_scenario(), MockLlm("example1"), seed=1)


def test_demo_example1_phases(demo_ex1):
    m = demo_ex1.metrics
    m.check_invariants()
    assert m.success and m.num_requests >= 1
    assert m.t_first_obstacle <= m.t_request < m.t_code_applied <= m.t_converged <= m.t_complete
    by_tick = {}
    for r in demo_ex1.trace:
        by_tick.setdefault(r["tick"], []).append(r)
    ground = set(demo_scenario().ground_ids)
    # phase 1: some ground robot is blocked before the request goes out
    assert any(r["blocked"] for t in range(m.t_first_obstacle, m.t_request + 1) for r in by_tick[t] if r["id"] in ground)
    # every robot runs version 0 until the brain applies the reply
    assert all(r["program_version"] == 0 for t in range(m.t_code_applied) for r in by_tick[t])
    assert all(r["program_version"] >= 1 for r in by_tick[m.t_converged])
    assert m.t_converged - m.t_code_applied == max(r["depth"] for r in by_tick[0])


def test_phase_telescoping(demo_ex1):
    m = demo_ex1.metrics
    total = sum(demo_ex1.metrics.phase_seconds().values())
    assert total == (m.t_complete - m.t_first_obstacle) * Decimal("0.1")


def test_safety_clamp_in_trace(demo_ex1):
    specs = demo_scenario().specs
    for r in demo_ex1.trace:
        s = specs[r["id"]]
        assert math.hypot(r["linear"], r["lateral"]) <= s.v_max + 1e-12
        assert abs(r["angular"]) <= s.w_max
        if s.is_ground:
            assert r["linear"] >= 0 and r["lateral"] == 0


def test_conversation_log(demo_ex1):
    conv = demo_ex1.conversation
    assert [c["role"] for c in conv[:3]] == ["user", "user", "assistant"]
    assert all(set(c) == {"trial", "tick", "role", "content"} for c in conv)
    assert conv[1]["tick"] == demo_ex1.metrics.t_request
    assert conv[2]["tick"] == demo_ex1.metrics.t_code_applied
    assert conv[2]["content"] == mock_llm(None, "example1")


def test_no_obstacles_no_requests():
    m = run_trial(without_obstacles(demo_scenario()), MockLlm("example1"), seed=1, record_trace=False).metrics
    assert m.success and m.num_requests == 0
    assert m.t_request is None and m.t_first_obstacle is None and m.t_code_applied is None
    assert all(v is None for k, v in m.phase_seconds().items() if k != "phase4")


def test_unusable_reply_cools_down_and_retries(monkeypatch):
    replies = iter(["I am not sure what to do."])

    def fake_send(config, conv, client=None, events=None):
        text = next(replies, mock_llm(None, "example1"))
        conv.append("assistant", text)
        return text

    monkeypatch.setattr(harness, "send_chat", fake_send)
    res = run_trial(demo_scenario(), EndpointLlm(), seed=2, record_trace=False)
    m = res.metrics
    assert m.success and m.num_requests >= 2 and m.mode == "endpoint"
    bad = [e for e in res.events if e["event"] == "llm_reply_unusable"]
    assert len(bad) == 1 and "NoCodeBlock" in bad[0]["detail"]
    ticks = [c["tick"] for c in res.conversation if c["role"] == "user"]
    assert ticks[2] - bad[0]["tick"] >= demo_scenario().cooldown


def test_parse_llm():
    assert parse_llm("mock:faulty") == MockLlm("faulty")
    assert parse_llm("mock:mixed") == MockLlm("mixed")
    assert isinstance(parse_llm("endpoint"), EndpointLlm)
    for bad in ("mock:random", "openai", ""):
        with pytest.raises(ValueError):
            parse_llm(bad)
    with pytest.raises(ValueError):
        run_trial(demo_scenario(), MockLlm("mixed"))


def test_mixed_modes():
    modes = mixed_modes(20, 0)
    assert modes.count("faulty") == 3 and modes.count("alternate") == 17
    assert modes == mixed_modes(20, 0) and modes != mixed_modes(20, 1)
    assert mixed_modes(1, 0) == ["alternate"]


def sample_metrics():
    ok = TrialMetrics(0, 10, "example1", 0.1, True, 1, 5, 56, 66, 68, 300, 300)
    fast = TrialMetrics(1, 11, "example2", 0.1, True, 1, 5, 56, 66, 67, 100, 100)
    bad = TrialMetrics(2, 12, "faulty", 0.1, False, 9, 5, 56, 66, 68, None, 12000)
    return [ok, fast, bad]


def test_summary_single_trial_is_its_metrics():
    m = sample_metrics()[0]
    text = summarize([m])
    assert "success_rate = 1.0" in text
    assert "phase1_s: n=1 min=5.1 q1=5.1 median=5.1 q3=5.1 max=5.1" in text
    assert "phase4_s: n=1 min=23.2 q1=23.2 median=23.2 q3=23.2 max=23.2" in text


def test_summary_counts_failures():
    text = summarize(sample_metrics())
    assert "success_rate = 0.6666666666666666" in text
    assert "phase4_s: n=2" in text and "requests = 11" in text


def test_invalid_count():
    with pytest.raises(InvalidCount):
        run_batch(demo_scenario(), MockLlm("example1"), 0, 0)


def test_batch_is_reproducible(tmp_path):
    s = without_obstacles(replace(demo_scenario(), finish_line_x=1.0))
    a, ma = run_batch(s, MockLlm("alternate"), 3, 7, tmp_path / "a")
    b, mb = run_batch(s, MockLlm("alternate"), 3, 7, tmp_path / "b", workers=2)
    assert a == b
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert [m.seed for m in ma] == [7, 8, 9]


def write_metrics(path, rows):
    path.write_text(metrics_csv(rows), encoding="utf-8")
    return path


def test_plot_rows(tmp_path):
    src = write_metrics(tmp_path / "metrics.csv", sample_metrics())
    rows = emit_plot_data(src, out=tmp_path / "plot.csv")
    assert [r["trial_id"] for r in rows] == ["1", "0", "2"]
    assert [r["failed"] for r in rows] == ["0", "0", "1"]
    assert rows[2]["phase4_s"] == ""
    for r in rows[:2]:
        parts = [Decimal(r[f"phase{i}_s"]) for i in range(1, 5)]
        assert all(p >= 0 for p in parts) and sum(parts) == Decimal(r["total_s"])
    with open(tmp_path / "plot.csv", newline="") as fh:
        assert list(csv.DictReader(fh)) == rows
    assert list(rows[0]) == PLOT_COLUMNS


def test_plot_single_success_telescopes(tmp_path):
    m = sample_metrics()[0]
    (row,) = emit_plot_data(write_metrics(tmp_path / "m.csv", [m]))
    assert Decimal(row["total_s"]) == (m.t_complete - m.t_first_obstacle) * Decimal("0.1")


def test_plot_empty(tmp_path):
    with pytest.raises(EmptyMetrics):
        emit_plot_data(write_metrics(tmp_path / "m.csv", []))


def test_plot_svg(tmp_path):
    pytest.importorskip("matplotlib")
    src = write_metrics(tmp_path / "metrics.csv", sample_metrics())
    assert main(["plot", "--metrics", str(src), "--out", str(tmp_path / "f.svg")]) == 0
    assert (tmp_path / "f.svg").read_text().lstrip().startswith("<?xml")


def test_write_trial_files(tmp_path, demo_ex1):
    write_trial(demo_ex1, tmp_path)
    for name in ("trace.jsonl", "conversation.jsonl", "events.jsonl", "metrics.csv", "summary.txt"):
        assert (tmp_path / name).exists()
    lines = (tmp_path / "trace.jsonl").read_text().splitlines()
    assert len(lines) == len(demo_ex1.trace)


def test_cli_run_and_errors(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--scenario", "demo", "--llm", "mock:example2", "--seed", "3", "--out", str(out)]) == 0
    assert "success_rate = 1.0" in capsys.readouterr().out
    assert (out / "metrics.csv").read_text().splitlines()[1].split(",")[:3] == ["0", "3", "example2"]
    assert main(["run", "--scenario", "demo", "--llm", "mock:nope"]) == 2
    assert main(["run", "--scenario", str(tmp_path / "missing.scn"), "--llm", "mock:example1"]) == 2
    bad = tmp_path / "bad.scn"
    bad.write_text("dt = 0.1\n")
    assert main(["run", "--scenario", str(bad), "--llm", "mock:example1"]) == 2
    assert main(["batch", "--scenario", "demo", "--llm", "mock:example1", "--trials", "0", "--out", str(tmp_path)]) == 2
    assert main(["plot", "--metrics", str(tmp_path / "none.csv"), "--out", str(tmp_path / "p.csv")]) == 2
    with pytest.raises(SystemExit):
        main(["run", "--scenario", "demo", "--llm", "mock:example1", "--seed", "-1"])
