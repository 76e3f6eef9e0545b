"""Command-line surface: exit codes, echoed configuration, output
formats, and byte-stable stdout."""

import numpy as np
import pytest

from drca.cli import EXIT_BAD_INPUT, EXIT_CHECK_FAILED, EXIT_INSUFFICIENT, EXIT_OK, main
from drca.flops import compare, count_flops
from drca.model import ModelConfig, init_params, named_params
from drca.numerics import F32, RandomStream
from drca.tensor_io import read_tnsr, save_tensor_dir, write_tnsr


@pytest.fixture(autouse=True)
def _no_ambient_seed(monkeypatch):
    monkeypatch.delenv("DRCA_SEED", raising=False)


# --- rank ----------------------------------------------------------------

def test_rank_orders_scores_and_writes_matrix(tmp_path, capsys):
    scores_path = tmp_path / "scores.tnsr"
    out_path = tmp_path / "soft.tnsr"
    write_tnsr(scores_path, np.array([3.0, 1.0, 2.0], F32))
    code = main(["rank", str(scores_path), str(out_path),
                 "--n-samples", "400", "--seed", "5"])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "# resolved configuration" in out
    assert "sigma = 0.050000" in out and "seed = 5" in out
    assert "order: 0 2 1" in out
    assert f"wrote: {out_path}" in out
    soft = read_tnsr(out_path)
    assert soft.shape == (3, 3)
    np.testing.assert_allclose(soft.sum(axis=0), 1.0, atol=1e-5)
    np.testing.assert_allclose(soft.sum(axis=1), 1.0, atol=1e-5)


def test_rank_rejects_matrix_scores(tmp_path, capsys):
    scores_path = tmp_path / "scores.tnsr"
    write_tnsr(scores_path, np.zeros((2, 2), F32))
    code = main(["rank", str(scores_path), str(tmp_path / "out.tnsr")])
    assert code == EXIT_BAD_INPUT
    assert "error:" in capsys.readouterr().err


def test_rank_missing_input_file(tmp_path, capsys):
    code = main(["rank", str(tmp_path / "absent.tnsr"), str(tmp_path / "out.tnsr")])
    assert code == EXIT_BAD_INPUT
    assert "not found" in capsys.readouterr().err


# --- grad-check ------------------------------------------------------------

def test_grad_check_passes_at_adequate_sampling(capsys):
    code = main(["grad-check", "--seed", "20260821", "--n-samples", "100000"])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "closed-form (T=2): PASS" in out
    assert "finite differences (T=4): PASS" in out
    assert out.rstrip().endswith("grad-check: PASS")


def test_grad_check_refuses_underpowered_runs(capsys):
    code = main(["grad-check", "--n-samples", "500"])
    captured = capsys.readouterr()
    assert code == EXIT_INSUFFICIENT
    assert "insufficient statistical power" in captured.err
    assert "grad-check:" not in captured.out


# --- forward ---------------------------------------------------------------

def test_forward_toy_prints_and_writes(tmp_path, capsys):
    out_path = tmp_path / "logits.tnsr"
    code = main(["forward", "toy", "--seed", "3", "--out", str(out_path)])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "variant = toy" in out and "seed = 3" in out and "mode = infer" in out
    scores_line = next(l for l in out.splitlines() if l.startswith("scores:"))
    assert len(scores_line.split()) == 1 + 8
    times_line = next(l for l in out.splitlines() if l.startswith("selected_times:"))
    assert len(times_line.split()) == 1 + 4
    assert "output_norm = " in out
    assert read_tnsr(out_path).shape == (5,)


def test_forward_explicit_video_matches_seeded_default(tmp_path, capsys):
    main(["forward", "toy", "--seed", "3"])
    auto = capsys.readouterr().out
    video_path = tmp_path / "video.tnsr"
    write_tnsr(video_path, RandomStream(4).gaussian((8, 64, 64, 3)))
    code = main(["forward", "toy", "--seed", "3", "--video", str(video_path)])
    assert code == EXIT_OK
    assert capsys.readouterr().out == auto


def test_forward_stdout_is_deterministic(capsys):
    main(["forward", "toy", "--seed", "9"])
    first = capsys.readouterr().out
    main(["forward", "toy", "--seed", "9"])
    assert capsys.readouterr().out == first


def test_forward_baseline_flag(capsys):
    code = main(["forward", "toy", "--seed", "2", "--baseline"])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "selected_times:" in out and "output_norm = " in out


def test_forward_train_mode_prints_soft_column(capsys):
    code = main(["forward", "toy", "--seed", "2", "--set", "mode=train",
                 "--set", "n_samples=100"])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "mode = train" in out
    soft_line = next(l for l in out.splitlines() if l.startswith("soft_top_column:"))
    assert len(soft_line.split()) == 1 + 8


def test_forward_saved_params_reproduce_seeded_init(tmp_path, capsys):
    main(["forward", "toy", "--seed", "5"])
    seeded = capsys.readouterr().out
    params_dir = tmp_path / "weights"
    save_tensor_dir(params_dir, named_params(init_params(ModelConfig.toy(), seed=5)))
    code = main(["forward", "toy", "--seed", "5", "--params", str(params_dir)])
    assert code == EXIT_OK
    assert capsys.readouterr().out == seeded


def test_forward_rejects_wrong_video_shape(tmp_path, capsys):
    video_path = tmp_path / "short.tnsr"
    write_tnsr(video_path, np.zeros((4, 64, 64, 3), F32))
    code = main(["forward", "toy", "--video", str(video_path)])
    assert code == EXIT_BAD_INPUT
    assert "video shape" in capsys.readouterr().err


# --- configuration resolution ----------------------------------------------

def test_config_file_with_comments_and_overrides(tmp_path, capsys):
    cfg_path = tmp_path / "run.conf"
    cfg_path.write_text(
        "variant = toy\n"
        "\n"
        "sigma = 0.1  # smoothing level\n"
        "num_classes = 7\n"
    )
    out_path = tmp_path / "out.tnsr"
    code = main(["forward", str(cfg_path), "--seed", "1", "--out", str(out_path)])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "sigma = 0.100000" in out and "num_classes = 7" in out
    assert read_tnsr(out_path).shape == (7,)


def test_set_overrides_config_file(tmp_path, capsys):
    cfg_path = tmp_path / "run.conf"
    cfg_path.write_text("variant = toy\nnum_classes = 7\n")
    code = main(["forward", str(cfg_path), "--seed", "1",
                 "--set", "num_classes=9"])
    out = capsys.readouterr().out
    assert code == EXIT_OK and "num_classes = 9" in out


@pytest.mark.parametrize("text,message", [
    ("variant = toy\nvariant = S\n", "duplicate key"),
    ("variant = toy\nwibble = 3\n", "unknown configuration keys"),
    ("variant = toy\nframes\n", "expected key = value"),
    ("variant = toy\nframes = eight\n", "needs a int"),
    ("variant = nosuch\n", "unknown variant"),
])
def test_config_file_errors(tmp_path, capsys, text, message):
    cfg_path = tmp_path / "bad.conf"
    cfg_path.write_text(text)
    code = main(["forward", str(cfg_path)])
    assert code == EXIT_BAD_INPUT
    assert message in capsys.readouterr().err


def test_missing_config_file_is_an_error(tmp_path, capsys):
    code = main(["forward", str(tmp_path / "absent.conf")])
    assert code == EXIT_BAD_INPUT
    assert "does not exist" in capsys.readouterr().err


def test_env_seed_is_used_and_echoed(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("DRCA_SEED", "11")
    scores_path = tmp_path / "scores.tnsr"
    write_tnsr(scores_path, np.array([1.0, 2.0], F32))
    code = main(["rank", str(scores_path), str(tmp_path / "out.tnsr"),
                 "--n-samples", "50"])
    out = capsys.readouterr().out
    assert code == EXIT_OK and "seed = 11" in out


def test_env_seed_must_be_an_integer(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("DRCA_SEED", "soon")
    scores_path = tmp_path / "scores.tnsr"
    write_tnsr(scores_path, np.array([1.0, 2.0], F32))
    code = main(["rank", str(scores_path), str(tmp_path / "out.tnsr")])
    assert code == EXIT_BAD_INPUT
    assert "DRCA_SEED" in capsys.readouterr().err


def test_explicit_seed_beats_env_seed(capsys, monkeypatch):
    monkeypatch.setenv("DRCA_SEED", "11")
    main(["forward", "toy", "--seed", "3"])
    assert "seed = 3" in capsys.readouterr().out


# --- flops -------------------------------------------------------------------

def test_flops_report_render(capsys):
    code = main(["flops", "toy"])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert out.startswith("flop report: DRCA-toy-K4")
    assert "7,146,925 flops" in out


def test_flops_machine_output_sums_to_total(capsys):
    code = main(["flops", "toy", "--machine"])
    lines = capsys.readouterr().out.strip().splitlines()
    assert code == EXIT_OK
    assert lines[-1] == "total\tall\t7146925"
    body = [int(line.split("\t")[2]) for line in lines[:-1]]
    assert sum(body) == 7146925


def test_flops_against_builtin_baseline(capsys):
    code = main(["flops", "DRCA-S-K4", "baseline"])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    ratio_line = next(l for l in out.splitlines() if l.startswith("ratio = "))
    expected = compare(ModelConfig.from_name("DRCA-S-K4")).ratio
    assert float(ratio_line.split(" = ")[1]) == pytest.approx(expected, abs=5e-5)


def test_flops_against_explicit_reference(capsys):
    code = main(["flops", "DRCA-S-K4", "DRCA-S-K8"])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    a = count_flops(ModelConfig.from_name("DRCA-S-K4")).total
    b = count_flops(ModelConfig.from_name("DRCA-S-K8")).total
    ratio_line = next(l for l in out.splitlines() if l.startswith("ratio = "))
    assert float(ratio_line.split(" = ")[1]) == pytest.approx(a / b, abs=5e-5)


def test_flops_instrument_gap_is_zero(capsys):
    code = main(["flops", "toy", "--instrument"])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "instrumented = 7146925 flops (analytic 7146925, gap 0.000%)" in out


# --- toy-train ----------------------------------------------------------------

def test_toy_train_writes_trace(tmp_path, capsys):
    trace_path = tmp_path / "trace.csv"
    code = main(["toy-train", "--videos", "4", "--holdout", "2", "--frames", "4",
                 "--salient", "1", "--steps", "2", "--n-samples", "30",
                 "--seed", "7", "--out", str(trace_path)])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "lr = 0.010000" in out and "init_scale = 0.100000" in out
    assert "initial: loss=" in out and "final: loss=" in out
    lines = trace_path.read_text().splitlines()
    assert lines[0] == "step,loss,accuracy"
    assert len(lines) == 1 + 3  # initial row plus one per step
    assert lines[1].startswith("0,")


# --- selftest -------------------------------------------------------------------

def test_selftest_passes(capsys):
    code = main(["selftest"])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert out.rstrip().endswith("selftest: PASS")
    assert "suite numerics:" in out and "suite model+flops:" in out


def test_selftest_detects_injected_fault(capsys):
    code = main(["selftest", "--inject-softmax-fault"])
    captured = capsys.readouterr()
    assert code == EXIT_CHECK_FAILED
    assert captured.out.rstrip().endswith("selftest: FAIL")
    # the fault must not leak into later runs
    assert main(["selftest"]) == EXIT_OK
