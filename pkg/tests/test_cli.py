import numpy as np
import pytest

from lstmp.cells import ArchSpec, ModelParams, init_params
from lstmp.checkpoint import load_checkpoint, save_checkpoint
from lstmp.cli import main
from lstmp.data import SequenceDataset, Utterance, write_dataset
from lstmp.train import read_curve


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def echo_file(tmp_path, capsys):
    path = tmp_path / "echo.seqd"
    code, _, _ = run(capsys, "gen", "delayed-echo", "--out", path, "--n-symbols", 4, "--delay", 2,
                     "--utterances", 40, "--min-len", 8, "--max-len", 20, "--seed", 1)
    assert code == 0
    return path


def train_args(tmp_path, data, name="run", *extra):
    return ["train", f"train_path={data}", f"checkpoint_path={tmp_path / name}.ckpt",
            f"curve_path={tmp_path / name}.csv", "n_c=6", "max_steps=30", "eval_interval=10",
            "output_delay=0", "t_bptt=5", "lanes_per_worker=3", "lr0=0.5", *extra]


class TestGen:
    def test_deterministic_and_stats(self, tmp_path, capsys):
        outs = []
        for name in ("a", "b"):
            code, out, _ = run(capsys, "gen", "delayed-echo", "--out", tmp_path / name,
                               "--utterances", 25, "--min-len", 12, "--max-len", 30, "--seed", 4)
            assert code == 0
            outs.append(out)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
        assert "utterances=25" in outs[0] and "n_i=8" in outs[0] and "n_o=8" in outs[0]

    def test_synthetic_frames(self, tmp_path, capsys):
        code, out, _ = run(capsys, "gen", "synthetic-frames", "--out", tmp_path / "f", "--phones", 5,
                           "--utterances", 10, "--seed", 2)
        assert code == 0
        assert "n_i=40" in out and "n_o=15" in out and "nearest_mean_accuracy=" in out

    def test_missing_required_flag(self, capsys):
        code, _, err = run(capsys, "gen", "delayed-echo", "--utterances", 3)
        assert code == 1
        assert "usage:" in err and "--out" in err

    def test_invalid_parameters(self, tmp_path, capsys):
        code, _, err = run(capsys, "gen", "delayed-echo", "--out", tmp_path / "x", "--delay", 0)
        assert code == 2 and "delay" in err

    def test_unknown_command(self, capsys):
        assert run(capsys, "fly")[0] == 1


class TestTrain:
    def test_same_seed_same_checkpoint(self, tmp_path, capsys, echo_file):
        assert run(capsys, *train_args(tmp_path, echo_file, "a"))[0] == 0
        assert run(capsys, *train_args(tmp_path, echo_file, "b"))[0] == 0
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        assert [r.step for r in read_curve(tmp_path / "a.csv")] == [10, 20, 30]

    def test_prints_normalized_config(self, tmp_path, capsys, echo_file):
        code, out, _ = run(capsys, *train_args(tmp_path, echo_file))
        assert code == 0
        assert "n_c = 6\n" in out and "lr0 = 0.5\n" in out and "steps=30" in out

    def test_config_file_with_overrides(self, tmp_path, capsys, echo_file):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n_c = 6\nmax_steps = 1000\n")
        code, out, _ = run(capsys, "train", "--config", cfg, *train_args(tmp_path, echo_file)[1:])
        assert code == 0 and "max_steps = 30\n" in out

    def test_resume_continues_step_counter(self, tmp_path, capsys, echo_file):
        args = train_args(tmp_path, echo_file)
        assert run(capsys, *args)[0] == 0
        assert load_checkpoint(tmp_path / "run.ckpt")[1] == 30
        assert run(capsys, *args, "--resume", tmp_path / "run.ckpt")[0] == 0
        assert load_checkpoint(tmp_path / "run.ckpt")[1] == 60
        steps = [r.step for r in read_curve(tmp_path / "run.csv")]
        assert steps == [10, 20, 30, 40, 50, 60]

    def test_zero_lr_keeps_initial_params(self, tmp_path, capsys, echo_file):
        assert run(capsys, *train_args(tmp_path, echo_file, "z", "lr0=0", "seed=3"))[0] == 0
        params, _ = load_checkpoint(tmp_path / "z.ckpt")
        assert params.flat.tobytes() == init_params(params.spec, 3).flat.tobytes()

    def test_config_error_before_compute(self, tmp_path, capsys, echo_file):
        code, _, err = run(capsys, *train_args(tmp_path, echo_file, "bad", "momentum=0.9"))
        assert code == 2 and "momentum" in err
        assert not (tmp_path / "bad.ckpt").exists()

    def test_missing_train_path(self, capsys):
        code, _, err = run(capsys, "train", "n_c=4")
        assert code == 2 and "train_path" in err

    def test_resume_spec_mismatch(self, tmp_path, capsys, echo_file):
        save_checkpoint(tmp_path / "other.ckpt", init_params(ArchSpec("LSTM", 4, 9, 4), 0))
        code, _, err = run(capsys, *train_args(tmp_path, echo_file), "--resume", tmp_path / "other.ckpt")
        assert code == 2 and "LSTM_c9" in err

    def test_divergence_exit_code(self, tmp_path, capsys, echo_file):
        bad = init_params(ArchSpec("LSTM", 4, 6, 4), 0)
        bad["W_ym"][...] = np.inf
        save_checkpoint(tmp_path / "bad.ckpt", bad, 5)
        code, _, err = run(capsys, *train_args(tmp_path, echo_file), "--resume", tmp_path / "bad.ckpt")
        assert code == 3 and "diverged at step 6" in err


class TestEval:
    def test_perfect_fit(self, tmp_path, capsys):
        k = 3
        params = ModelParams(ArchSpec("RNN", k, k, k))
        params["W_hx"][...] = 20 * np.eye(k)
        params["b_h"][...] = -10
        params["W_yh"][...] = 10 * np.eye(k)
        save_checkpoint(tmp_path / "copy.ckpt", params)
        symbols = np.array([0, 2, 1, 1, 0])
        write_dataset(SequenceDataset(k, k, [Utterance(np.eye(k)[symbols], symbols)]), tmp_path / "d")
        code, out, _ = run(capsys, "eval", "--checkpoint", tmp_path / "copy.ckpt", "--data", tmp_path / "d")
        assert code == 0
        assert "accuracy=1.000000" in out and "frames=5" in out

    def test_repeatable(self, tmp_path, capsys, echo_file):
        run(capsys, *train_args(tmp_path, echo_file))
        args = ["eval", "--checkpoint", tmp_path / "run.ckpt", "--data", echo_file, "--confusion"]
        first, second = run(capsys, *args), run(capsys, *args)
        assert first[0] == 0 and first == second

    def test_shape_mismatch(self, tmp_path, capsys, echo_file):
        save_checkpoint(tmp_path / "m.ckpt", init_params(ArchSpec("LSTM", 5, 3, 4), 0))
        code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "m.ckpt", "--data", echo_file)
        assert code == 2 and "n_i" in err

    def test_bad_checkpoint(self, tmp_path, capsys, echo_file):
        (tmp_path / "junk").write_bytes(b"not a checkpoint at all")
        code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "junk", "--data", echo_file)
        assert code == 2 and "magic" in err


class TestGradcheck:
    def test_default_run_passes_and_lists_blocks_once(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--seeds", 2)
        assert code == 0
        lines = [line for line in out.splitlines() if "," in line]
        names = [line.split(",")[0] for line in lines]
        assert len(names) == len(set(names))
        for kind, spec in (("RNN", ArchSpec("RNN", 5, 7, 6)), ("LSTM", ArchSpec("LSTM", 5, 7, 6)),
                           ("LSTM_RP", ArchSpec("LSTM_RP", 5, 7, 6, 4)),
                           ("LSTM_RP_NP", ArchSpec("LSTM_RP_NP", 5, 7, 6, 4, 3))):
            expected = {f"{kind}.{n}" for n in ModelParams(spec).names}
            assert expected == {n for n in names if n.split(".")[0] == kind}
        assert all(float(line.split(",")[1]) < 1e-5 for line in lines)

    def test_fault_injection_fails(self, capsys):
        code, _, err = run(capsys, "gradcheck", "--kind", "LSTM", "--seeds", 1, "--inject-fault", "W_fm")
        assert code == 3 and "LSTM.W_fm" in err

    def test_fault_hook_is_hidden(self, capsys):
        with pytest.raises(SystemExit):
            main(["gradcheck", "--help"])
        assert "inject" not in capsys.readouterr().out


class TestParams:
    @pytest.mark.parametrize("argv,count", [
        (["--kind", "LSTM", "--n-i", 40, "--n-c", 512, "--n-o", 126], 1_196_544),
        (["--kind", "LSTM_RP", "--n-i", 40, "--n-c", 1024, "--n-r", 256, "--n-o", 2000], 1_989_632),
        (["--kind", "RNN", "--n-i", 1, "--n-c", 1, "--n-o", 1], 3),
        (["--kind", "RNN", "--n-i", 1, "--n-c", 1, "--n-o", 1, "--include-biases"], 5),
    ])
    def test_counts(self, capsys, argv, count):
        code, out, _ = run(capsys, "params", *argv)
        assert code == 0
        assert f"formula={count}\n" in out and f"instantiated={count}\n" in out

    def test_invalid_spec(self, capsys):
        code, _, err = run(capsys, "params", "--kind", "LSTM_RP", "--n-i", 4, "--n-c", 4, "--n-o", 2)
        assert code == 2 and "n_r" in err


def test_compare_command(tmp_path, capsys, echo_file):
    code, out, _ = run(capsys, "compare", "--train", echo_file, "--budget", 600, "--kinds", "rnn", "lstm",
                       "--frames", 400, "--eval-interval", 10, "--t-bptt", 5, "--lanes", 2,
                       "--table", tmp_path / "t.tsv", "--curve-dir", tmp_path / "curves")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split("\t") == ["architecture", "params", "final_dev_accuracy", "steps",
                                    "wall_clock_sec", "outcome"]
    assert [line.split("\t")[0] for line in lines[1:]] == ["RNN_c20", "LSTM_c9"]
    assert (tmp_path / "t.tsv").read_text() == out
    assert read_curve(tmp_path / "curves" / "LSTM_c9.csv")[-1].frames_seen >= 400
