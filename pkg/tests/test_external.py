"""Wire-protocol tests against scripted stub trainers."""

import sys
import textwrap

import pytest

from madshpo.blackbox import EvaluationRequest, ProcessAdapter, external_evaluate
from madshpo.early_stop import BaselineEnvelope, StoppingMonitor, TrainingHistory
from madshpo.space import preset_config


def make_stub(tmp_path, body, name="stub.py"):
    path = tmp_path / name
    path.write_text(
        "import sys\n"
        + textwrap.dedent(body)
    )
    return ProcessAdapter((sys.executable, "-u", str(path)), line_timeout=20.0)


FIXED_CURVE_STUB = """
    header = sys.stdin.readline().split()
    assert header[0] == "CONFIG"
    curve = [(1, 0.5, 1.2, 0.01), (2, 0.6, 1.0, 0.01), (3, 0.7, 0.9, 0.01)]
    for e, a, l, r in curve:
        print(f"EPOCH {e} ACC {a} LOSS {l} LR {r}", flush=True)
        if sys.stdin.readline().strip() == "STOP":
            break
    print("DONE", flush=True)
"""


class TestExternalEvaluate:
    def test_fixed_three_epoch_curve(self, tmp_path):
        adapter = make_stub(tmp_path, FIXED_CURVE_STUB)
        result = external_evaluate(EvaluationRequest(preset_config("p1"), 200, 1.0, 0), adapter)
        assert not result.failed
        assert result.epochs_used == 3
        assert result.final_val_accuracy == pytest.approx(0.7)
        assert result.history.val_loss == [1.2, 1.0, 0.9]

    def test_header_carries_fidelity_parameters(self, tmp_path):
        echo = """
            header = sys.stdin.readline().split()
            epochs = int(header[header.index("EPOCHS") + 1])
            fraction = float(header[header.index("FRACTION") + 1])
            seed = int(header[header.index("SEED") + 1])
            acc = fraction / 2
            print(f"EPOCH 1 ACC {acc} LOSS 1.0 LR 0.01", flush=True)
            sys.stdin.readline()
            print("DONE", flush=True)
        """
        adapter = make_stub(tmp_path, echo)
        result = external_evaluate(EvaluationRequest(preset_config("p1"), 25, 0.5, 3), adapter)
        assert result.final_val_accuracy == pytest.approx(0.25)
        assert result.wall_cost == pytest.approx(1 * 0.5)

    def test_non_numeric_accuracy_fails(self, tmp_path):
        bad = """
            sys.stdin.readline()
            print("EPOCH 1 ACC oops LOSS 1.0 LR 0.01", flush=True)
            sys.stdin.readline()
            print("DONE", flush=True)
        """
        adapter = make_stub(tmp_path, bad)
        result = external_evaluate(EvaluationRequest(preset_config("p1"), 10, 1.0, 0), adapter)
        assert result.failed
        assert result.final_val_accuracy == 0.0

    def test_monitor_stop_directive_honored(self, tmp_path):
        # stub would emit 10 epochs; a dominating baseline stops it at milestone 5,
        # so epochs_used == 5 proves the STOP directive was sent and obeyed
        ten_epochs = """
            sys.stdin.readline()
            for e in range(1, 11):
                print(f"EPOCH {e} ACC 0.2 LOSS 1.0 LR 0.01", flush=True)
                if sys.stdin.readline().strip() == "STOP":
                    break
            print("DONE", flush=True)
        """
        adapter = make_stub(tmp_path, ten_epochs)
        baseline = TrainingHistory.from_rows((e, 0.99, 0.01, 0.01) for e in range(1, 201))
        monitor = StoppingMonitor("scheduler+baseline", BaselineEnvelope(baseline))
        result = external_evaluate(
            EvaluationRequest(preset_config("p1"), 200, 1.0, 0, monitor), adapter
        )
        assert not result.failed
        assert result.epochs_used == 5
        assert result.stop_reason == "envelope-breach"

    def test_child_crash_mid_curve_fails(self, tmp_path):
        crash = """
            sys.stdin.readline()
            print("EPOCH 1 ACC 0.5 LOSS 1.0 LR 0.01", flush=True)
            sys.stdin.readline()
            sys.exit(3)
        """
        adapter = make_stub(tmp_path, crash)
        result = external_evaluate(EvaluationRequest(preset_config("p1"), 10, 1.0, 0), adapter)
        assert result.failed

    def test_timeout_fails(self, tmp_path):
        sleeper = """
            import time
            sys.stdin.readline()
            time.sleep(30)
        """
        path = tmp_path / "sleeper.py"
        path.write_text("import sys\n" + textwrap.dedent(sleeper))
        adapter = ProcessAdapter((sys.executable, "-u", str(path)), line_timeout=0.5)
        result = external_evaluate(EvaluationRequest(preset_config("p1"), 10, 1.0, 0), adapter)
        assert result.failed

    def test_wrong_epoch_number_fails(self, tmp_path):
        skipper = """
            sys.stdin.readline()
            print("EPOCH 2 ACC 0.5 LOSS 1.0 LR 0.01", flush=True)
            sys.stdin.readline()
            print("DONE", flush=True)
        """
        adapter = make_stub(tmp_path, skipper)
        result = external_evaluate(EvaluationRequest(preset_config("p1"), 10, 1.0, 0), adapter)
        assert result.failed

    def test_missing_command_fails(self):
        adapter = ProcessAdapter(("/nonexistent/trainer",), line_timeout=1.0)
        result = external_evaluate(EvaluationRequest(preset_config("p1"), 10, 1.0, 0), adapter)
        assert result.failed

    def test_from_command_splits_shell_words(self):
        adapter = ProcessAdapter.from_command("python3 -u trainer.py --gpu 0")
        assert adapter.command == ("python3", "-u", "trainer.py", "--gpu", "0")
