import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

TINY_INI = """
[data]
train_per_class = 30
test_per_class = 10
[arch]
blocks = conv4, conv6
[prune]
calib_batches = 1
[run]
batch_size = 32
eval_repeats = 2
[stage.fp32-train]
epochs = 2
[stage.cat]
epochs = 1
[stage.finetune]
epochs = 1
[stage.ternary]
epochs = 1
[stage.qat]
epochs = 1
[stage.ann]
epochs = 1
"""


@pytest.fixture
def tiny_ini(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY_INI)
    return p


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
