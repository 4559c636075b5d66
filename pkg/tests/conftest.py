import datetime as dt

import numpy as np
import pytest

from crosstune.core import Identity, assemble_dataset
from crosstune.simulation import SimConfig, synth_dataset


def make_dataset(rows, attendance, dim=2, m=None):
    """Tiny dataset from ``rows = [(sample_id, event_pos, feature, truth)]``."""
    attendance = np.asarray(attendance, dtype=float)
    m = attendance.shape[1] if m is None else m
    day = dt.date(2024, 1, 1)
    keys = [(day, k, "room") for k in range(attendance.shape[0])]
    idents = [Identity(j, f"p{j}", f"02:00:00:00:00:{j:02x}") for j in range(m)]
    samples = [(sid, keys[k], np.asarray(f, dtype=float), t) for sid, k, f, t in rows]
    return assemble_dataset(idents, dict(zip(keys, attendance)), samples, dim)


@pytest.fixture
def tiny_dataset():
    rows = [
        (0, 0, [1.0, 0.0], 0),
        (1, 0, [0.0, 1.0], 1),
        (2, 1, [1.0, 0.0], 0),
        (3, 2, [0.0, 1.0], 1),
    ]
    return make_dataset(rows, [[1, 1], [1, 0], [0, 1]])


@pytest.fixture(scope="session")
def small_sim():
    cfg = SimConfig(m_poi=3, n_nonpoi=0, dim=8, events=12, attend_prob=0.5, images_per_attendance=(2, 4), seed=3)
    return synth_dataset(cfg)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
