import numpy as np
import pytest
from hypothesis import settings

from syncasd.synthgen import SynthConfig, gen_corpus

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def small_counts(sync=6, silent=2, visual=2, audio=2, dubbed=0, split="test"):
    return {split: {"SyncSpeaking": sync, "Silent": silent, "VisualOnly": visual, "AudioOnly": audio, "Dubbed": dubbed}}


@pytest.fixture(scope="session")
def small_corpus():
    cfg = SynthConfig(
        counts={
            "train": {"SyncSpeaking": 8, "Silent": 3, "VisualOnly": 3, "AudioOnly": 3},
            "val": {"SyncSpeaking": 3, "Silent": 1},
            "test": {"SyncSpeaking": 6, "Silent": 2, "VisualOnly": 2, "AudioOnly": 2, "Dubbed": 2},
        },
        T_min=16,
        T_max=28,
        Hv=8,
        Wv=8,
        Ha=5,
        seed=7,
    )
    return gen_corpus(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion_report():
    """Record one ``criterion N: PASS/FAIL ...`` line; echoed again in the terminal summary."""

    def report(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
