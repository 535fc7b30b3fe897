import numpy as np
import pytest

from sylrhythm import synth


@pytest.fixture(scope="session")
def kernel_data():
    """100 noiseless kernel-corpus sentences as (onsets, envelope) pairs."""
    sents, truth = synth.kernel_corpus(100, seed=0)
    return sents, truth, synth.envelope_pairs(sents)


@pytest.fixture(scope="session")
def small_audio_corpus(tmp_path_factory):
    """Three speakers, four short sentences each, rendered to WAV."""
    out = tmp_path_factory.mktemp("corpus3")
    sents, truth = synth.kernel_corpus(12, n_speakers=3, seed=5, dur_range=(1.0, 1.6))
    manifest = synth.write_corpus(out, sents, truth, corpus_id="k3", seed=5)
    return manifest, truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status:4s} {detail}")
