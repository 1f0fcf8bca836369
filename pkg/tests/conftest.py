import numpy as np
import pytest

from lungsound.ingest import encode_wav

# Recording counts per diagnosis of the public ICBHI 2017 release and the
# number of patients behind them (126 in total).
ICBHI_RECORDINGS = {
    "COPD": 793, "pneumonia": 37, "healthy": 35, "URTI": 23,
    "bronchiectasis": 16, "bronchiolitis": 13, "LRTI": 2, "asthma": 1,
}
ICBHI_PATIENTS = {
    "COPD": 64, "pneumonia": 6, "healthy": 26, "URTI": 14,
    "bronchiectasis": 7, "bronchiolitis": 6, "LRTI": 2, "asthma": 1,
}
LOCATIONS = ("Tc", "Al", "Ar", "Pl", "Pr", "Ll", "Lr")


def mimic_icbhi(audio_dir, recordings=ICBHI_RECORDINGS, patients=ICBHI_PATIENTS, payload=b""):
    """Lay out ICBHI-style file names (and a diagnosis table) with the corpus's counts.

    Recordings of a diagnosis are dealt round-robin over its patients.
    Returns the diagnosis table text.
    """
    audio_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    pid = 101
    for diag, n in recordings.items():
        ids = list(range(pid, pid + patients[diag]))
        pid += patients[diag]
        rows += [f"{p}\t{diag}" for p in ids]
        for i in range(n):
            p = ids[i % len(ids)]
            name = f"{p}_{i // len(ids) + 1}b{i % 3 + 1}_{LOCATIONS[i % 7]}_{'sc' if i % 2 else 'mc'}_Meditron.wav"
            (audio_dir / name).write_bytes(payload)
    return "\n".join(rows) + "\n"


def tone(freq, seconds=1.0, rate=22050, amp=0.5, phase=0.0):
    t = np.arange(int(seconds * rate)) / rate
    return amp * np.sin(2 * np.pi * freq * t + phase)


def write_tone_corpus(audio_dir, layout, rate=8000, seconds=0.6):
    """``layout``: list of (patient_id, diagnosis, n_recordings); each file is a distinct tone."""
    audio_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    k = 0
    for pid, diag, n in layout:
        rows.append(f"{pid},{diag}")
        for i in range(n):
            samples = tone(300 + 40 * k, seconds, rate, amp=0.3 + 0.05 * (k % 5))
            (audio_dir / f"{pid}_{i + 1}b1_Al_sc_Meditron.wav").write_bytes(encode_wav(samples, rate))
            k += 1
    return "\n".join(rows) + "\n"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
