import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from meterforecast.synth import SynthConfig, generate_group  # noqa: E402


@pytest.fixture(scope="session")
def small_group():
    """Eight meters, 40 days, seeded."""
    return generate_group(SynthConfig(n_meters=8, n_hours=960, seed=11))


@pytest.fixture(scope="session")
def periodic_group():
    """Noise-free synthetic group without weekly term: exactly 24-periodic apart from weather."""
    return generate_group(SynthConfig(n_meters=5, n_hours=24 * 30, noise_std=0.0,
                                      zero_inflation=0.0, weekly_amplitude=0.0,
                                      temperature_sensitivity=0.0, weather_noise_std=0.0,
                                      seed=2))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
