import numpy as np
import pytest

from wtannld.dynamics import I0_UNIT_PEAK, InhibitionParams, KernelParams, NeuronConfig, Wiring
from wtannld.spikes import PatternTemplate, gen_poisson_template


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_lines(request):
    """Sink for the one-line verdicts printed after the run."""
    return request.config.stash[ACCEPTANCE]


def pattern_from(trains, duration=0.1, label=1):
    """Template from a list of spike-time lists."""
    return PatternTemplate(label, tuple(np.asarray(t, float) for t in trains), duration, tuple(True for _ in trains))


@pytest.fixture
def kernels():
    return KernelParams.from_tau_s(0.02, I0_UNIT_PEAK)


@pytest.fixture
def small_net():
    """Eight neurons, four branches of three synapses, twelve lines, thresholded to fire a handful of times per pattern."""
    rng = np.random.default_rng(11)
    wiring = Wiring.random(8, 4, 3, 12, rng)
    config = NeuronConfig(m=4, k=3, x_thr=1.0, V_thr=60.0)
    return wiring, config


@pytest.fixture
def small_pattern():
    return gen_poisson_template(12, 40.0, 0.2, rng=np.random.default_rng(5))


@pytest.fixture
def inhibition():
    return InhibitionParams.from_tau_s(80.0, 0.02)
