import csv

import numpy as np
import pytest

from wtannld.dynamics import simulate_pattern
from wtannld.errors import ParameterError
from wtannld.harness import TrialConfig, run_trial
from wtannld.mismatch import (
    FACTORS,
    TRUNCATE_AT,
    DegradationRow,
    MismatchInstance,
    MismatchSpec,
    degradation_configs,
    degradation_experiment,
    sample_mismatch,
    write_degradation_csv,
)
from wtannld.plasticity import FitnessHooks

GEOM = (6, 4, 3, 12)


def test_zero_cv_gives_unit_factors():
    spec = MismatchSpec(0, 0, 0, 0, 0)
    mm = sample_mismatch(spec, GEOM, np.random.default_rng(0))
    for name in ("I0", "tau_s", "cb", "V_thr", "cc"):
        assert np.all(getattr(mm, name) == 1.0)
    assert not mm.varies_synapses


def test_factor_shapes():
    mm = sample_mismatch(MismatchSpec(), GEOM, np.random.default_rng(0))
    assert mm.I0.shape == mm.tau_s.shape == (6, 4, 3)
    assert mm.cb.shape == mm.cc.shape == (6, 4)
    assert mm.V_thr.shape == (6,)
    assert mm.varies_synapses


def test_sampled_spread_matches_cv():
    mm = sample_mismatch(MismatchSpec(), (10_000, 1, 1, 1), np.random.default_rng(4))
    x = mm.I0.ravel()
    assert abs(x.std() / x.mean() - 0.13) <= 0.01
    y = mm.tau_s.ravel()
    assert abs(y.std() / y.mean() - 0.101) <= 0.01


def test_truncation_keeps_factors_positive():
    mm = sample_mismatch(MismatchSpec(cv_I0=2.0), (2000, 1, 1, 1), np.random.default_rng(1))
    assert mm.I0.min() == TRUNCATE_AT


def test_enabled_set_is_selective():
    spec = MismatchSpec().only("tau_s")
    mm = sample_mismatch(spec, GEOM, np.random.default_rng(0))
    assert np.any(mm.tau_s != 1.0)
    for name in ("I0", "cb", "V_thr", "cc"):
        assert np.all(getattr(mm, name) == 1.0)
    # a factor's draw does not depend on which others are enabled
    full = sample_mismatch(MismatchSpec(), GEOM, np.random.default_rng(0))
    assert np.array_equal(full.tau_s, mm.tau_s)


def test_spec_validation():
    with pytest.raises(ParameterError):
        MismatchSpec(enabled={"gain"})
    with pytest.raises(ParameterError):
        MismatchSpec(cv_cb=-0.1)
    assert MismatchSpec().cv("cb") == 0.18
    assert MismatchSpec().only("I0").cv("cb") == 0.0


def test_degradation_configs_are_singles_then_all():
    labels = [label for label, _ in degradation_configs(MismatchSpec())]
    assert labels == list(FACTORS) + ["all"]
    labels = [label for label, _ in degradation_configs(MismatchSpec().only("cb", "cc"))]
    assert labels == ["cb", "cc", "all"]


def _instance(rng, N, m, k, spec=None):
    return sample_mismatch(spec or MismatchSpec(), (N, m, k, 0), rng)


@pytest.mark.parametrize("with_inh", [False, True])
def test_dense_engine_matches_reference_under_mismatch(small_net, kernels, small_pattern, inhibition, with_inh):
    wiring, config = small_net
    mm = _instance(np.random.default_rng(3), wiring.N, wiring.m, wiring.k)
    inh = inhibition if with_inh else None
    c_dense = np.zeros((wiring.N, wiring.m, wiring.d))
    c_ref = np.zeros_like(c_dense)
    a, sa = simulate_pattern(wiring, config, kernels, inh, small_pattern, fitness=c_dense, mismatch=mm, engine="dense")
    b, sb = simulate_pattern(wiring, config, kernels, inh, small_pattern, hooks=FitnessHooks(c_ref, mm.cc), mismatch=mm)
    assert a.n_post > 0
    assert a.same_as(b)
    assert np.allclose(sa.V, sb.V, rtol=1e-6, atol=1e-9)
    assert np.allclose(c_dense, c_ref, rtol=1e-6, atol=1e-9 * np.abs(c_ref).max())


def test_unit_mismatch_is_bit_identical_to_ideal(small_net, kernels, small_pattern, inhibition):
    wiring, config = small_net
    ones = MismatchInstance(
        np.ones((wiring.N, wiring.m, wiring.k)), np.ones((wiring.N, wiring.m, wiring.k)),
        np.ones((wiring.N, wiring.m)), np.ones(wiring.N), np.ones((wiring.N, wiring.m)),
    )
    ca = np.zeros((wiring.N, wiring.m, wiring.d))
    cb = np.zeros_like(ca)
    a, sa = simulate_pattern(wiring, config, kernels, inhibition, small_pattern, fitness=ca)
    b, sb = simulate_pattern(wiring, config, kernels, inhibition, small_pattern, fitness=cb, mismatch=ones)
    assert a.same_as(b)
    assert np.array_equal(sa.V, sb.V)
    assert np.array_equal(ca, cb)


def test_mismatch_changes_behaviour(small_net, kernels, small_pattern, inhibition):
    wiring, config = small_net
    mm = _instance(np.random.default_rng(3), wiring.N, wiring.m, wiring.k, MismatchSpec().only("Vthr"))
    _, ideal = simulate_pattern(wiring, config, kernels, inhibition, small_pattern)
    _, noisy = simulate_pattern(wiring, config, kernels, inhibition, small_pattern, mismatch=mm)
    assert not np.array_equal(ideal.V, noisy.V)


def fast(**kw):
    base = dict(C=2, n_sub=5, max_epochs=6, window=3, cal_trials=20, n_probes=3, seed=8)
    base.update(kw)
    return TrialConfig(**base)


def test_zero_cv_trial_is_identical_to_ideal_trial():
    ideal = run_trial(fast())
    zero = run_trial(fast(mismatch=MismatchSpec(0, 0, 0, 0, 0)))
    assert ideal.cm_trace == zero.cm_trace
    assert ideal.wiring == zero.wiring
    assert ideal.learned == zero.learned and ideal.fp_rate == zero.fp_rate


def test_degradation_experiment_and_csv(tmp_path):
    rows = degradation_experiment(fast(max_epochs=3), MismatchSpec().only("cb", "Vthr"), trials=2)
    assert [r.config_label for r in rows] == ["cb", "Vthr", "all"]
    assert len({r.ideal_pct for r in rows}) == 1
    for r in rows:
        assert r.success_pct in (0.0, 50.0, 100.0)
    path = tmp_path / "mismatch.csv"
    write_degradation_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "config_label,success_pct,ideal_pct"
    first = next(csv.DictReader(lines))
    assert first["success_pct"] == f"{rows[0].success_pct:.2f}"
    with pytest.raises(ParameterError):
        degradation_experiment(fast(), MismatchSpec(), trials=0)


def test_drop_is_ideal_minus_mismatched():
    assert DegradationRow("all", 80.0, 92.0).drop == 12.0
