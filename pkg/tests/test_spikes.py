import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wtannld import rng as rngmod
from wtannld.errors import FormatError, ParameterError
from wtannld.spikes import (
    JitterSpec,
    PatternTemplate,
    apply_jitter,
    empirical_rate,
    gen_poisson_template,
    load_patterns,
    make_epoch,
    read_meta,
    save_patterns,
)


def test_mean_count_per_afferent():
    t = gen_poisson_template(1000, 20.0, 0.5, rng=np.random.default_rng(0))
    mean = t.spike_count / t.d
    assert abs(mean - 10.0) / 10.0 < 0.05


def test_empirical_rate_over_long_exposure():
    rng = np.random.default_rng(1)
    ts = [gen_poisson_template(100, 20.0, 10.0, rng=rng) for _ in range(100)]  # 1e5 afferent-seconds
    assert abs(empirical_rate(ts) - 20.0) / 20.0 < 0.02


def test_half_active_leaves_exactly_fifty_empty():
    t = gen_poisson_template(100, 20.0, 0.5, active_fraction=0.5, rng=np.random.default_rng(2))
    assert sum(not a for a in t.active_mask) == 50
    assert all(t.afferents[i].size == 0 for i in range(100) if not t.active_mask[i])


def test_zero_rate_gives_empty_trains():
    t = gen_poisson_template(10, 0.0, 0.5, rng=np.random.default_rng(0))
    assert t.spike_count == 0


@pytest.mark.parametrize("kw", [dict(d=0), dict(rate=-1.0), dict(duration=0.0), dict(active_fraction=0.0)])
def test_generation_rejects_bad_arguments(kw):
    args = dict(d=10, rate=20.0, duration=0.5, active_fraction=1.0)
    args.update(kw)
    with pytest.raises(ParameterError):
        gen_poisson_template(**args, rng=np.random.default_rng(0))


def test_same_seed_same_template():
    a = gen_poisson_template(50, 20.0, 0.5, rng=rngmod.stream(7, "templates"))
    b = gen_poisson_template(50, 20.0, 0.5, rng=rngmod.stream(7, "templates"))
    assert a.same_spikes(b)


def test_template_is_immutable():
    t = gen_poisson_template(5, 50.0, 0.5, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        t.afferents[0][0] = 1.0


def test_template_rejects_spikes_outside_duration():
    with pytest.raises(ParameterError):
        PatternTemplate(1, (np.array([0.6]),), 0.5, (True,))


def test_zero_jitter_is_identity():
    t = gen_poisson_template(20, 20.0, 0.5, rng=np.random.default_rng(3))
    assert apply_jitter(t, JitterSpec(0.0), np.random.default_rng(0)).same_spikes(t)


def test_jitter_clamps_and_keeps_counts():
    t = PatternTemplate(1, (np.array([0.0, 0.001, 0.499]),), 0.5, (True,))
    j = apply_jitter(t, JitterSpec(0.05), np.random.default_rng(4))
    a = j.afferents[0]
    assert a.size == 3
    assert np.all((a >= 0) & (a <= 0.5))
    assert np.all(np.diff(a) >= 0)


@settings(max_examples=40, deadline=None)
@given(sigma=st.floats(0.0, 0.2), seed=st.integers(0, 2**32 - 1))
def test_jitter_stays_inside_pattern(sigma, seed):
    rng = np.random.default_rng(seed)
    t = gen_poisson_template(8, 30.0, 0.3, rng=rng)
    j = apply_jitter(t, JitterSpec(sigma), rng)
    assert j.spike_count == t.spike_count
    for a in j.afferents:
        assert a.size == 0 or (a[0] >= 0 and a[-1] <= 0.3)


def test_negative_jitter_rejected():
    with pytest.raises(ParameterError):
        JitterSpec(-0.001)


def test_epoch_holds_one_pattern_per_class_in_random_order():
    rng = np.random.default_rng(0)
    ts = [gen_poisson_template(10, 20.0, 0.5, class_label=c, rng=rng) for c in (1, 2, 3, 4)]
    orders = {tuple(p.class_label for p in make_epoch(ts, JitterSpec(0.0), rng)) for _ in range(30)}
    assert all(sorted(o) == [1, 2, 3, 4] for o in orders)
    assert len(orders) > 1


def test_epoch_rejects_duplicate_labels():
    rng = np.random.default_rng(0)
    t = gen_poisson_template(10, 20.0, 0.5, rng=rng)
    with pytest.raises(ParameterError):
        make_epoch([t, t], JitterSpec(0.0), rng)


def test_file_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    ts = [gen_poisson_template(30, 20.0, 0.5, 0.5, c, rng) for c in (1, 2)]
    path = tmp_path / "p.csv"
    save_patterns(path, ts, {"seed": 9})
    back = load_patterns(path)
    assert [b.class_label for b in back] == [1, 2]
    for a, b in zip(ts, back):
        assert b.same_spikes(a, atol=1e-9)
    assert read_meta(path)["seed"] == "9"


def test_unsorted_file_is_resorted_with_warning(tmp_path, caplog):
    path = tmp_path / "p.csv"
    path.write_text("# d=2\n# T_p=0.5\nclass_label,afferent_index,time_seconds\n1,0,0.3\n1,0,0.1\n")
    with caplog.at_level(logging.WARNING):
        (t,) = load_patterns(path)
    assert list(t.afferents[0]) == [0.1, 0.3]
    assert "unsorted" in caplog.text


@pytest.mark.parametrize(
    "body, line",
    [
        ("# d=2\n# T_p=0.5\nclass_label,afferent_index,time_seconds\n1,0\n", 4),
        ("# d=2\n# T_p=0.5\nclass_label,afferent_index,time_seconds\n1,0,abc\n", 4),
        ("# d=2\n# T_p=0.5\nwrong,header\n", 3),
    ],
)
def test_malformed_file_reports_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(FormatError) as exc:
        load_patterns(path)
    assert exc.value.line == line


def test_spike_past_duration_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# d=1\n# T_p=0.5\nclass_label,afferent_index,time_seconds\n1,0,0.7\n")
    with pytest.raises(FormatError):
        load_patterns(path)


def test_streams_are_independent_of_draw_order():
    a = rngmod.stream(1, "wiring").random(3)
    rngmod.stream(1, "templates").random(100)
    b = rngmod.stream(1, "wiring").random(3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, rngmod.stream(1, "wiring", 1).random(3))
