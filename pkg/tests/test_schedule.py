import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffad.errors import ConfigError, ContractError
from diffad.schedule import (
    CLEAN,
    ScheduleConfig,
    alpha_bar_at,
    build_plan,
    build_schedule,
)

# cumulative-product oracle outputs for the default scaled-linear config,
# computed by a standalone script before the implementation existed
SD21_ALPHA_BAR_0 = 0.99915
SD21_ALPHA_BAR_999 = 0.004660098513077238


def test_two_step_linear_cumprod():
    sch = build_schedule(ScheduleConfig(num_base_steps=2, beta_start=0.1, beta_end=0.2, spacing="linear"))
    np.testing.assert_allclose(sch.betas, [0.1, 0.2], atol=1e-15)
    np.testing.assert_allclose(sch.alpha_bars, [0.9, 0.72], atol=1e-15)


def test_constant_beta_geometric_decay():
    sch = build_schedule(ScheduleConfig(num_base_steps=3, beta_start=0.5, beta_end=0.5, spacing="linear"))
    np.testing.assert_allclose(sch.alpha_bars, [0.5, 0.25, 0.125], atol=1e-15)


def test_default_config_matches_cumprod_oracle(default_schedule):
    assert default_schedule.alpha_bars[0] == pytest.approx(SD21_ALPHA_BAR_0, abs=1e-12)
    assert default_schedule.alpha_bars[999] == pytest.approx(SD21_ALPHA_BAR_999, abs=1e-12)


def test_alpha_bars_match_direct_product(default_schedule):
    direct = 1.0
    for i in (0, 1, 17, 180, 999):
        direct = np.prod(1.0 - default_schedule.betas[: i + 1])
        assert abs(default_schedule.alpha_bars[i] - direct) < 1e-12


def test_alpha_bars_strictly_decreasing_and_bounded(default_schedule):
    ab = default_schedule.alpha_bars
    assert np.all(np.diff(ab) < 0)
    assert np.all((ab > 0) & (ab < 1))
    snr = ab / (1.0 - ab)
    assert np.all(np.diff(snr) < 0)


@pytest.mark.parametrize(
    "kwargs,field",
    [
        (dict(beta_start=0.0), "beta_start"),
        (dict(beta_start=0.3, beta_end=0.2), "beta_start"),
        (dict(beta_end=1.0), "beta_end"),
        (dict(num_base_steps=0), "num_base_steps"),
        (dict(spacing="cosine"), "spacing"),
    ],
)
def test_build_schedule_rejects_bad_configs(kwargs, field):
    with pytest.raises(ConfigError) as err:
        build_schedule(ScheduleConfig(**kwargs))
    assert field in str(err.value)


def test_plan_leading_spacing():
    plan = build_plan(1000, 50)
    assert plan.base_indices[:3] == (0, 20, 40)
    assert plan.base_indices[-1] == 980
    assert len(plan.base_indices) == 50


def test_plan_small():
    assert build_plan(10, 5).base_indices == (0, 2, 4, 6, 8)


def test_plan_identity():
    plan = build_plan(1000, 1000)
    assert plan.base_indices == tuple(range(1000))


@pytest.mark.parametrize("steps", [0, 1001])
def test_plan_rejects_bad_step_counts(steps):
    with pytest.raises(ConfigError):
        build_plan(1000, steps)


@given(n_base=st.integers(1, 2000), frac=st.floats(0.001, 1.0))
@settings(max_examples=50, deadline=None)
def test_plan_strictly_increasing_and_in_range(n_base, frac):
    n_plan = max(1, int(n_base * frac))
    plan = build_plan(n_base, n_plan)
    idx = plan.base_indices
    assert idx[0] == 0
    assert all(b > a for a, b in zip(idx, idx[1:]))
    assert idx[-1] < n_base
    # deterministic
    assert build_plan(n_base, n_plan).base_indices == idx


def test_alpha_bar_at_clean_is_exactly_one(default_schedule):
    assert alpha_bar_at(default_schedule, CLEAN) == 1.0


def test_alpha_bar_at_base_indices():
    sch = build_schedule(ScheduleConfig(num_base_steps=2, beta_start=0.1, beta_end=0.2, spacing="linear"))
    assert alpha_bar_at(sch, 0) == pytest.approx(0.9, abs=1e-15)
    assert alpha_bar_at(sch, 1) == pytest.approx(0.72, abs=1e-15)


def test_alpha_bar_at_rejects_out_of_range(default_schedule):
    with pytest.raises(ContractError):
        alpha_bar_at(default_schedule, 1000)
    with pytest.raises(ContractError):
        alpha_bar_at(default_schedule, -1)


def test_schedule_config_json_roundtrip():
    cfg = ScheduleConfig()
    parsed = ScheduleConfig.from_json(cfg.to_json())
    assert parsed == cfg
    raw = '{"num_base_steps":1000,"beta_start":0.00085,"beta_end":0.012,"spacing":"scaled_linear"}'
    assert ScheduleConfig.from_json(raw) == cfg
