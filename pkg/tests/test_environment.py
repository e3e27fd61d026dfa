import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from oylab.environment import (
    GridError,
    GridSpec,
    bm_value,
    dump,
    generate,
    generate_signs,
    refine,
    replica_seed,
    restore,
    with_levels,
)


def test_grid_validation():
    with pytest.raises(GridError):
        GridSpec(0.0, 1.0, 0.3, 0, 1)  # not an integer number of steps
    with pytest.raises(GridError):
        GridSpec(1.0, 0.0, 0.1, 0, 1)
    with pytest.raises(GridError):
        GridSpec(0.0, 1.0, 0.1, 2, 1)
    with pytest.raises(GridError):
        GridSpec(0.5, 1.5, 0.1, 0, 1)  # 0 not on the grid
    with pytest.raises(GridError):
        GridSpec(-0.05, 1.0, 0.1, 0, 1)
    s = GridSpec(-1.0, 2.0, 0.25, -1, 3)
    assert s.n_steps == 12 and s.anchor == 4 and s.n_levels == 5
    assert s.times[s.anchor] == 0.0


def test_generate_is_deterministic():
    spec = GridSpec(-1.0, 2.0, 0.01, 0, 3)
    a, b = generate(7, spec), generate(7, spec)
    assert np.array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, generate(8, spec).increments)


def test_increments_are_read_only():
    env = generate(1, GridSpec(0.0, 1.0, 0.1, 0, 0))
    with pytest.raises(ValueError):
        env.increments[0, 0] = 1.0


def test_value_at_zero_and_adjacent_increment():
    spec = GridSpec(-2.0, 3.0, 0.05, 1, 2)
    env = generate(3, spec)
    assert bm_value(env, 1, 0.0) == 0.0
    assert bm_value(env, 2, 0.0) == 0.0
    j = spec.index(1.0)
    d = bm_value(env, 1, spec.times[j + 1]) - bm_value(env, 1, spec.times[j])
    assert d == pytest.approx(env.increments[0, j], abs=1e-14)
    assert bm_value(env, 2, 1.0) - bm_value(env, 2, 1.0) == 0.0
    jn = spec.index(-1.0)
    d = bm_value(env, 1, spec.times[jn + 1]) - bm_value(env, 1, spec.times[jn])
    assert d == pytest.approx(env.increments[0, jn], abs=1e-14)


def test_bm_value_errors():
    env = generate(3, GridSpec(0.0, 1.0, 0.1, 0, 1))
    with pytest.raises(IndexError):
        bm_value(env, 0, 0.05)
    with pytest.raises(IndexError):
        bm_value(env, 2, 0.1)
    with pytest.raises(IndexError):
        bm_value(env, 0, 1.1)


def test_increment_variance():
    env = generate(11, GridSpec(0.0, 1000.0, 0.01, 0, 0))
    x = env.increments[0]
    var = x.var(ddof=1)
    se = math.sqrt(2.0 / (x.size - 1)) * 0.01
    assert abs(var - 0.01) <= 3 * se


def test_ks_against_standard_normal():
    env = generate(12, GridSpec(0.0, 1000.0, 0.01, 0, 0))
    assert stats.kstest(env.increments[0] / 0.1, "norm").pvalue > 0.01


def test_levels_uncorrelated():
    env = generate(13, GridSpec(0.0, 1000.0, 0.01, 0, 1))
    r = np.corrcoef(env.increments[0], env.increments[1])[0, 1]
    assert abs(r) <= 3 / math.sqrt(env.increments.shape[1])


def test_uniform_to_normal_matches_scipy():
    # the fused conversion is the scipy inverse normal CDF applied to mid-bin uniforms
    from oylab import _kernels
    from oylab.environment import _raw_words

    raw = _raw_words(5, 0, 0, 0, 1000)
    out = np.empty(1000)
    _kernels.raw_to_normal(raw, 1.0, out)
    u = ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
    assert np.array_equal(out, special.ndtri(u))


def test_level_extension_is_stable():
    spec = GridSpec(-1.0, 2.0, 0.01, 1, 3)
    big = with_levels(spec, 0, 6)
    a, b = generate(21, spec), generate(21, big)
    assert np.array_equal(a.increments, b.increments[1:4])


def test_time_extension_is_stable():
    a = generate(22, GridSpec(-1.0, 2.0, 0.01, 0, 1))
    b = generate(22, GridSpec(-5.0, 7.0, 0.01, 0, 1))
    off = b.spec.index(-1.0)
    assert np.array_equal(a.increments, b.increments[:, off : off + a.spec.n_steps])
    assert np.array_equal(a.paths, b.paths[:, off : off + a.spec.n_steps + 1])


def test_additivity_over_long_path():
    spec = GridSpec(0.0, 10_000.0, 0.01, 0, 0)
    env = generate(23, spec)
    s, u, t = 1.23, 4567.89, 9999.5
    lhs = (bm_value(env, 0, t) - bm_value(env, 0, u)) + (bm_value(env, 0, u) - bm_value(env, 0, s))
    assert abs(lhs - (bm_value(env, 0, t) - bm_value(env, 0, s))) <= 1e-9
    direct = math.fsum(env.increments[0, spec.index(s) : spec.index(t)])
    assert abs(direct - (bm_value(env, 0, t) - bm_value(env, 0, s))) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**64 - 1),
    lo=st.integers(-40, 0),
    hi=st.integers(1, 40),
    level=st.integers(-3, 3),
)
def test_value_depends_only_on_absolute_position(seed, lo, hi, level):
    spec = GridSpec(lo * 0.125, hi * 0.125, 0.125, level, level)
    ref = generate(seed, GridSpec(-5.0, 5.0, 0.125, -3, 3))
    env = generate(seed, spec)
    off = ref.spec.index(spec.t_min)
    row = ref.spec.level_row(level)
    assert np.array_equal(env.increments[0], ref.increments[row, off : off + spec.n_steps])


def test_dump_restore_round_trip(tmp_path):
    env = generate(31, GridSpec(-1.0, 2.0, 0.05, -2, 2))
    p = tmp_path / "env.bin"
    dump(env, p)
    back = restore(p)
    assert back.spec == env.spec and back.seed == env.seed and back.depth == env.depth
    assert np.array_equal(back.increments, env.increments)
    (tmp_path / "bad.bin").write_bytes(b"nonsense" * 20)
    with pytest.raises(GridError):
        restore(tmp_path / "bad.bin")


def test_refine_keeps_coarse_values():
    env = generate(41, GridSpec(-1.0, 3.0, 0.02, 0, 2))
    fine = refine(env)
    assert fine.spec.dt == 0.01
    assert np.allclose(fine.paths[:, ::2], env.paths, atol=1e-12)
    assert np.array_equal(refine(env).increments, fine.increments)


def test_refine_midpoints_have_bridge_variance():
    env = generate(42, GridSpec(0.0, 500.0, 0.02, 0, 0))
    fine = refine(env)
    mid = fine.paths[0, 1::2] - 0.5 * (fine.paths[0, 0:-1:2] + fine.paths[0, 2::2])
    # bridge midpoint deviation has variance dt/4
    var = mid.var(ddof=1)
    se = math.sqrt(2.0 / (mid.size - 1)) * 0.005
    assert abs(var - 0.005) <= 3 * se


def test_sign_environment():
    env = generate_signs(51, GridSpec(0.0, 10.0, 0.01, 0, 1))
    assert np.allclose(np.abs(env.increments), 0.1)
    assert abs(np.mean(env.increments > 0) - 0.5) < 3 * 0.5 / math.sqrt(env.increments.size)
    with pytest.raises(GridError):
        refine(env)


def test_replica_seeds_distinct():
    seeds = {replica_seed(5, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert replica_seed(5, 3) == replica_seed(5, 3)
    assert replica_seed(5, 3) != replica_seed(6, 3)
