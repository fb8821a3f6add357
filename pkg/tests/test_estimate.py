import math

import numpy as np
import pytest

from reflwalk import estimate, walk
from reflwalk.alpha import make_constant_field, theta


def _counts(up, down, boundary=None):
    up = np.asarray(up, dtype=np.int64)
    down = np.asarray(down, dtype=np.int64)
    boundary = np.zeros_like(up) if boundary is None else np.asarray(boundary, dtype=np.int64)
    return walk.NormCounts(up, down, boundary, up + down, int((up + down).sum()))


def test_exact_counts_give_exact_statistic():
    # P = 0.6 at every norm 1..5
    c = _counts([0, 6000, 6000, 6000, 6000, 6000], [0, 4000, 4000, 4000, 4000, 4000])
    est = estimate.estimate_transition_ratios([c])
    assert est.n_range == (1, 5)
    for n, e in est.per_n.items():
        assert e.index_stat == pytest.approx(n * math.log(1.5), rel=1e-14)
        assert e.stderr == pytest.approx(n / math.sqrt(10000 * 0.24), rel=1e-14)
    w = np.array([1 / n**2 for n in range(1, 6)])
    assert est.psi_hat == pytest.approx(math.log(1.5) * np.dot(w, np.arange(1, 6)) / w.sum(), rel=1e-13)


def test_window_is_the_longest_well_sampled_run():
    up = [0, 2000, 2000, 10, 2000, 2000, 2000, 0]
    est = estimate.estimate_transition_ratios([_counts(up, up)])
    assert est.n_range == (4, 6)
    assert "far from" in est.caveat


def test_not_enough_data():
    with pytest.raises(estimate.InsufficientCountsError):
        estimate.estimate_transition_ratios([_counts([0, 10], [0, 10])])
    with pytest.raises(estimate.InsufficientCountsError):
        estimate.pool([])


def test_readings():
    r = estimate.index_readings(math.exp(0.8))
    assert r == {"log_plus_boundary": pytest.approx(1.8), "kappa": pytest.approx(math.exp(0.8))}


def test_pool_accepts_paths_and_tallies():
    f = theta()
    traj = walk.simulate(f, (0, 1), 200_000, seed=1)
    tally = walk.run_counts(f, 200_000, seed=2)
    pooled = estimate.pool([traj, tally])
    assert pooled.steps == 400_000


def test_boundary_share_is_the_axis_fraction_of_visits():
    traj = walk.simulate(make_constant_field(-0.2), (0, 1), 300_000, seed=7)
    bnd = estimate.estimate_boundary_probability([traj])
    n_path, i_path = traj.N[:-1], traj.I[:-1]
    for n, e in bnd.items():
        here = n_path == n
        assert e.visits == int(here.sum())
        assert e.p_n == np.mean(i_path[here] == 0)


def test_drift_sign_is_visible():
    plus = estimate.estimate_transition_ratios([walk.run_replicas(make_constant_field(0.2), 10**6, 20, seed=1)])
    minus = estimate.estimate_transition_ratios([walk.run_replicas(make_constant_field(-0.2), 10**6, 20, seed=1)])
    assert plus.psi_hat > minus.psi_hat


def test_csv(tmp_path):
    c = _counts([0, 3000, 3000], [0, 2000, 2000], [0, 1500, 1000])
    est = estimate.estimate_transition_ratios([c])
    bnd = estimate.estimate_boundary_probability([c])
    path = tmp_path / "e.csv"
    estimate.write_csv(path, est, bnd)
    lines = path.read_text().splitlines()
    assert lines[0] == "n,P_n,Q_n,ratio_pow_n,p_n,stderr"
    assert lines[1].startswith("1,0.59999999999999998,0.40000000000000002,")
