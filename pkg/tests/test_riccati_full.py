import numpy as np
import pytest

from frozen import FULL_S2
from oracles import S1_COEF, full_value_oracle
from slowfast_lq.errors import DeltaNotPositive, EpsilonOutOfRange
from slowfast_lq.riccati_full import (assemble_P, compact_feedback, eval_full_rhs,
                                      feedback_gains_full, riccati_rhs, solve_full, split_P,
                                      write_trajectory_csv)


def test_zero_blocks_give_weights(s1):
    f, g1, g2 = eval_full_rhs(0, 0, 0, 0.5, s1)
    assert f[0, 0] == 1.0 and g1[0, 0] == 0.0 and g2[0, 0] == 1.0


def test_scalar_rhs_by_hand(s1):
    # eps = 1, all blocks 1: Delta = 1, N1 = 2, N2 = 2
    f, g1, g2 = eval_full_rhs(1, 1, 1, 1.0, s1)
    assert f[0, 0] == pytest.approx(2 + 1 - 4)
    assert g1[0, 0] == pytest.approx(1 + 1 - 1 - 4)
    assert g2[0, 0] == pytest.approx(-2 + 2 + 1 - 4)


def test_block_consistency_s2(s2):
    rng = np.random.default_rng(11)
    for _ in range(20):
        eps = rng.uniform(0.01, 1.0)
        P11, P12, P22 = rng.uniform(0, 1, 3)
        P = assemble_P(P11, P12, P22, eps)
        full = riccati_rhs(P, eps, s2)
        f, g1, g2 = eval_full_rhs(P11, P12, P22, eps, s2)
        assert np.allclose(full, np.block([[f, g1], [g1.T, g2]]), rtol=1e-12, atol=1e-13)


def test_assemble_split():
    P = assemble_P(1, 2, 3, 0.5)
    assert np.array_equal(P, [[1, 1], [1, 1.5]])
    blocks = split_P(P, 1, 0.5)
    assert [b[0, 0] for b in blocks] == [1, 2, 3]
    assert not assemble_P(0, 0, 0, 1.0).any()


def test_gains_trivial(s1):
    F1, F2 = feedback_gains_full(0, 0, 0, 0.3, s1)
    assert F1[0, 0] == 0 and F2[0, 0] == 0
    F1, F2 = feedback_gains_full(1, 0, 1, 1.0, s1)
    assert F1[0, 0] == pytest.approx(-1.0) and F2[0, 0] == pytest.approx(-1.0)


def test_gains_match_compact_formula(s2):
    traj = solve_full(s2, 0.25)
    P11, P12, P22 = traj.at(0.0)
    F1, F2 = feedback_gains_full(P11, P12, P22, 0.25, s2)
    F = compact_feedback(assemble_P(P11, P12, P22, 0.25), 0.25, s2)
    assert np.allclose(np.hstack([F1, F2]), F, atol=1e-10)


def test_delta_not_positive(s2):
    with pytest.raises(DeltaNotPositive):
        eval_full_rhs(0, 0, -100.0, 0.5, s2)


@pytest.mark.parametrize("eps", [0.5, 0.1])
def test_solve_full_matches_float_oracle(s2, eps):
    traj = solve_full(s2, eps)
    assert np.allclose(traj.P(0.0), FULL_S2[eps], atol=1e-8)


def test_solve_full_s1_oracle(s1):
    traj = solve_full(s1, 0.3)
    assert np.allclose(traj.P(0.0), full_value_oracle(S1_COEF, 0.3), atol=1e-8)


def test_terminal_and_grid(s2):
    traj = solve_full(s2, 0.1)
    assert traj.grid[0] == 0.0 and traj.grid[-1] == pytest.approx(1.0)
    assert np.all(np.diff(traj.grid) > 0)
    assert traj.P11[-1, 0, 0] == 0 and traj.P12[-1, 0, 0] == 0 and traj.P22[-1, 0, 0] == 0
    assert np.all(traj.delta_min > 0)
    assert len(traj.delta_min) == len(traj.grid)
    # dense output reproduces nodes exactly
    mid = traj.grid[len(traj.grid) // 2]
    assert traj.at(mid)[0][0, 0] == traj.P11[len(traj.grid) // 2, 0, 0]


def test_psd_along_trajectory(s2):
    traj = solve_full(s2, 0.05)
    for t in traj.grid[::5]:
        P = traj.P(t)
        assert np.linalg.eigvalsh(P)[0] >= -1e-8 * (1 + np.abs(P).max())


def test_step_sizes_shrink_with_eps(s1):
    a = solve_full(s1, 0.1).step_sizes[:5]
    b = solve_full(s1, 0.05).step_sizes[:5]
    assert np.all(b <= a * (1 + 1e-12))


def test_value(s2):
    traj = solve_full(s2, 0.1)
    x = np.array([1.0, 1.0])
    assert traj.value(x) == pytest.approx(0.5 * x @ np.array(FULL_S2[0.1]) @ x, abs=1e-8)


def test_epsilon_range(s1):
    with pytest.raises(EpsilonOutOfRange):
        solve_full(s1, 0.0)


def test_csv(tmp_path, s2):
    traj = solve_full(s2, 0.5)
    path = tmp_path / "t.csv"
    write_trajectory_csv(traj, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,P11_00,P12_00,P22_00,delta_min"
    assert len(lines) == len(traj.grid) + 1
    assert float(lines[1].split(",")[1]) == traj.P11[0, 0, 0]
