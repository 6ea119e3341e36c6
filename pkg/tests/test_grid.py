import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from difflns.grid import (Action, GridMap, Instance, Plan, PlanError, apply_action,
                          detect_conflicts, load_instance, pad_plan, parse_scenario,
                          path_cost, rollout, sum_of_costs, validate_plan)

MAP_TEXT = """3 4
....
.@@.
....
"""


def test_map_text_round_trip():
    grid = GridMap.from_text(MAP_TEXT)
    assert grid.shape == (3, 4)
    assert not grid.is_free((1, 1)) and grid.is_free((0, 0))
    assert GridMap.from_text(grid.to_text()) == grid
    assert grid.obstacle_density == pytest.approx(2 / 12)


def test_map_text_rejects_bad_rows():
    with pytest.raises(ValueError):
        GridMap.from_text("2 2\n..\n.\n")


def test_apply_action_blocks_walls_and_edges():
    grid = GridMap.from_text(MAP_TEXT)
    assert apply_action((0, 0), Action.UP, grid) is None
    assert apply_action((0, 1), Action.DOWN, grid) is None
    assert apply_action((0, 0), Action.RIGHT, grid) == (0, 1)
    assert apply_action((2, 3), Action.STAY, grid) == (2, 3)


def test_rollout_turns_invalid_moves_into_stays():
    grid = GridMap.from_text(MAP_TEXT)
    path = rollout((0, 0), [Action.UP, Action.RIGHT, Action.DOWN, Action.RIGHT, Action.RIGHT], grid)
    assert path == [(0, 0), (0, 0), (0, 1), (0, 1), (0, 2), (0, 3)]


def test_instance_rejects_duplicates_and_obstacles():
    grid = GridMap.from_text(MAP_TEXT)
    with pytest.raises(ValueError):
        Instance(grid, ((0, 0), (0, 0)), ((2, 0), (2, 1)))
    with pytest.raises(ValueError):
        Instance(grid, ((0, 0),), ((1, 1),))
    assert Instance(grid, ((0, 0),), ((2, 3),)).horizon == 2 * (3 + 4)


def test_unreachable_goal_fails_validation():
    grid = GridMap.from_text("1 3\n.@.\n")
    with pytest.raises(ValueError):
        Instance(grid, ((0, 0),), ((0, 2),)).validate()


def test_scenario_parsing_and_loading(tmp_path):
    assert parse_scenario("0 0 2 3\n\n2 0 0 3\n") == ([(0, 0), (2, 0)], [(2, 3), (0, 3)])
    with pytest.raises(ValueError):
        parse_scenario("0 0 2\n")
    (tmp_path / "m.txt").write_text(MAP_TEXT)
    (tmp_path / "s.txt").write_text("0 0 2 3\n")
    inst = load_instance(tmp_path / "m.txt", tmp_path / "s.txt")
    assert inst.starts == ((0, 0),) and inst.goals == ((2, 3),)


def test_vertex_and_edge_conflicts():
    plan = Plan((((0, 0), (0, 1), (0, 2)), ((0, 2), (0, 1), (0, 0))))
    rep = detect_conflicts(plan)
    assert rep.vertex_conflicts == ((0, 1, 1, (0, 1)),)
    assert rep.colliding_pairs == 1

    swap = Plan((((0, 0), (0, 1)), ((0, 1), (0, 0))))
    rep = detect_conflicts(swap)
    assert rep.edge_conflicts == ((0, 1, 0),) and not rep.vertex_conflicts


def test_resting_agent_blocks_later_arrivals():
    plan = Plan((((0, 0),), ((0, 2), (0, 1), (0, 0))))
    rep = detect_conflicts(plan)
    assert rep.vertex_conflicts == ((0, 1, 2, (0, 0)),)


def test_edge_conflicts_with_shared_moves():
    # two agents make the same move; a third swaps with both of them
    plan = Plan((((0, 0), (0, 1)), ((0, 0), (0, 1)), ((0, 1), (0, 0))))
    rep = detect_conflicts(plan)
    assert {(i, j) for i, j, _ in rep.edge_conflicts} == {(0, 2), (1, 2)}


def test_sum_of_costs_uses_last_departure():
    goals = [(0, 2), (0, 0)]
    plan = Plan((((0, 0), (0, 1), (0, 2), (0, 2)), ((0, 0), (0, 1), (0, 0))))
    assert path_cost(plan.paths[0], goals[0]) == 2
    assert path_cost(plan.paths[1], goals[1]) == 2
    assert sum_of_costs(plan, goals) == 4
    with pytest.raises(PlanError):
        path_cost(((0, 0), (0, 1)), (0, 0))


def test_validate_plan_reports_problems():
    grid = GridMap.from_text(MAP_TEXT)
    inst = Instance(grid, ((0, 0), (2, 0)), ((0, 2), (2, 2)))
    good = Plan((((0, 0), (0, 1), (0, 2)), ((2, 0), (2, 1), (2, 2))))
    assert validate_plan(good, inst) == []
    jump = Plan((((0, 0), (0, 2)), ((2, 0), (2, 1), (2, 2))))
    assert any("invalid move" in p for p in validate_plan(jump, inst))
    wall = Plan((((0, 0), (0, 1), (1, 1), (0, 1), (0, 2)), ((2, 0), (2, 1), (2, 2))))
    assert any("obstacle" in p for p in validate_plan(wall, inst))


def test_plan_text_round_trip():
    plan = Plan((((0, 0), (0, 1)), ((2, 3),)))
    assert Plan.from_text(plan.to_text()) == plan
    with pytest.raises(PlanError):
        Plan.from_text("0,0 0-1\n")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=6),
                min_size=1, max_size=4))
def test_conflicts_match_pairwise_definition(raw):
    plan = Plan(tuple(tuple(p) for p in raw))
    padded = pad_plan(plan, plan.makespan + 1).paths
    expected = set()
    for i in range(len(padded)):
        for j in range(i + 1, len(padded)):
            for t in range(plan.makespan + 1):
                if padded[i][t] == padded[j][t]:
                    expected.add((i, j))
                if t < plan.makespan and padded[i][t] == padded[j][t + 1] \
                        and padded[i][t + 1] == padded[j][t] and padded[i][t] != padded[i][t + 1]:
                    expected.add((i, j))
    assert set(detect_conflicts(plan).pairs) == expected


def test_components_label_connected_regions():
    grid = GridMap(np.array([[False, True, False], [False, True, False]]))
    labels = grid.components()
    assert labels[0, 0] == labels[1, 0] != labels[0, 2]
    assert not grid.is_connected()
