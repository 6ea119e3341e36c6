import math

import numpy as np
import pytest

from difflns.d3pm import one_hot
from difflns.denoiser import (Condition, DenoiserConfig, HeuristicPredictor, action_entropy,
                              build_social_graph, denoiser_forward, encode_condition,
                              env_sense, inferred_trajectory, init_params, load_params,
                              save_params, sparse_social_attention, temporal_attention)
from difflns.denoiser.network import (bilinear_sample, feature_pyramid, neighbor_count,
                                      sampling_locations, temporal_mask)
from difflns.grid import DELTAS, GridMap, Instance, rollout
from difflns.instances import SceneSpec, generate_instance
from difflns.single_agent import UnreachableError, bfs_distance_map
from oracles import dense_social_attention, dense_temporal_attention

SMALL = DenoiserConfig(hidden=16, cond=16, heads=4, layers=2, points=4, bias_hidden=8)


def rand_rows(rng, n, t):
    return rng.dirichlet(np.ones(5), size=(n, t))


def small_instance(n=4, seed=0):
    return generate_instance(SceneSpec("random", 7, 6, 0.15, agents=n, seed=seed), horizon=9)


def test_condition_normalisation():
    inst = Instance(GridMap(np.zeros((3, 5), dtype=bool)), ((0, 0), (2, 4)), ((1, 2), (0, 4)))
    cond = Condition.from_instance(inst)
    assert np.allclose(cond.starts_norm, [[-1, -1], [1, 1]])
    assert np.allclose(cond.goals_norm, [[0, 0], [-1, 1]])
    assert np.array_equal(cond.map_size, [5, 3])
    raster = cond.raster()
    assert raster[..., 1].all() and raster[1, 2, 2] == 1 and raster[..., 2].sum() == 2


def test_scale_gate_and_agent_conditions():
    params = init_params(1, SMALL)
    grid = GridMap(np.zeros((4, 4), dtype=bool))
    cond = Condition(grid.cells, np.array([[0, 0], [0, 0]]), np.array([[3, 3], [3, 3]]), 0.1)
    enc = encode_condition(cond, 10, params)
    assert enc.scale_gate.sum() == pytest.approx(1, abs=1e-6)
    assert np.array_equal(enc.agent_cond[0], enc.agent_cond[1])
    other = encode_condition(cond, 60, params)
    assert not np.allclose(enc.global_cond, other.global_cond)
    for name in ("start_emb", "goal_emb", "rel_emb"):
        assert np.array_equal(getattr(enc, name), getattr(other, name))


def test_inferred_trajectory_special_cases():
    inst = small_instance()
    cond = Condition.from_instance(inst)
    stay = one_hot(np.zeros((4, 9), dtype=int))
    assert np.allclose(inferred_trajectory(stay, cond), cond.starts_norm[:, None, :])
    uniform = np.full((4, 9, 5), 0.2)
    assert np.allclose(inferred_trajectory(uniform, cond), cond.starts_norm[:, None, :], atol=1e-15)


def test_inferred_trajectory_matches_rollout_on_one_hot():
    grid = GridMap(np.zeros((6, 6), dtype=bool))
    inst = Instance(grid, ((0, 0), (5, 5)), ((5, 0), (0, 5)))
    actions = np.array([[2, 2, 4, 4, 0, 2], [1, 3, 1, 3, 1, 0]])
    cond = Condition.from_instance(inst)
    p = inferred_trajectory(one_hot(actions), cond)
    for i in range(2):
        cells = rollout(inst.starts[i], actions[i], grid)[1:]
        assert np.abs(p[i] - cond.normalize(np.array(cells))).max() <= 1e-12


def test_action_entropy_values():
    assert action_entropy(one_hot(np.array([[3]])))[0, 0] == 0
    assert action_entropy(np.full((1, 1, 5), 0.2))[0, 0] == pytest.approx(1)
    half = np.array([[[0.5, 0.5, 0, 0, 0]]])
    assert action_entropy(half)[0, 0] == pytest.approx(math.log(2) / math.log(5))


def test_social_graph_sizes_and_ties():
    assert neighbor_count(50, 100, 1) == 0
    p = np.zeros((1, 3, 2))
    assert build_social_graph(p, 50, 100).tolist() == [[0]]
    p2 = np.random.default_rng(0).normal(size=(2, 3, 2))
    for k in (1, 50, 100):
        assert sorted(build_social_graph(p2, k, 100)[0].tolist()) == [0, 1]
    # agents on a line; at k = K the ratio 0.25 keeps one neighbour each
    line = np.array([[[0.0, 0.0]], [[0.0, 0.3]], [[0.0, 0.5]], [[0.0, 1.0]]])
    graph = build_social_graph(line, 100, 100)
    d = np.abs(line[:, None, 0, :] - line[None, :, 0, :]).sum(-1)
    np.fill_diagonal(d, np.inf)
    for i in range(4):
        assert graph[i, 0] == i
        assert graph[i, 1] == int(np.argmin(d[i]))
    # exact ties go to the lower index
    tie = np.array([[[0.0, 0.0]], [[0.0, 1.0]], [[0.0, -1.0]]])
    assert build_social_graph(tie, 1, 100)[0, 1] == 1


def test_neighbor_ratio_grows_with_noise():
    counts = [neighbor_count(k, 100, 40) for k in (1, 50, 100)]
    assert counts == sorted(counts) and counts[0] == 4 and counts[-1] == 10


def _social_weights(params, prefix):
    g = params.tensors
    return [g[f"{prefix}.{n}"] for n in ("q.w", "q.b", "k.w", "k.b", "v.w", "v.b",
                                        "bias1.w", "bias1.b", "bias2.w", "bias2.b")]


def test_sparse_social_attention_equals_dense_with_full_neighbourhoods():
    rng = np.random.default_rng(0)
    for trial in range(20):
        n, t = int(rng.integers(1, 9)), int(rng.integers(1, 17))
        params = init_params(trial, SMALL)
        tokens = rng.normal(size=(n, t, SMALL.hidden))
        p_inf = rng.uniform(-1, 1, size=(n, t, 2))
        full = np.array([[i] + [j for j in range(n) if j != i] for i in range(n)])
        got = sparse_social_attention(tokens, p_inf, full, params, "block0.social")
        want = dense_social_attention(tokens, p_inf, *_social_weights(params, "block0.social"), SMALL.heads)
        assert np.abs(got - want).max() < 1e-6


def test_social_attention_self_only_and_padding():
    rng = np.random.default_rng(1)
    params = init_params(0, SMALL)
    tokens = rng.normal(size=(3, 4, SMALL.hidden))
    p_inf = rng.uniform(-1, 1, size=(3, 4, 2))
    own = sparse_social_attention(tokens, p_inf, np.arange(3)[:, None], params, "block0.social")
    assert np.allclose(own, tokens @ params["block0.social.v.w"] + params["block0.social.v.b"])
    padded = np.array([[0, -1], [1, -1], [2, -1]])
    assert np.allclose(sparse_social_attention(tokens, p_inf, padded, params, "block0.social"), own)


def test_social_attention_zero_weights_gives_mean_of_values():
    rng = np.random.default_rng(2)
    params = init_params(0, SMALL)
    for name in ("q.w", "q.b", "k.w", "k.b", "bias2.w", "bias2.b"):
        key = f"block0.social.{name}"
        params = params.with_tensor(key, np.zeros_like(params[key]))
    tokens = rng.normal(size=(3, 2, SMALL.hidden))
    hood = np.array([[0, 1, 2], [1, 0, 2], [2, 0, 1]])
    out = sparse_social_attention(tokens, rng.normal(size=(3, 2, 2)), hood, params, "block0.social")
    values = tokens @ params["block0.social.v.w"] + params["block0.social.v.b"]
    assert np.allclose(out, np.broadcast_to(values.mean(axis=0), out.shape))


def test_temporal_attention_is_dense_for_short_horizons():
    rng = np.random.default_rng(3)
    params = init_params(4, SMALL)
    g = params.tensors
    weights = [g[f"block1.temporal.{n}"] for n in ("q.w", "q.b", "k.w", "k.b", "v.w", "v.b")]
    for t in (1, 5, 32):
        tokens = rng.normal(size=(3, t, SMALL.hidden))
        got = temporal_attention(tokens, params, "block1.temporal")
        assert np.abs(got - dense_temporal_attention(tokens, *weights, SMALL.heads)).max() < 1e-6
    tokens = rng.normal(size=(4, 7, SMALL.hidden))
    perm = np.array([2, 0, 3, 1])
    assert np.allclose(temporal_attention(tokens, params, "block1.temporal")[perm],
                       temporal_attention(tokens[perm], params, "block1.temporal"))


def test_temporal_mask_windows_and_anchors():
    mask = temporal_mask(70, 32, 16)
    assert mask[40, 33] and mask[40, 0] and mask[40, 16] and not mask[40, 17]
    assert mask[5, 64] and not mask[5, 65]


def test_bilinear_sampling():
    feat = np.arange(12.0).reshape(3, 4, 1)
    u = np.array([[-1.0, -1.0], [1.0, 1.0], [0.0, -1.0 + 2.0 / 3.0]])
    assert np.allclose(bilinear_sample(feat, u)[:, 0], [0, 11, feat[1, 1, 0]])
    assert np.allclose(bilinear_sample(feat, np.array([[5.0, -5.0]]))[:, 0], [8])
    const = np.full((3, 4, 2), 7.0)
    assert np.allclose(bilinear_sample(const, np.random.default_rng(0).uniform(-2, 2, (10, 2))), 7)


def test_env_sense_locations_and_constant_maps():
    rng = np.random.default_rng(5)
    params = init_params(2, SMALL).with_tensor("block0.env.radius", np.zeros(1))
    tokens = rng.normal(size=(2, 3, SMALL.hidden))
    p_inf = rng.uniform(-1, 1, size=(2, 3, 2))
    locs = sampling_locations(tokens, p_inf, np.zeros((2, 3)), params, "block0.env")
    assert np.array_equal(locs, np.broadcast_to(p_inf[:, :, None, :], locs.shape))
    const = [np.full((4, 4, SMALL.hidden), 0.5)] * 3
    gate = np.array([0.2, 0.3, 0.5])
    a = env_sense(tokens, p_inf, np.zeros((2, 3)), const, gate, init_params(2, SMALL), "block0.env")
    b = env_sense(tokens, -p_inf, np.ones((2, 3)), const, gate, init_params(2, SMALL), "block0.env")
    assert np.allclose(a, b)


def test_pyramid_shapes():
    inst = small_instance()
    params = init_params(0, SMALL)
    cond = Condition.from_instance(inst)
    pyr = feature_pyramid(cond, encode_condition(cond, 5, params).global_cond, params)
    assert [f.shape[:2] for f in pyr] == [(7, 6), (4, 3), (2, 2)]


def test_forward_rows_normalised_and_finite():
    rng = np.random.default_rng(6)
    for seed in range(100):
        inst = small_instance(n=int(rng.integers(1, 6)), seed=seed)
        params = init_params(seed, SMALL)
        out = denoiser_forward(rand_rows(rng, inst.num_agents, 9), inst, int(rng.integers(1, 101)), params)
        assert np.all(np.isfinite(out))
        assert np.abs(out.sum(-1) - 1).max() < 1e-6


def test_forward_with_default_dimensions():
    rng = np.random.default_rng(7)
    inst = small_instance(n=5)
    out = denoiser_forward(rand_rows(rng, 5, 9), inst, 40, init_params(0))
    assert out.shape == (5, 9, 5) and np.abs(out.sum(-1) - 1).max() < 1e-6


def test_permutation_equivariance():
    rng = np.random.default_rng(8)
    for trial in range(10):
        n = int(rng.integers(2, 9))
        inst = small_instance(n=n, seed=trial)
        params = init_params(100 + trial, SMALL)
        x = rand_rows(rng, n, 9)
        perm = rng.permutation(n)
        cond = Condition.from_instance(inst)
        a = denoiser_forward(x, cond, 30, params)[perm]
        b = denoiser_forward(x[perm], cond.permuted(perm), 30, params)
        assert np.abs(a - b).max() <= 1e-5


def test_identical_agents_get_identical_outputs():
    grid = GridMap(np.zeros((5, 5), dtype=bool))
    cond = Condition(grid.cells, np.array([[2, 2], [2, 2]]), np.array([[0, 4], [0, 4]]), 0.1)
    x = np.repeat(rand_rows(np.random.default_rng(9), 1, 6), 2, axis=0)
    out = denoiser_forward(x, cond, 20, init_params(3, SMALL))
    assert np.allclose(out[0], out[1])


def test_non_finite_parameters_rejected():
    params = init_params(0, SMALL)
    bad = params.with_tensor("head.out.b", np.array([np.nan, 0, 0, 0, 0]))
    with pytest.raises(ValueError):
        denoiser_forward(np.full((4, 9, 5), 0.2), small_instance(), 5, bad)


def test_weight_file_round_trip(tmp_path):
    params = init_params(11, SMALL)
    path = tmp_path / "w.bin"
    save_params(params, path)
    loaded = load_params(path)
    assert loaded.config == params.config
    assert all(np.array_equal(loaded[k], v) for k, v in params.tensors.items())
    again = init_params(11, SMALL)
    assert all(np.array_equal(again[k], v) for k, v in params.tensors.items())
    other = init_params(12, SMALL)
    assert not np.array_equal(other["head.out.w"], params["head.out.w"])
    path.write_bytes(b"garbage!" + path.read_bytes()[8:])
    with pytest.raises(ValueError):
        load_params(path)


def test_heuristic_at_goal_is_all_stay():
    grid = GridMap(np.zeros((3, 3), dtype=bool))
    inst = Instance(grid, ((1, 1),), ((1, 1),), horizon=4)
    out = HeuristicPredictor()(np.full((1, 4, 5), 0.2), inst, 3)
    assert np.array_equal(out, one_hot(np.zeros((1, 4), dtype=int)))


def test_heuristic_corridor_reaches_goal_in_bfs_steps():
    grid = GridMap.from_text("3 6\n......\n@@@@@.\n......\n")
    inst = Instance(grid, ((0, 0),), ((2, 0),), horizon=20)
    out = HeuristicPredictor()(np.full((1, 20, 5), 0.2), inst, 10)
    path = rollout(inst.starts[0], np.argmax(out[0], axis=-1), grid)
    dist = int(bfs_distance_map(grid, (2, 0))[(0, 0)])
    assert path.index((2, 0)) == dist


def test_heuristic_never_puts_mass_on_invalid_actions():
    rng = np.random.default_rng(10)
    inst = generate_instance(SceneSpec("maze", 9, 9, agents=6, seed=2))
    out = HeuristicPredictor()(one_hot(rng.integers(0, 5, (6, inst.horizon))), inst, 7)
    for i in range(6):
        path = rollout(inst.starts[i], np.argmax(out[i], axis=-1), inst.map)
        for t in range(inst.horizon):
            for a, (dr, dc) in enumerate(DELTAS):
                if not inst.map.is_free((path[t][0] + dr, path[t][1] + dc)):
                    assert out[i, t, a] == 0


def test_heuristic_rejects_unreachable_goal():
    grid = GridMap.from_text("1 3\n.@.\n")
    inst = Instance(grid, ((0, 0),), ((0, 2),), horizon=3)
    with pytest.raises(UnreachableError):
        HeuristicPredictor()(np.full((1, 3, 5), 0.2), inst, 1)
