"""Cluster exploration, branching envelope, box graphs and batch seeding."""
import math

import numpy as np
import pytest

from mrcm import kernels
from mrcm.model import ModelError
from mrcm.simulate import (ExplorationConfig, ResourceRefusal, block_seed, explore_branching,
                           explore_cluster, explore_coupled, resolve_workers, run_batch,
                           sample_box_graph, two_root_connect)


def zscore(x, mean):
    x = np.asarray(x, dtype=float)
    return (x.mean() - mean) / (x.std(ddof=1) / math.sqrt(len(x)))


def test_zero_intensity_gives_singletons(three_mark):
    b = run_batch(three_mark, 0.0, 1, 500, seed=3)
    assert np.all(b.sizes == 1)


def test_single_exploration_api(three_mark, rng):
    s = explore_cluster(three_mark, 1.0, 0, rng=rng)
    assert s.size >= 1 and s.capped == "none"
    t = explore_branching(three_mark, 1.0, 0, rng=rng)
    assert t.size >= 1


def test_negative_intensity_rejected(three_mark, rng):
    with pytest.raises(ValueError):
        explore_cluster(three_mark, -1.0, 0, rng=rng)


def test_bad_mark_rejected(three_mark, rng):
    with pytest.raises(ModelError):
        explore_cluster(three_mark, 1.0, 7, rng=rng)


def test_root_degree_mean(three_mark):
    lam = 1.2
    for a in range(3):
        b = run_batch(three_mark, lam, a, 20000, seed=5, task=a)
        expected = lam * sum(three_mark.degree(a, c) / 3 for c in range(3))
        assert abs(zscore(b.root_degrees, expected)) < 4


def test_isolated_root_probability(boolean_d1):
    lam = 0.3
    b = run_batch(boolean_d1, lam, 0, 40000, seed=9)
    p1 = float(np.mean(b.sizes == 1))
    se = math.sqrt(p1 * (1 - p1) / len(b))
    assert abs(p1 - math.exp(-2 * lam)) < 4 * se


def test_branching_mean_matches_linear_solve(three_mark):
    lam = 1.0
    chi = kernels.branching_susceptibility(three_mark, lam)
    for a in range(3):
        b = run_batch(three_mark, lam, a, 20000, seed=2, mode="branching", task=a)
        assert abs(zscore(b.sizes, chi[a])) < 4


def test_coupled_ordering(three_mark, rng):
    for _ in range(300):
        t, br = explore_coupled(three_mark, 1.5, 0, rng=rng)
        assert t.size <= br.size
    b = run_batch(three_mark, 1.5, 0, 3000, seed=1, mode="coupled")
    assert np.all(b.sizes <= b.branching[:, 0])


def test_size_cap_flags(boolean_d1):
    b = run_batch(boolean_d1, 0.5, 0, 2000, seed=4, cfg=ExplorationConfig(size_cap=5), mode="branching")
    assert b.sizes.max() <= 5
    assert np.all(b.size_capped == (b.sizes == 5))


def test_generation_cap(boolean_d1):
    b = run_batch(boolean_d1, 0.5, 0, 1000, seed=4, cfg=ExplorationConfig(generation_cap=1))
    assert b.generations.max() <= 1


def test_seeds_depend_on_task_and_block():
    assert block_seed(1, 0, 0) != block_seed(1, 0, 1) != block_seed(1, 1, 0)
    assert block_seed(1, 2, 3) == block_seed(1, 2, 3)


@pytest.mark.parametrize("workers", [2, 4, 16])
def test_worker_count_does_not_change_results(three_mark, workers):
    ref = run_batch(three_mark, 1.2, 0, 5000, seed=17, workers=1)
    other = run_batch(three_mark, 1.2, 0, 5000, seed=17, workers=workers)
    assert ref.to_csv() == other.to_csv()


def test_env_overrides_workers(monkeypatch):
    monkeypatch.setenv("MRCM_THREADS", "3")
    assert resolve_workers(8) == 3


def test_two_root_zero_intensity_is_phi(three_mark):
    y = np.array([0.5])
    b = run_batch(three_mark, 0.0, 0, 4000, seed=6, mode="two_root", target=(y, 1))
    p = float(three_mark.phi(y, 0, 1))
    se = math.sqrt(p * (1 - p) / len(b))
    assert abs(b.hits.mean() - p) < 4 * se


def test_two_root_needs_right_dimension(three_mark, rng):
    with pytest.raises(ModelError):
        two_root_connect(three_mark, 1.0, [0.1, 0.2], (0, 0), rng=rng)


def test_box_graph_degree(boolean_d1, rng):
    lam, L = 0.3, 100.0
    g = sample_box_graph(boolean_d1, lam, L, rng)
    deg = np.diff(g.adjacency().indptr)
    inner = np.abs(g.positions[:, 0]) < L - 2
    assert abs(zscore(deg[inner], lam * 2.0)) < 4


def test_box_graph_planted_cluster_law(boolean_d1, rng):
    lam = 0.3
    sizes = [sample_box_graph(boolean_d1, lam, 15.0, rng, root_mark=0).cluster_size(0) for _ in range(3000)]
    ref = run_batch(boolean_d1, lam, 0, 20000, seed=8).sizes
    diff = np.mean(sizes) - ref.mean()
    se = math.hypot(np.std(sizes) / math.sqrt(len(sizes)), ref.std() / math.sqrt(len(ref)))
    assert abs(diff) < 4 * se
    p1, q1 = np.mean(np.asarray(sizes) == 1), np.mean(ref == 1)
    assert abs(p1 - q1) < 4 * math.sqrt(p1 * (1 - p1) / len(sizes) + q1 * (1 - q1) / len(ref))


def test_box_graph_refuses_large_boxes(boolean_d1, rng):
    with pytest.raises(ResourceRefusal):
        sample_box_graph(boolean_d1, 10.0, 1e6, rng, vertex_limit=1000)


def test_continuous_marks_run(rng):
    from mrcm.model import BoxProfile, Factorisable, MarkDistribution, ModelSpec
    m = ModelSpec(2, Factorisable(BoxProfile(0.5, 1.0), "product"), MarkDistribution.uniform(0.0, 1.0))
    b = run_batch(m, 2.0, 0.8, 5000, seed=1)
    # mean degree lam * 0.8 * E[b] * integral of the box
    assert abs(zscore(b.root_degrees, 2.0 * 0.8 * 0.5 * 1.0)) < 4
