"""Acceptance criteria 1-10, each at its stated tolerance and runtime budget.

Every test records a pass/fail line that is printed in the terminal summary.
"""
import json
import math
import os
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from conftest import ACCEPTANCE
from mrcm import analyze, cli, estimate, kernels
from mrcm.model import BooleanDisc, MarkDistribution, MarkGrid, ModelSpec, load_fixture
from mrcm.simulate import ExplorationConfig, run_batch

WORKERS = os.cpu_count() or 1


@contextmanager
def criterion(n, title):
    state = {"detail": ""}
    t0 = time.perf_counter()
    try:
        yield state
    except BaseException:
        ACCEPTANCE[n] = (False, title, f"{state['detail']} ({time.perf_counter() - t0:.1f}s)")
        raise
    ACCEPTANCE[n] = (True, title, f"{state['detail']} ({time.perf_counter() - t0:.1f}s)")


def test_c01_exact_D4(tmp_path):
    with criterion(1, "D^(4) of the 3-mark fixture in exact rationals") as st:
        t0 = time.perf_counter()
        D4 = kernels.path_kernel(load_fixture("three_mark"), 4)
        elapsed = time.perf_counter() - t0
        expected = [[Fraction(x, 27) for x in row] for row in ([6, 4, 3], [4, 5, 1], [3, 1, 2])]
        assert [list(r) for r in D4.exact] == expected
        cfg = tmp_path / "k.json"
        cfg.write_text(json.dumps({"model": "three_mark", "seed": 0}))
        assert cli.main(["kernels", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 0
        rows = (tmp_path / "o" / "D_k4.csv").read_text().splitlines()[1:]
        got = [Fraction(int(r.split(",")[3]), int(r.split(",")[4])) for r in rows]
        assert got == [x for row in expected for x in row]
        st["detail"] = f"exact match, kernel time {elapsed * 1e3:.1f} ms"
        assert elapsed < 1.0


@pytest.mark.parametrize("d", [1, 2, 3])
def test_c02_boolean_closed_form(d):
    with criterion(2, "BooleanDisc D(a,b) against Monte Carlo, d=1,2,3") as st:
        t0 = time.perf_counter()
        radii = [0.3, 0.7]
        m = ModelSpec(d, BooleanDisc(0.3, 0.7), MarkDistribution.finite([0.5, 0.5], radii))
        rng = np.random.default_rng(100 + d)
        worst = 0.0
        for a in range(2):
            for b in range(2):
                # the sampling cube overhangs the disc so every dimension has misses
                R = 1.5 * (radii[a] + radii[b])
                x = rng.uniform(-R, R, size=(10**6, d))
                mc = (2 * R) ** d * float(m.phi(x, a, b).mean())
                worst = max(worst, abs(mc / float(m.degree(a, b)) - 1))
        prev = ACCEPTANCE.get(2, (True, "", ""))[2]
        st["detail"] = (prev.split(" (")[0] + "; " if d > 1 else "") + f"d={d} max rel err {worst:.2e}"
        assert worst < 0.01
        assert time.perf_counter() - t0 < 30


def test_c03_mecke_identity():
    with criterion(3, "chi = 1 + lambda sum_b w_b T(a,b) on BooleanDisc d=1") as st:
        t0 = time.perf_counter()
        m, lam = load_fixture("boolean_d1"), 0.3
        b = run_batch(m, lam, 0, 100_000, seed=3003, workers=WORKERS)
        chi = estimate.estimate_chi(b)
        table = estimate.estimate_two_point(m, lam, 0.05, 8.0, 10_000, seed=3004, workers=WORKERS)
        rep = estimate.identity_checks(chi, table, b, lam, [], model=m)
        st["detail"] = f"chi={chi.mean:.4f} z={rep.mecke_z:+.2f}"
        assert abs(rep.mecke_z) < 3
        assert time.perf_counter() - t0 < 300


def test_c04_branching_dominance():
    with criterion(4, "thinned chi <= branching chi + 3 sigma on a 6-point grid") as st:
        t0 = time.perf_counter()
        m = load_fixture("three_mark")
        grid = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5]
        worst = -math.inf
        for i, lam in enumerate(grid):
            chi_b = kernels.branching_susceptibility(m, lam)
            for a in range(3):
                e = estimate.estimate_chi(run_batch(m, lam, a, 20_000, seed=4004, task=10 * i + a,
                                                    workers=WORKERS))
                z = (e.mean - chi_b[a]) / e.stderr
                worst = max(worst, z)
                assert e.mean <= chi_b[a] + 3 * e.stderr, (lam, a, e, chi_b[a])
        st["detail"] = f"largest z above envelope {worst:+.2f}"
        assert time.perf_counter() - t0 < 600


def test_c05_cluster_law_oracle():
    with criterion(5, "P(size=1), P(size=2) against quadrature at lambda=0.25, 0.5") as st:
        t0 = time.perf_counter()
        m = load_fixture("boolean_d1")
        zs = []
        for i, lam in enumerate([0.25, 0.5]):
            s = run_batch(m, lam, 0, 200_000, seed=5005, task=i, workers=WORKERS).sizes
            for n in (1, 2):
                p = estimate.exact_small_cluster_prob(m, lam, 0, n - 1)
                q = float(np.mean(s == n))
                z = (q - p) / math.sqrt(p * (1 - p) / len(s))
                zs.append(z)
                assert abs(z) < 3, (lam, n, p, q)
        st["detail"] = "z = " + ", ".join(f"{z:+.2f}" for z in zs)
        assert time.perf_counter() - t0 < 300


def test_c06_magnetization():
    with criterion(6, "transform vs ghost labels; gamma-ladder slope vs chi^f at lambda=0.3") as st:
        t0 = time.perf_counter()
        m, lam = load_fixture("boolean_d1"), 0.3
        b = run_batch(m, lam, 0, 100_000, seed=6006, workers=WORKERS)
        gammas = [2.0**-j for j in range(1, 11)]
        chi = estimate.estimate_chi(b)
        table = estimate.TwoPointTable.from_function(lambda i, j, r: np.zeros_like(r), 1, 1.0, 1.0, lam=lam)
        rep = estimate.identity_checks(chi, table, b, lam, gammas, rng=np.random.default_rng(6007))
        zmax = max(abs(z) for z in rep.magnetization_z.values())
        lim = analyze.magnetization_limits(b, gammas)
        last = lim.slopes[-1]
        st["detail"] = f"max |z| ghost {zmax:.2f}; slope {last.mean:.4f} vs chi^f {lim.chi_f.mean:.4f}"
        assert zmax < 3
        assert lim.last_slope_close
        assert time.perf_counter() - t0 < 300


@pytest.mark.slow
def test_c07_exponent_pipeline():
    with criterion(7, "synthetic gamma, beta; critical branching tail 1/delta") as st:
        t0 = time.perf_counter()
        lam_hat = 1.0
        x = np.linspace(0.5, 0.95, 10)
        g = analyze.fit_exponent((x, 3.0 / (lam_hat - x)), lam_hat, "chi_divergence", exclude_nearest=0)
        x2 = np.linspace(1.05, 1.5, 10)
        bfit = analyze.fit_exponent((x2, 0.7 * (x2 - lam_hat)), lam_hat, "theta_growth", exclude_nearest=0)
        assert abs(g.exponent - 1) <= 0.01 and abs(bfit.exponent - 1) <= 0.01
        # single mark, D = 2: the envelope is critical at lambda = 1/2
        m = load_fixture("boolean_d1")
        b = run_batch(m, 0.5, 0, 10**6, seed=7007, cfg=ExplorationConfig(size_cap=10_001),
                      mode="branching", workers=WORKERS)
        n_grid = np.unique(np.round(np.logspace(2, 4, 13)).astype(int))
        tail = estimate.estimate_cluster_tail(b, n_grid)
        fit = analyze.fit_exponent(tail, None, "tail_power", exclude_nearest=0, max_rel_stderr=0.25)
        st["detail"] = f"gamma={g.exponent:.4f} beta={bfit.exponent:.4f} 1/delta={fit.exponent:.4f}"
        assert 0.45 <= fit.exponent <= 0.55
        assert time.perf_counter() - t0 < 1200


@pytest.mark.slow
def test_c08_critical_intensity():
    with criterion(8, "branching bisection vs 3/rho(K); thinned estimate above 1/||D||_op") as st:
        t0 = time.perf_counter()
        m = load_fixture("three_mark")
        target = 3 / (2 * math.cos(math.pi / 7))
        br = analyze.find_critical_intensity(m, 0, (1.4, 1.9), 20_000, seed=8008, size_cap=10_000,
                                             mode="branching", workers=WORKERS)
        rel = abs(br.lambda_hat - target) / target
        th = analyze.find_critical_intensity(m, 0, (4.0, 10.0), 2_000, seed=8009, size_cap=1_000,
                                             mode="thinned", rel_tol=0.02, workers=WORKERS)
        lower = 1 / kernels.operator_norm(kernels.degree_kernel(m))
        half = 0.5 * (th.ci[1] - th.ci[0])
        st["detail"] = (f"branching {br.lambda_hat:.5f} vs {target:.5f} ({rel:.2%}); "
                        f"thinned {th.lambda_hat:.3f} >= {lower:.4f} - {half:.3f}")
        assert rel < 0.02
        assert th.lambda_hat >= lower - half
        assert time.perf_counter() - t0 < 900


def test_c09_schur_ordering():
    with criterion(9, "operator norm <= (1,inf) mixed norm on 100 random kernels") as st:
        t0 = time.perf_counter()
        rng = np.random.default_rng(9009)
        gap = math.inf
        for _ in range(100):
            n = int(rng.integers(1, 40))
            a = rng.exponential(size=(n, n)) * (rng.random((n, n)) < 0.7)
            w = rng.dirichlet(np.ones(n))
            h = kernels.KernelMatrix(MarkGrid(tuple(range(n)), w, None, None), 0.5 * (a + a.T))
            op, schur = kernels.operator_norm(h), kernels.mixed_norm(h, 1, math.inf)
            assert op <= schur + 1e-10
            gap = min(gap, schur - op)
        st["detail"] = f"smallest slack {gap:.3g}"
        assert time.perf_counter() - t0 < 10


def test_c10_determinism(tmp_path):
    with criterion(10, "scan CSVs byte-identical under 1, 4 and 16 workers") as st:
        cfg = {"model": "three_mark", "seed": 1010,
               "scan": {"lambda_grid": [0.5, 1.0, 1.5], "n_runs": 3000}}
        path = tmp_path / "scan.json"
        path.write_text(json.dumps(cfg))
        outs = {}
        for w in (1, 4, 16):
            out = tmp_path / f"w{w}"
            assert cli.main(["scan", "--config", str(path), "--workers", str(w), "--out-dir", str(out)]) == 0
            outs[w] = [(out / f).read_bytes() for f in ("scan.csv", "scan_summary.csv")]
        assert outs[1] == outs[4] == outs[16]
        st["detail"] = f"{len(outs[1][0].splitlines()) - 1} sample rows identical"
