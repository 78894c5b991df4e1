"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""
import copy
import itertools
import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import yaml

from datamdp import artifacts as art
from datamdp.blackbox import InputSet, StateBox, jet_engine_system
from datamdp.cli import _bounds, main, run_abstract, run_certify, run_synthesize
from datamdp.config import load_config, parse_config
from datamdp.estimator import (FiniteMdp, IntervalMdp, estimate_imdp, fit_gaussian_mle, mdp_from_gaussian)
from datamdp.grid import build_grid
from datamdp.lp import LinearProgram, solve
from datamdp.scenario import build_scp, eps2_from, min_realizations_M, min_samples_N, solve_scp
from datamdp.synth import (SafetySpec, robust_safety_value_iteration, safety_value_iteration,
                           worst_case_expectation)

from oracles import bernoulli_system, extreme_point_min, path_enumeration_value, zoom_grid_min
from test_lp import random_program

CONFIGS = Path(__file__).parents[1] / "configs"


@contextmanager
def criterion(capsys, k, title):
    info = {}
    try:
        yield info
    except BaseException as exc:
        with capsys.disabled():
            print(f"\n[acceptance {k:>2}] FAIL  {title}: {type(exc).__name__}: {exc}".splitlines()[1][:300])
        raise
    with capsys.disabled():
        detail = ", ".join(f"{a}={b}" for a, b in info.items())
        print(f"\n[acceptance {k:>2}] PASS  {title}" + (f" ({detail})" if detail else ""))


def test_01_sample_size(capsys):
    with criterion(capsys, 1, "min_samples_N(1.815e-5, 0.01, 4) ~ 553559") as info:
        t0 = time.perf_counter()
        N = min_samples_N(1.815e-5, 0.01, 4)
        dt = time.perf_counter() - t0
        info.update(N=N, seconds=round(dt, 4))
        assert abs(N - 553559) <= 0.002 * 553559
        assert dt < 1.0


def test_02_eps2(capsys):
    with criterion(capsys, 2, "eps2 = (0.04/9.39)^2 prints as 1.81e-5") as info:
        e = eps2_from(0.04, 9.39, 2)
        info["eps2"] = f"{e:.4e}"
        assert e == pytest.approx(1.815e-5, rel=5e-4)
        assert f"{e:.2e}" == "1.81e-05"


def test_03_M(capsys):
    with criterion(capsys, 3, "min_realizations_M -> 783 and exact ceil") as info:
        assert min_realizations_M(1.9575e-4, 0.01, 0.005) == 783
        rng = np.random.default_rng(3)
        for _ in range(2000):
            Q, b, mu = 10 ** rng.uniform(-8, 0), rng.uniform(1e-3, 0.5), 10 ** rng.uniform(-3, -1)
            M = min_realizations_M(Q, b, mu)
            r = Q / (b * mu * mu)
            assert M >= r * (1 - 1e-12) and M - 1 < r * (1 + 1e-12)
            assert M >= 1
        # exact integer ratios land on the integer
        for k in (1, 7, 783, 10 ** 6):
            assert min_realizations_M(k * 0.01 * 0.005 ** 2, 0.01, 0.005) == k
        info["random_checks"] = 2000


@pytest.mark.slow
def test_04_reduced_certify(capsys):
    with criterion(capsys, 4, "reduced jet certify: < 10 min, deterministic, Upsilon* nondecreasing in N") as info:
        cfg = load_config(CONFIGS / "jet_reduced.yaml")
        t0 = time.perf_counter()
        doc, metrics = run_certify(cfg)
        elapsed = time.perf_counter() - t0
        doc2, _ = run_certify(cfg)
        assert art.dumps(doc) == art.dumps(doc2)
        assert elapsed < 600
        sys_ = cfg.build_system()
        grid = cfg.build_grid(sys_)
        assert (grid.n_cells, len(sys_.inputs)) == (100, 5)
        basis = cfg.sbf.basis(2)
        lower, upper = _bounds(cfg, basis)
        full = build_scp(sys_, grid, basis, 2000, 100, cfg.scenario.mu, cfg.seed)
        # The configured bounds admit a constant barrier, which pins upsilon at
        # mu - psi for every N; the variant without the constant term and with
        # psi free depends on the data and is checked on the same rows.
        lo2, hi2 = lower.copy(), upper.copy()
        lo2[4] = hi2[4] = 0.0
        lo2[1], hi2[1] = 0.0, 1.0
        ups, ups_var = [], []
        for N in (500, 1000, 2000):
            sub = full.subset(N)
            ups.append(solve_scp(sub.to_linear_program(lower, upper), maximize_alpha=False)[1]["upsilon_lp"])
            ups_var.append(solve_scp(sub.to_linear_program(lo2, hi2), maximize_alpha=False)[1]["upsilon_lp"])
        for seq in (ups, ups_var):
            for a, b in zip(seq, seq[1:]):
                assert b >= a - 1e-9 * (1 + abs(a))
        c = doc["certificate"]
        info.update(verdict=c["verdict"], upsilon=round(c["upsilon"], 6), seconds=round(elapsed, 1),
                    upsilon_by_N=[round(u, 6) for u in ups],
                    variant_by_N=[f"{u:.3e}" for u in ups_var])


def test_05_lp_oracle(capsys):
    with criterion(capsys, 5, "cutting-plane LP vs dense-grid oracle on 100 programs") as info:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            p = random_program(rng, int(rng.integers(1, 4)), int(rng.integers(1, 51)))
            s = solve(p)
            ref = zoom_grid_min(p)
            worst = max(worst, abs(s.value - ref))
            assert abs(s.value - ref) <= 1e-6
            extra = random_program(rng, p.n_vars, 5)
            bigger = p.append_rows(extra.A, extra.const)
            s2 = solve(bigger)
            assert s2.status != "Optimal" or s2.value >= s.value - 1e-9
        info["max_abs_gap"] = f"{worst:.1e}"


def test_06_interval_coverage(capsys):
    with criterion(capsys, 6, "empirical interval failure rate, G=2000, 200 trials") as info:
        t0 = time.perf_counter()
        sys_ = bernoulli_system()
        grid = build_grid(sys_.state_box, (2,))
        fails = 0
        for t in range(200):
            im = estimate_imdp(sys_, grid, 0.05, 0.05, seed=1000 + t)
            assert im.G[0, 0] == 2000
            fails += abs(im.p_bar[0, 0, 0] - 0.5) > 0.05
        dt = time.perf_counter() - t0
        rate = fails / 200
        info.update(rate=rate, seconds=round(dt, 2))
        assert rate <= 0.05 + 3 * math.sqrt(0.05 / 200)
        assert dt < 30


def _lattice_imdp(rng, S=3, m=2):
    """Interval rows ``p +- eps`` with ``p`` and ``eps`` on the 0.01 lattice."""
    k = 100
    counts = np.array([[rng.multinomial(k, rng.dirichlet(np.ones(S + 1))) for _ in range(m)] for _ in range(S)])
    widths = rng.integers(0, 21, size=counts.shape)
    grid = build_grid(StateBox((0.0,), (1.0,)), (S,))
    return IntervalMdp(grid, InputSet(np.arange(m, dtype=float)), counts / k, widths / k, 0.01,
                       np.ones((S, m), dtype=np.int64))


def _simplex_lattice(n, k=100):
    pts = [c for c in itertools.product(range(k + 1), repeat=n - 1) if sum(c) <= k]
    P = np.array([[*c, k - sum(c)] for c in pts], dtype=float) / k
    return P


def _vi_with(inner, lo, hi, safe, T):
    S, m = lo.shape[:2]
    V = np.zeros((T + 1, S))
    V[T] = safe
    for k in range(T - 1, -1, -1):
        v = np.append(V[k + 1], 0.0)
        q = np.array([[inner(lo[i, u], hi[i, u], v) for u in range(m)] for i in range(S)])
        V[k] = safe * q.max(axis=1)
    return V


def test_07_robust_vi(capsys):
    with criterion(capsys, 7, "robust VI greedy = extreme points; simplex grid within 1e-3") as info:
        rng = np.random.default_rng(77)
        P = _simplex_lattice(4)

        def grid_min(lo, hi, v):
            ok = np.all((P >= lo - 1e-12) & (P <= hi + 1e-12), axis=1)
            return float((P[ok] @ v).min())

        worst_ext = worst_grid = 0.0
        for _ in range(50):
            im = _lattice_imdp(rng)
            spec = SafetySpec(StateBox((0.0,), (float(rng.choice([1.0, 2 / 3])),)), 3)
            safe = spec.safe_cells(im.grid).astype(float)
            lo_r, hi_r = im.lower, im.upper
            V, _ = robust_safety_value_iteration(im, spec)
            V_ext = _vi_with(extreme_point_min, lo_r, hi_r, safe, 3)
            V_grid = _vi_with(grid_min, lo_r, hi_r, safe, 3)
            # inner minimization row by row against the same continuation values
            for k in range(3):
                v = np.append(V.V[k + 1], 0.0)
                g = worst_case_expectation(lo_r, hi_r, v)
                e = np.array([[extreme_point_min(lo_r[i, u], hi_r[i, u], v) for u in range(2)] for i in range(3)])
                worst_ext = max(worst_ext, float(np.abs(g - e).max()))
            worst_ext = max(worst_ext, float(np.abs(V.V - V_ext).max()))
            worst_grid = max(worst_grid, float(np.abs(V.V - V_grid).max()))
        info.update(max_vs_extreme=f"{worst_ext:.1e}", max_vs_grid=f"{worst_grid:.1e}")
        assert worst_ext <= 4 * np.finfo(float).eps
        assert worst_grid <= 1e-3


def test_08_safety_vi(capsys):
    with criterion(capsys, 8, "safety VI: 0.81 chain, path enumeration within 1e-12") as info:
        grid2 = build_grid(StateBox((0.0,), (1.0,)), (2,))
        T = np.array([[[0.9, 0.1, 0.0]], [[0.0, 1.0, 0.0]]])
        V, _ = safety_value_iteration(FiniteMdp(grid2, InputSet([0.0]), T), SafetySpec(StateBox((0.0,), (0.5,)), 2))
        assert V.V[0, 0] == 0.81 or abs(V.V[0, 0] - 0.81) <= 1e-16
        rng = np.random.default_rng(88)
        grid5 = build_grid(StateBox((0.0,), (1.0,)), (5,))
        spec = SafetySpec(StateBox((0.0,), (0.8,)), 4)
        safe = spec.safe_cells(grid5)
        worst = 0.0
        for _ in range(20):
            Tm = rng.random((5, 2, 6)) * (rng.random((5, 2, 6)) < 0.6)
            Tm[..., 0] += 1e-3
            Tm /= Tm.sum(axis=-1, keepdims=True)
            Tm[..., -1] = np.clip(1.0 - Tm[..., :-1].sum(axis=-1), 0, 1)
            V, _ = safety_value_iteration(FiniteMdp(grid5, InputSet([0.0, 1.0]), Tm), spec)
            for s in range(5):
                worst = max(worst, abs(V.V[0, s] - path_enumeration_value(Tm, safe, 4, s)))
        info["max_gap"] = f"{worst:.1e}"
        assert worst <= 1e-12


def test_09_mle(capsys):
    with criterion(capsys, 9, "MLE recovers mu=0.3, sigma=0.01 from 1e5 residuals; rows sum to 1") as info:
        rng = np.random.default_rng(99)
        fit = fit_gaussian_mle(rng.normal(0.3, 0.01, 100_000))
        err_mu = abs(float(fit.mean[0]) - 0.3)
        err_s = abs(float(fit.std[0]) / 0.01 - 1)
        assert err_mu <= 1e-3 and err_s <= 0.05
        grid = build_grid(StateBox((-0.5, -0.5), (0.5, 0.5)), (10, 10))
        means = rng.uniform(-0.7, 0.7, size=(100, 2))
        from datamdp.estimator import GaussianFit
        T = mdp_from_gaussian(means[:, None, :], GaussianFit(np.zeros(2), np.array([0.05, 0.05]), 10),
                              grid, InputSet([0.0])).T
        dev = float(np.abs(T.sum(axis=-1) - 1).max())
        info.update(mu_err=f"{err_mu:.1e}", std_rel_err=f"{err_s:.1e}", row_sum_dev=f"{dev:.1e}")
        assert dev <= 1e-12


SMALL = {
    "system": {"family": "jet", "tau": 0.01, "noise_scale": 0.01, "inputs": [-0.5, 0.0, 0.5], "seed": 5},
    "grid": {"counts": [4, 4]},
    "sbf": {"freeze": {"psi": 0.047}, "bounds": {"q": [0.0, 0.01], "q3": [0.0, 16.0]}},
    "scenario": {"eps1": 0.04, "beta1": 0.01, "beta2": 0.01, "mu": 0.005, "L_g": 0.04, "Q": 1e-8,
                 "N": 40, "M": 20},
    "imdp": {"eps_bar": 0.2, "beta_bar": 0.2},
    "mle": {"n_hat": 2000, "pilot": 8},
    "spec": {"safe_box": [[-0.5, 0.5], [-0.5, 0.5]], "horizon": 3, "epsilon": 0.05, "init": [0.0, 0.0]},
}


def test_10_invariants(capsys, tmp_path):
    with criterion(capsys, 10, "projection bound, paired noise, worker invariance, bit-exact files") as info:
        rng = np.random.default_rng(10)
        g = build_grid(StateBox((-0.5, -0.5), (0.5, 0.5)), (21, 21))
        x = rng.uniform(-0.5, 0.5, size=(100_000, 2))
        assert np.linalg.norm(g.project(x).point - x, axis=1).max() <= g.eta

        sys_ = jet_engine_system(seed=3)
        y1 = sys_.step_stream([0.1, -0.2], [0.25], sys_.noise_stream("pair"), 4097)
        y2 = sys_.step_stream([0.1, -0.2], [0.25], sys_.noise_stream("pair"), 4097)
        assert y1.tobytes() == y2.tobytes()

        cfg = parse_config(copy.deepcopy(SMALL))
        c1, _ = run_certify(cfg, workers=1)
        c2, _ = run_certify(cfg, workers=3)
        assert art.dumps(c1) == art.dumps(c2)
        a1 = run_abstract(cfg, "imdp", workers=1)
        a2 = run_abstract(cfg, "imdp", workers=3)
        assert art.dumps(a1) == art.dumps(a2)
        art.save(tmp_path / "abstraction_imdp.json", a1)
        p1 = run_synthesize(cfg, tmp_path / "abstraction_imdp.json")
        p2 = run_synthesize(cfg, tmp_path / "abstraction_imdp.json")
        assert art.dumps(p1) == art.dumps(p2)

        art.save(tmp_path / "certificate.json", c1)
        art.save(tmp_path / "policy.json", p1)
        cert, cdoc = art.read_certificate(tmp_path / "certificate.json")
        ab = art.read_abstraction(tmp_path / "abstraction_imdp.json")
        pol = art.read_policy(tmp_path / "policy.json")
        art.save(tmp_path / "c2.json", {**cdoc, "certificate": cert.to_dict()})
        art.save(tmp_path / "a2.json", art.abstraction_doc(ab.model, seeds=ab.seeds, extra=ab.extra))
        art.save(tmp_path / "p2.json", {**art.policy_doc(pol), "abstraction": p1["abstraction"]})
        for a, b in (("certificate", "c2"), ("abstraction_imdp", "a2"), ("policy", "p2")):
            assert (tmp_path / f"{a}.json").read_bytes() == (tmp_path / f"{b}.json").read_bytes()
        info["files"] = 3


@pytest.mark.slow
def test_11_mle_vs_model_closed_loop(capsys, tmp_path):
    with criterion(capsys, 11, "MLE pipeline keeps 10 jet runs in [-0.5,0.5]^2, bounded error CSV") as info:
        cfg = str(CONFIGS / "jet_compare.yaml")
        out = str(tmp_path)
        for mode in ("mle", "model"):
            assert main(["abstract", "--config", cfg, "--out", out, "--mode", mode]) == 0
            assert main(["synthesize", "--config", cfg, "--out", out,
                         "--abstraction", f"{out}/abstraction_{mode}.json"]) == 0
        assert main(["simulate", "--config", cfg, "--out", out, "--policy", f"{out}/policy_mle.json",
                     "--compare-policy", f"{out}/policy_model.json"]) == 0
        ab = json.loads((tmp_path / "abstraction_mle.json").read_text())
        assert ab["extra"]["n_hat"] == 100_000
        assert ab["grid"]["counts"] == [20, 20]
        sim = json.loads((tmp_path / "simulation_policy_mle.json").read_text())
        assert sim["runs"] == 10 and sim["safe_runs"] == 10
        runs = sorted((tmp_path / "sim_policy_mle").glob("run_*.csv"))
        assert len(runs) == 10
        err = np.loadtxt(tmp_path / "errors_policy_mle_vs_policy_model.csv", delimiter=",", skiprows=1)
        assert err.shape == (10 * 6, 3)
        assert np.all(np.isfinite(err[:, 2])) and err[:, 2].max() <= math.sqrt(2)
        info.update(safe_runs=f"{sim['safe_runs']}/10", max_error=round(float(err[:, 2].max()), 4))
