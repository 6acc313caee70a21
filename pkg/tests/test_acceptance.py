"""Acceptance gate: ten end-to-end checks with pinned tolerances and time
budgets, one printed verdict per criterion (run with -s to see them).

Each check builds its own oracle: adaptive quadrature for the kernel, dense
sampling for the hull extrema, a literal ungrouped row assembly, LP solves
for the inner adversary, and Monte Carlo rollouts for the certificates.
"""

import time
from dataclasses import dataclass, replace

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import linprog
from scipy.stats import norm

from nndm_synth.fixtures import (
    directional_dynamics,
    random_network,
    reach_avoid_2d,
    vehicle_3d,
)
from nndm_synth.geometry import (
    HyperRect,
    Polytope,
    build_grid,
    post_image_hull,
    rect_hull,
    whitening_transform,
)
from nndm_synth.imdp import evaluate_strategy_upper, robust_value_iteration
from nndm_synth.networks import evaluate
from nndm_synth.pipeline import (
    apply_refinement,
    build_abstraction,
    gap_stats,
    run_pipeline,
    synthesize,
)
from nndm_synth.refinement import RefinementConfig, refine_round
from nndm_synth.relaxation import relax
from nndm_synth.transitions import (
    extremal_means,
    gaussian_box_mass,
    min_mass_over_hull,
    KernelTarget,
    transition_row,
)


def _report(num: int, ok: bool, note: str) -> None:
    print(f"\ncriterion {num:2d}: {'PASS' if ok else 'FAIL'} - {note}")
    assert ok, f"criterion {num}: {note}"


# -- 1: kernel vs adaptive quadrature -----------------------------------------


def test_criterion_1_kernel_matches_quadrature():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for i in range(1000):
        n = 1 + i % 3
        z = rng.normal(0.0, 2.0, n)
        if i % 7 == 0:
            z = z + rng.choice([-8.0, 8.0], size=n)  # exercise the tail branch
        lo = z + rng.uniform(-4.0, 1.0, n)
        hi = lo + rng.uniform(0.05, 4.0, n)
        got = float(gaussian_box_mass(z, lo, hi))
        want = 1.0
        for zi, li, ui in zip(z, lo, hi):
            val, _ = quad(norm.pdf, li - zi, ui - zi, epsabs=1e-13, epsrel=1e-13)
            want *= val
        worst = max(worst, abs(got - want))
    dt = time.perf_counter() - t0
    _report(1, worst < 1e-8 and dt < 10.0,
            f"max |error| {worst:.2e} over 1000 instances in {dt:.1f}s (budget 1e-8, 10s)")


# -- 2: vertex minimum equals dense minimum over the hull ---------------------


def test_criterion_2_vertex_minimum_is_hull_minimum():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(200):
        m = int(rng.integers(4, 9))
        verts = rng.normal(0.0, 1.3, (m, 2))
        poly = Polytope(vertices=verts)
        t_lo = rng.uniform(-2.5, 0.5, 2)
        target = KernelTarget.from_rect(HyperRect(t_lo, t_lo + rng.uniform(0.3, 2.5, 2)))
        got = min_mass_over_hull(poly, target)
        # 10^4 points covering conv(H): all vertices, then convex combinations
        # drawn both near the boundary and uniformly inside
        w_edge = rng.dirichlet(0.3 * np.ones(m), size=5000 - m)
        w_bulk = rng.dirichlet(np.ones(m), size=5000)
        pts = np.vstack([verts, w_edge @ verts, w_bulk @ verts])
        dense = float(gaussian_box_mass(pts, target.lo, target.hi).min())
        worst = max(worst, got - dense)  # dense includes the vertices, so >= 0
    dt = time.perf_counter() - t0
    _report(2, worst <= 1e-6 and dt < 60.0,
            f"max (vertex min - dense min) {worst:.2e} over 200 instances in {dt:.1f}s "
            f"(budget 1e-6, 60s)")


# -- 3: extremal means dominate the exact hull extrema ------------------------


def test_criterion_3_extremal_means_dominate():
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    worst_slack = np.inf
    for i in range(1000):
        n = 1 + i % 3
        hull_lo = rng.uniform(-2.0, 0.5, n)
        hull_hi = hull_lo + rng.uniform(0.1, 2.5, n)
        t_lo = rng.uniform(-3.0, 1.0, n)
        t_hi = t_lo + rng.uniform(0.1, 2.0, n)
        z_min, z_max = extremal_means(hull_lo, hull_hi, t_lo, t_hi)
        pts = 45 if n < 3 else 13
        axes = [np.linspace(hull_lo[l], hull_hi[l], pts) for l in range(n)]
        zz = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        vals = gaussian_box_mass(zz, t_lo, t_hi)
        hi_slack = float(gaussian_box_mass(z_max, t_lo, t_hi) - vals.max())
        lo_slack = float(vals.min() - gaussian_box_mass(z_min, t_lo, t_hi))
        worst_slack = min(worst_slack, hi_slack, lo_slack)
    dt = time.perf_counter() - t0
    _report(3, worst_slack >= -1e-12 and dt < 60.0,
            f"min dominance slack {worst_slack:.2e} over 1000 instances in {dt:.1f}s "
            f"(budget -1e-12, 60s)")


# -- 4: grouped rows bit-identical to per-target assembly ----------------------


def _naive_row(grid, source, action, bounds):
    """Literal per-cell row assembly, no target grouping."""
    poly = post_image_hull(bounds, grid.cells[source])
    hull = rect_hull(poly)
    lows, highs = grid.boxes()
    n = grid.num_cells
    lower = np.empty(n)
    upper = np.empty(n)
    for q in range(n):
        z_min, z_max = extremal_means(hull.lo, hull.hi, lows[q], highs[q])
        upper[q] = gaussian_box_mass(z_max, lows[q], highs[q])
        if np.all(highs[q] >= hull.lo) and np.all(lows[q] <= hull.hi):
            lower[q] = gaussian_box_mass(poly.vertices, lows[q], highs[q]).min()
        else:
            lower[q] = gaussian_box_mass(z_min, lows[q], highs[q])
    lower = np.minimum(lower, upper)
    dom = grid.domain
    dz_min, dz_max = extremal_means(hull.lo, hull.hi, dom.lo, dom.hi)
    ul = float(np.clip(1.0 - gaussian_box_mass(dz_max, dom.lo, dom.hi), 0.0, 1.0))
    uu = float(np.clip(1.0 - gaussian_box_mass(dz_min, dom.lo, dom.hi), 0.0, 1.0))
    keep = upper >= 1e-12
    targets = np.flatnonzero(keep).astype(np.int64)
    klo = np.where(lower[keep] >= 1e-12, lower[keep], 0.0)
    return targets, klo, upper[keep], ul, uu


def test_criterion_4_grouping_equivalence():
    t0 = time.perf_counter()
    nd = directional_dynamics(
        2, 20, 3,
        {"east": (0.5, 0.0), "north": (0.0, 0.5), "west": (-0.5, 0.0)},
        seed=3, contraction=0.6,
    )
    transform = whitening_transform(0.2 * np.eye(2))
    grid = build_grid(HyperRect([-2.0, -2.0], [2.0, 2.0]), transform, (10, 10))
    assert grid.num_cells == 100
    mismatches = 0
    for source in range(grid.num_cells):
        for action in nd.actions:
            b = relax(nd, action, transform, grid.cells[source])
            row = transition_row(grid, source, action, b)
            targets, lo, up, ul, uu = _naive_row(grid, source, action, b)
            same = (
                np.array_equal(row.targets, targets)
                and np.array_equal(row.lower, lo)
                and np.array_equal(row.upper, up)
                and row.unsafe_lower == ul
                and row.unsafe_upper == uu
            )
            mismatches += 0 if same else 1
    dt = time.perf_counter() - t0
    _report(4, mismatches == 0 and dt < 30.0,
            f"{mismatches} mismatching rows of 300 (10x10 grid, 3 actions) in {dt:.1f}s "
            f"(budget bit-identical, 30s)")


# -- 5: relaxation soundness at the 5x100 scale --------------------------------


def test_criterion_5_relaxation_soundness():
    t0 = time.perf_counter()
    transform = whitening_transform(0.2 * np.eye(2))
    regions = [
        HyperRect([-2.0, -2.0], [0.0, 0.0]),
        HyperRect([0.0, 0.0], [2.0, 2.0]),
        HyperRect([-1.0, -1.0], [1.0, 1.0]),
        HyperRect([-3.0, -0.5], [3.0, 0.5]),
    ]
    rng = np.random.default_rng(505)
    worst = -np.inf
    checked = 0
    for k, act in enumerate(("relu", "tanh", "sigmoid")):
        nd = random_network(2, 100, 5, activation=act, seed=50 + k)
        for region in regions:
            b = relax(nd, "a0", transform, region)
            z = rng.uniform(region.lo, region.hi, size=(100_000, 2))
            x = z @ transform.inverse.T
            w = evaluate(nd, "a0", x) @ transform.matrix.T
            lo = z @ b.A_lo.T + b.b_lo
            hi = z @ b.A_hi.T + b.b_hi
            worst = max(worst, float(np.max(lo - w)), float(np.max(w - hi)))
            checked += 1
    dt = time.perf_counter() - t0
    _report(5, worst <= 1e-9 and dt < 300.0,
            f"max envelope violation {worst:.2e} over {checked} (region, action) pairs "
            f"x 1e5 samples, 5x100 relu/tanh/sigmoid, in {dt:.1f}s (budget 1e-9, 300s)")


# -- 6: robust value iteration vs LP oracle ------------------------------------


@dataclass
class _Product:
    accepting: np.ndarray
    sink: np.ndarray
    rows: dict
    num_actions: int

    @property
    def num_states(self) -> int:
        return len(self.accepting)

    def row(self, s, a):
        return self.rows[(s, a)]


def _random_imdp(seed, n_live=14, n_actions=2, degenerate=False):
    rng = np.random.default_rng(seed)
    n = n_live + 2
    accepting = np.zeros(n, bool)
    accepting[n_live] = True
    sink = np.zeros(n, bool)
    sink[n_live + 1] = True
    rows = {}
    for s in range(n_live):
        for a in range(n_actions):
            k = int(rng.integers(3, 6))
            others = rng.choice(n_live, size=k - 1, replace=False)
            frozen = n_live + int(rng.integers(0, 2))
            targets = np.sort(np.r_[others, frozen]).astype(np.int64)
            p = 0.4 * (targets == frozen) + 0.6 * rng.dirichlet(np.ones(k))
            if degenerate:
                lo = up = p
            else:
                lo = p * rng.uniform(0.5, 1.0, k)
                up = p + (1.0 - p) * rng.uniform(0.0, 0.5, k)
            rows[(s, a)] = (targets, lo, up)
    return _Product(accepting, sink, rows, n_actions)


def _lp_extreme(vals, lo, up, maximize):
    c = -np.asarray(vals, float) if maximize else np.asarray(vals, float)
    res = linprog(c, A_eq=np.ones((1, len(vals))), b_eq=[1.0],
                  bounds=np.column_stack([lo, up]), method="highs")
    assert res.status == 0
    return -res.fun if maximize else res.fun


def _lp_jacobi(product, sweeps=400, tol=1e-11):
    frozen = product.accepting | product.sink
    V = product.accepting.astype(float)
    for _ in range(sweeps):
        new = V.copy()
        for s in range(product.num_states):
            if frozen[s]:
                continue
            new[s] = max(
                _lp_extreme(V[t], lo, up, maximize=False)
                for t, lo, up in (product.row(s, a) for a in range(product.num_actions))
            )
        moved = float(np.max(np.abs(new - V)))
        V = new
        if moved < tol:
            break
    return V


def test_criterion_6_value_iteration_vs_lp_oracle():
    t0 = time.perf_counter()
    worst_lp = 0.0
    for seed in (61, 67):
        prod = _random_imdp(seed)
        got = robust_value_iteration(prod, tol=1e-10, max_sweeps=5000)
        assert got.converged
        worst_lp = max(worst_lp, float(np.max(np.abs(got.values - _lp_jacobi(prod)))))

    worst_deg = 0.0
    for seed in (71, 73):
        prod = _random_imdp(seed, degenerate=True)
        got = robust_value_iteration(prod, tol=1e-10, max_sweeps=5000)
        frozen = prod.accepting | prod.sink
        V = prod.accepting.astype(float)
        for _ in range(3000):
            new = V.copy()
            for s in range(prod.num_states):
                if frozen[s]:
                    continue
                new[s] = max(
                    float(lo @ V[t])
                    for t, lo, _ in (prod.row(s, a) for a in range(prod.num_actions))
                )
            moved = float(np.max(np.abs(new - V)))
            V = new
            if moved < 1e-13:
                break
        worst_deg = max(worst_deg, float(np.max(np.abs(got.values - V))))
    dt = time.perf_counter() - t0
    _report(6, worst_lp < 1e-6 and worst_deg < 2e-6 and dt < 60.0,
            f"max |VI - LP oracle| {worst_lp:.2e} (budget 1e-6), degenerate "
            f"{worst_deg:.2e} (budget 2e-6), 16-state IMDPs, in {dt:.1f}s")


# -- 7 and 8 share the 2D fixture ----------------------------------------------


@pytest.fixture(scope="module")
def fixture_2d():
    return reach_avoid_2d()


@pytest.fixture(scope="module")
def run_2d(fixture_2d):
    nd, config = fixture_2d
    return run_pipeline(config, nd=nd, monte_carlo=True)


def test_criterion_7_monte_carlo_consistency(run_2d):
    v = run_2d.validation
    flagged = v["num_inconsistent"]
    ok = (
        flagged == 0
        and v["trials"] == 10_000
        and len(v["cells"]) == 20
        and run_2d.timings["total"] < 900.0
    )
    _report(7, ok,
            f"{flagged} of {len(v['cells'])} start cells with 99% CI disjoint from "
            f"[p_lower, p_upper] at {v['trials']} trials each, pipeline "
            f"{run_2d.timings['total']:.1f}s (budget 0 flagged, 900s)")


def test_criterion_8_refinement_shrinks_the_gap(fixture_2d, run_2d):
    t0 = time.perf_counter()
    nd, config = fixture_2d
    base_mean, _ = gap_stats(run_2d.abstraction.grid, run_2d.p_lower, run_2d.p_upper)

    ab = build_abstraction(nd, config)
    synth = synthesize(ab, config.dfa)
    n0 = ab.grid.num_cells
    rc = RefinementConfig(per_round=int(np.ceil(0.05 * n0)), rounds=5)
    domain_vol = ab.grid.domain.volume
    invariants_ok = True
    for _ in range(5):
        outcome = refine_round(ab.grid, ab.imdp, synth.p_lower, synth.p_upper, rc, ab.bounds)
        if not outcome.splits:
            break
        apply_refinement(ab, outcome)
        synth = synthesize(ab, config.dfa)
        # partition invariant: volumes add up and every center finds its cell
        vols = sum(c.volume for c in ab.grid.cells)
        lows, highs = ab.grid.boxes()
        owners = ab.grid.locate(0.5 * (lows + highs))
        invariants_ok &= abs(vols - domain_vol) <= 1e-9 * domain_vol
        invariants_ok &= bool(np.array_equal(owners, np.arange(ab.grid.num_cells)))
        invariants_ok &= bool(np.all(synth.p_lower <= synth.p_upper + 1e-12))
        try:
            ab.imdp.validate()
        except ValueError:
            invariants_ok = False
    refined_mean, _ = gap_stats(ab.grid, synth.p_lower, synth.p_upper)
    dt = time.perf_counter() - t0
    _report(8, refined_mean < base_mean and invariants_ok and dt < 900.0,
            f"volume-weighted mean gap {base_mean:.4f} -> {refined_mean:.4f} after 5 rounds "
            f"({rc.per_round} splits/round), invariants {'held' if invariants_ok else 'BROKEN'}, "
            f"in {dt:.1f}s (budget strict decrease, 900s)")


# -- 9: 3D scalability smoke ----------------------------------------------------


def test_criterion_9_three_dimensional_scale():
    t0 = time.perf_counter()
    nd, config = vehicle_3d()
    config.threads = 4
    ab = build_abstraction(nd, config)
    synth = synthesize(ab, config.dfa, config.vi_tolerance, config.vi_max_sweeps)
    dt = time.perf_counter() - t0
    ok = (
        dt < 1800.0
        and ab.grid.num_cells >= 1500
        and len(nd.actions) == 7
        and nd.dim == 3
        and synth.lower.converged
        and synth.upper.converged
    )
    _report(9, ok,
            f"{ab.grid.num_cells} cells, 7 actions, 4x50 networks: abstraction + synthesis "
            f"in {dt:.1f}s, VI sweeps {synth.lower.sweeps}+{synth.upper.sweeps} "
            f"(budget >= 1500 cells, 1800s)")


# -- 10: bitwise determinism across thread counts -------------------------------


def test_criterion_10_thread_determinism(fixture_2d, tmp_path):
    t0 = time.perf_counter()
    nd, config = fixture_2d
    outputs = {}
    for threads in (1, 8):
        out = tmp_path / f"t{threads}"
        run_pipeline(replace(config, threads=threads), nd=nd, outdir=str(out))
        outputs[threads] = {
            name: (out / name).read_bytes()
            for name in ("regions.csv", "strategy.json", "refinement.jsonl")
        }
    dt = time.perf_counter() - t0
    same = all(outputs[1][k] == outputs[8][k] for k in outputs[1])
    _report(10, same and dt < 1800.0,
            f"regions.csv/strategy.json/refinement.jsonl byte-identical at threads 1 vs 8 "
            f"in {dt:.1f}s (budget identical, 1800s)")
