"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test reports a single PASS/FAIL line through the ``criterion`` fixture;
the lines are repeated in the terminal summary under "acceptance criteria".
"""

import math

import numpy as np
import pytest

from nsvdelay import estimates as est
from nsvdelay.attractor import pullback_sweep, regularity_split, semidistance, zero_cloud
from nsvdelay.delay import (DelaySpec, PhysicalParams, ProcessState, check_hypotheses,
                            ev2_distance_sq, ev2_norm_sq)
from nsvdelay.io import csv_text, load_checkpoint, save_checkpoint, snapshot_bytes
from nsvdelay.measure import (build_measure, constant_rho, depth_doubling_table, functional)
from nsvdelay.spectral import Grid, norm, random_field, shear_field, trilinear_b
from nsvdelay.stepper import ForcingSpec, StepperConfig, evolve, simulate
from oracles import dense_trilinear, scalar_dde


def _params(grid, h, nu=1.0, alpha=1.0):
    return PhysicalParams.for_grid(grid, nu, alpha, h)


def _periodic_forcing(grid, seed, kmax=3, omega=1.0):
    rng = np.random.default_rng(seed)
    return ForcingSpec.periodic(random_field(grid, rng, kmax=kmax, norm_value=1.0, space="H"),
                                random_field(grid, rng, kmax=kmax, norm_value=0.5, space="H"),
                                omega)


def test_criterion_01_operator_identities(criterion):
    rng = np.random.default_rng(101)
    worst_vvv = worst_skew = 0.0
    for grid in (Grid(2, 64), Grid(3, 16)):
        for _ in range(200):
            u, v, w = (random_field(grid, rng, slope=float(rng.uniform(0, 2)), norm_value=1.0)
                       for _ in range(3))
            scale = norm(u, "V") * norm(v, "V") * norm(w, "V")
            worst_vvv = max(worst_vvv, abs(trilinear_b(u, v, v)) / (norm(u, "V") * norm(v, "V") ** 2))
            worst_skew = max(worst_skew, abs(trilinear_b(u, v, w) + trilinear_b(u, w, v)) / scale)
    worst_dense = 0.0
    for dim in (2, 3):
        grid = Grid(dim, 4)
        for _ in range(20):
            u, v, w = (random_field(grid, rng, norm_value=1.0) for _ in range(3))
            ref = dense_trilinear(u.coeffs, v.coeffs, w.coeffs, 4, dim)
            worst_dense = max(worst_dense, abs(trilinear_b(u, v, w) - ref))
    ok = worst_vvv <= 1e-12 and worst_skew <= 1e-12 and worst_dense <= 1e-12
    criterion(ok, f"b(u,v,v) rel {worst_vvv:.1e}, skew rel {worst_skew:.1e}, "
                  f"n=4 dense oracle abs {worst_dense:.1e} (limit 1e-12)")
    assert ok


def _shear_amplitude(grid, dt, t_end, gain, h):
    params = _params(grid, h)
    cfg = StepperConfig(dt, "imex_cnab2")
    s = ProcessState.initial(shear_field(grid, 1.0, 1), dt=dt, h=h)
    final = evolve(s, t_end, ForcingSpec.zero(), DelaySpec(gain=gain), cfg, params)
    return final.u, 2.0 * final.u.coeffs[0, 0, 1].real


def test_criterion_02_linear_oracles(criterion):
    grid = Grid(2, 64)
    u0 = shear_field(grid, 1.0, 1)
    exact = math.exp(-1.0 / 2.0)
    errs = []
    for dt in (2e-3, 1e-3):
        u, _ = _shear_amplitude(grid, dt, 1.0, 0.0, 0.5)
        errs.append(norm(u - u0 * exact, "H") / norm(u0 * exact, "H"))
    ratio = errs[0] / errs[1]
    kappa, h, t_end = 0.1, 0.5, 2.0
    ref = scalar_dde(1.0, t_end, 1.0, kappa, h, 2.0)(t_end)
    derrs = []
    for dt in (2e-3, 1e-3):
        _, a = _shear_amplitude(grid, dt, t_end, kappa, h)
        derrs.append(abs(a - ref) / abs(ref))
    dratio = derrs[0] / derrs[1]
    ok = (errs[1] <= 1e-3 and 3.2 <= ratio <= 4.8 and derrs[1] <= 1e-3 and 3.2 <= dratio <= 4.8)
    criterion(ok, f"Voigt decay rel err {errs[1]:.2e}, halving ratio {ratio:.2f}; "
                  f"delay oracle rel err {derrs[1]:.2e}, ratio {dratio:.2f}")
    assert ok


def test_criterion_03_process_axioms(criterion):
    grid = Grid(2, 64)
    params = _params(grid, 0.5)
    f = _periodic_forcing(grid, 3)
    g = DelaySpec(gain=0.1, pointwise="tanh")
    cfg = StepperConfig(0.01)
    s = ProcessState.initial(random_field(grid, np.random.default_rng(4), kmax=5, norm_value=1.0),
                             dt=0.01, h=0.5, tau=-0.3)
    same = evolve(s, s.t, f, g, cfg, params)
    identity = same is s or np.array_equal(same.u.coeffs, s.u.coeffs)
    direct = evolve(s, 1.0, f, g, cfg, params)
    exact = True
    for mid in (-0.29, 0.0, 0.37, 0.99):
        split = evolve(evolve(s, mid, f, g, cfg, params), 1.0, f, g, cfg, params)
        exact &= all(np.array_equal(a.coeffs, b.coeffs)
                     for a, b in zip(split.history.fields, direct.history.fields))
        exact &= np.array_equal(split.prev_rhs, direct.prev_rhs)
    ok = identity and exact
    criterion(ok, f"U(tau,tau)=id {identity}; cocycle bit-exact at 4 split points {exact}")
    assert ok


def test_criterion_04_hypothesis_windows(criterion):
    params = PhysicalParams(1.0, 1.0, 0.5, 1.0)
    nu = alpha = lam = c6 = 1.0
    cg = 0.0
    sigma, beta = 0.5, 0.25
    win = check_hypotheses(params, DelaySpec(), sigma, beta)
    direct_sigma_max = (2 * nu - 4 * cg * math.sqrt(c6) * (1 / lam + 1)) / (1 / lam + alpha ** 2)
    direct_eta1 = (2 * nu - sigma / lam - alpha ** 2 * sigma
                   - (beta + 4 * cg * math.sqrt(c6)) * (1 / lam + 1)) / alpha ** 2
    e1 = abs(win.sigma_max - 1.0) + abs(win.sigma_max - direct_sigma_max)
    e2 = abs(win.eta1 - 0.5) + abs(win.eta1 - direct_eta1)
    ok = e1 <= 1e-12 and e2 <= 1e-12 and params.C6 == c6
    criterion(ok, f"sigma_max={win.sigma_max!r} (err {e1:.1e}), eta1={win.eta1!r} (err {e2:.1e})")
    assert ok


def _decay_cases():
    g2, g3 = Grid(2, 64), Grid(3, 16)
    rng = np.random.default_rng(55)
    return [
        ("2D discrete, constant forcing", g2, DelaySpec(gain=0.1),
         ForcingSpec.constant(random_field(g2, rng, kmax=3, norm_value=1.0, space="H"))),
        ("2D variable lag, periodic forcing", g2,
         DelaySpec(kind="variable", gain=0.1, tau=(0.3, 0.1, 2.0)), _periodic_forcing(g2, 56)),
        ("3D distributed tanh, decaying forcing", g3,
         DelaySpec(kind="distributed", gain=0.1, pointwise="tanh", kernel=tuple([2.0] * 51)),
         ForcingSpec.exp_windowed(random_field(g3, rng, kmax=2, norm_value=1.0, space="H"), 0.5)),
        ("3D no delay, unforced", Grid(3, 8), DelaySpec(), ForcingSpec.zero()),
    ]


def test_criterion_05_decay_certificates(criterion):
    h, dt = 0.5, 0.01
    margins = []
    ok = True
    for j, (label, grid, g, f) in enumerate(_decay_cases()):
        params = _params(grid, h)
        win = check_hypotheses(params, g, 0.1, 0.05)
        u0 = random_field(grid, np.random.default_rng(j), kmax=3, norm_value=2.0)
        run = simulate(ProcessState.initial(u0, dt=dt, h=h), 10 * h, f, g, StepperConfig(dt), params)
        for cert in (est.certify_decay(run, win), est.certify_window_integral(run, win)):
            ok &= cert.passed and cert.margin >= 0
            margins.append(cert.margin)
    grid = Grid(2, 64)
    params = _params(grid, h)
    zero = ProcessState.initial(random_field(grid, np.random.default_rng(0)) * 0.0, dt=dt, h=h)
    run = simulate(zero, 10 * h, ForcingSpec.zero(), DelaySpec(gain=0.1), StepperConfig(dt), params)
    win = check_hypotheses(params, DelaySpec(gain=0.1), 0.1, 0.1)
    zero_margins = [est.certify_decay(run, win).margin, est.certify_window_integral(run, win).margin]
    ok &= all(m == 0.0 for m in zero_margins)
    criterion(ok, f"{len(margins)} certificates, min margin {min(margins):.3e}; "
                  f"zero-run margins {zero_margins}")
    assert ok


ABSORB = {"sigma": 0.4, "beta": 0.05, "h": 0.5, "dt": 0.02, "kappa": 0.1}


def _absorbing_setup(n):
    grid = Grid(2, n)
    h = ABSORB["h"]
    params = _params(grid, h)
    f = _periodic_forcing(grid, 6)
    g = DelaySpec(gain=ABSORB["kappa"])
    win = check_hypotheses(params, g, ABSORB["sigma"], ABSORB["beta"])
    return grid, params, f, g, win


def test_criterion_06_absorbing_entry(criterion):
    grid, params, f, g, win = _absorbing_setup(64)
    h, dt = ABSORB["h"], ABSORB["dt"]
    cfg = StepperConfig(dt)
    targets = np.geomspace(0.1, 10.0, 5)
    family = [random_field(grid, np.random.default_rng(100 + j), kmax=4,
                           norm_value=x / math.sqrt(1 + h)) for j, x in enumerate(targets)]
    t_star = 0.0
    entry = est.absorbing_entry_depth(win, f, t_star, float(targets.max() ** 2))
    verdicts, worst = [], 0.0
    for depth in (math.ceil(entry / h) * h, math.ceil(1.5 * entry / h) * h):
        runs = [simulate(ProcessState.initial(u, dt=dt, h=h, tau=t_star - depth), t_star, f, g,
                         cfg, params) for u in family]
        norms = [math.sqrt(ev2_norm_sq(r.initial)) for r in runs]
        assert min(norms) == pytest.approx(0.1) and max(norms) == pytest.approx(10.0)
        cert = est.certify_absorbing(runs, win)
        verdicts.append(cert.verdict)
        worst = max(worst, float(np.max(cert.lhs / cert.rhs)))
    ok = all(v == "pass" for v in verdicts)
    criterion(ok, f"entry depth {entry:.2f}; verdicts {verdicts}; max ||x(t*)||^2 / R1^2 = {worst:.2e}")
    assert ok


def test_criterion_07_contraction(criterion):
    grid, params, f, g, win = _absorbing_setup(32)
    h, dt = ABSORB["h"], ABSORB["dt"]
    cfg = StepperConfig(dt)
    t_star = 0.0
    base = math.ceil(est.absorbing_entry_depth(win, f, t_star, 100.0) / h) * h
    rng = np.random.default_rng(77)
    all_pass, monotone, series = True, True, []
    for _ in range(3):
        pair = [random_field(grid, rng, kmax=4, norm_value=x / math.sqrt(1 + h))
                for x in rng.uniform(0.1, 10.0, 2)]
        dist = []
        for extra in (0.0, 1.0, 2.0, 4.0):
            tau = t_star - base - extra
            runs = [simulate(ProcessState.initial(u, dt=dt, h=h, tau=tau), t_star, f, g, cfg,
                             params, keep_trajectory=True) for u in pair]
            all_pass &= est.contraction_psi(runs[0], runs[1], win)[1].passed
            dist.append(math.sqrt(ev2_distance_sq(runs[0].final, runs[1].final)))
        monotone &= all(b <= a + 1e-6 for a, b in zip(dist, dist[1:]))
        series.append(dist)
    ok = all_pass and monotone
    criterion(ok, f"pair certificates pass {all_pass}; distances monotone {monotone} "
                  f"(first pair {', '.join(f'{d:.2e}' for d in series[0])})")
    assert ok


def test_criterion_08_pullback_collapse(criterion):
    grid = Grid(2, 64)
    params = _params(grid, 0.5)
    sigma = 0.97 * check_hypotheses(params, DelaySpec(), 0.5, 0.1).sigma_max
    family = [(random_field(grid, np.random.default_rng(j), kmax=1, norm_value=x), None)
              for j, x in enumerate([0.5, 2.0, 5.0])]
    depths = [1.0 * 2 ** i for i in range(5)]
    res = pullback_sweep(0.0, [-d for d in depths], family, ForcingSpec.zero(), DelaySpec(),
                         StepperConfig(0.02), params)
    d = [semidistance(c, zero_cloud(c)) for c in res.clouds]
    # sigma bounds squared norms, so squared distances are compared
    ratios = [(d[i + 1] / d[i]) ** 2 / math.exp(-sigma * (depths[i + 1] - depths[i]))
              for i in range(4)]
    ok = all(0.5 <= r <= 2.0 for r in ratios)
    criterion(ok, f"sigma={sigma:.3f}; observed/predicted decay per doubling "
                  f"{', '.join(f'{r:.3f}' for r in ratios)} (band [0.5, 2])")
    assert ok


def test_criterion_09_regularity_split(criterion):
    grid = Grid(2, 64)
    params = _params(grid, 0.5)
    rng = np.random.default_rng(9)
    f = ForcingSpec.constant(random_field(grid, rng, slope=1.0, norm_value=1.0, space="H"))
    g = DelaySpec(gain=0.2)
    s = ProcessState.initial(random_field(grid, rng, kmax=5, norm_value=1.0), dt=0.01, h=0.5)
    lin = regularity_split(s, 2.0, 0.05, f, g, StepperConfig(0.01, convection=False), params,
                           sigma=0.1)
    gap = float(np.max(lin.additivity_gap))
    nonlin = regularity_split(s, 2.0, 0.05, f, g, StepperConfig(0.01), params, sigma=0.1)
    cert = next(c for c in nonlin.certificates if c.id == "split-w")
    ok = gap <= 1e-10 and cert.passed
    criterion(ok, f"linear |u-v-w|/|u| max {gap:.1e}; nonlinear split-w bound holds at "
                  f"{cert.times.size} times {cert.passed} (margin {cert.margin:.3e})")
    assert ok


def test_criterion_10_invariant_measures(criterion):
    grid = Grid(2, 8)
    h = 0.25
    params = _params(grid, h)
    f = _periodic_forcing(grid, 2, kmax=2, omega=2 * math.pi)
    g = DelaySpec(gain=0.1)
    cfg = StepperConfig(0.05, convection=False)
    rng = np.random.default_rng(2)
    random_field(grid, rng, kmax=2)
    random_field(grid, rng, kmax=2)
    rho = constant_rho(random_field(grid, rng, kmax=2, norm_value=1.0))
    phis = [functional(x) for x in ("h_sq", "v_sq", "mode:0:0,1:re", "mode:1:1,1:im")]
    rows = depth_doubling_table(phis, rho, 0.0, 1.0, 4.0, 3, 20, f, g, cfg, params)
    decreasing, final = True, {}
    for phi in phis:
        res = [r[3] for r in rows if r[0] == phi.id]
        decreasing &= all(b < a for a, b in zip(res, res[1:]))
        final[phi.id] = res[-1]
    below = all(v < 1e-4 for v in final.values())
    one = functional("one")
    ones = [build_measure(0.0, rho, -4.0 * 2 ** i, 20 * 2 ** i, f, g, cfg, params,
                          richardson=True).integrate(one) for i in range(4)]
    exact_one = all(v == 1.0 for v in ones)
    win = check_hypotheses(params, g, 0.1, 0.1)
    deep = build_measure(0.0, rho, -32.0, 160, f, g, cfg, params, richardson=True)
    r1 = est.absorbing_radius_sq(win, f, 0.0)
    inside = float(deep.support_norms_sq().max()) <= r1
    ok = decreasing and below and exact_one and inside
    criterion(ok, f"residuals decrease {decreasing}; deepest "
                  f"{', '.join(f'{k}={v:.1e}' for k, v in final.items())}; "
                  f"int 1 = 1 exactly {exact_one}; support inside R1 ball {inside}")
    assert ok


def test_criterion_11_determinism_and_persistence(criterion, tmp_path):
    grid = Grid(2, 64)
    params = _params(grid, 0.5)
    f = _periodic_forcing(grid, 12)
    g = DelaySpec(gain=0.1)
    cfg = StepperConfig(0.01)
    s = ProcessState.initial(random_field(grid, np.random.default_rng(13), kmax=5, norm_value=1.0),
                             dt=0.01, h=0.5)

    def artifacts():
        run = simulate(s, 1.0, f, g, cfg, params, keep_trajectory=True)
        return (csv_text(("t", "h", "v", "a", "d"), run.record_rows()).encode(),
                snapshot_bytes(run.final.u, run.final.t), run.trajectory.tobytes())

    reruns_identical = artifacts() == artifacts()
    mid = evolve(s, 0.43, f, g, cfg, params)
    save_checkpoint(tmp_path / "ck", mid)
    loaded, _ = load_checkpoint(tmp_path / "ck")
    fields_equal = all(np.array_equal(a.coeffs, b.coeffs)
                       for a, b in zip(mid.history.fields, loaded.history.fields))
    a = evolve(mid, 1.0, f, g, cfg, params)
    b = evolve(loaded, 1.0, f, g, cfg, params)
    resumed_equal = np.array_equal(a.u.coeffs, b.u.coeffs)
    ok = reruns_identical and fields_equal and resumed_equal
    criterion(ok, f"byte-identical reruns {reruns_identical}; checkpoint fields bit-exact "
                  f"{fields_equal}; resumed run bit-exact {resumed_equal}")
    assert ok
