"""Fast invariant suite behind ``driftlab selftest``.

One line per check; exit status 0 only if every invariant holds. These
are the structural identities the estimators rest on, runnable in
seconds without fitting anything.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from .autodiff import Tensor, conv1d, zero_grads
from .checkpoint import load_params, save_params
from .estimators import AnalyticDenoiserNet, DenoisingEstimator, analytic_em_denoiser, coeffs
from .nets import ArchSpec, build, expected_param_count, param_count
from .optim import Adam
from .schedules import VPSchedule, ve_sigma, vp_coeffs
from .sde import DriftSpec, drift_eval, load_dataset, make_increments, save_dataset, simulate


def _check_vp_identity():
    taus = np.linspace(0.0, 1.0, 1001)
    for g0, g1 in [(0.0, 20.0), (0.1, 20.0), (1.0, 10.0)]:
        beta, sigma = vp_coeffs(taus, g0, g1)
        if np.max(np.abs(beta**2 + sigma**2 - 1.0)) >= 1e-12:
            raise AssertionError(f"beta^2+sigma^2 != 1 for gammas ({g0},{g1})")


def _check_monotone_schedules():
    taus = np.linspace(0.0, 1.0, 513)
    beta, _ = vp_coeffs(taus, 0.0, 20.0)
    assert np.all(np.diff(beta) < 0), "beta not strictly decreasing"
    phi = ve_sigma(taus, 0.03, 15.0)
    assert np.all(np.diff(phi) > 0), "phi not strictly increasing"


def _check_inversion_identity():
    sched = VPSchedule()
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        tau = rng.uniform(sched.eps, 1.0)
        delta = rng.uniform(1e-4, 1.0)
        mu = rng.standard_normal()
        x = rng.standard_normal()
        den = analytic_em_denoiser(np.array([x]), np.array([mu]), tau, delta, sched)
        c = coeffs(tau, delta, sched)
        err = abs(c.a * x + c.b * den[0] - mu)
        assert err <= 1e-12 * max(1.0, abs(mu), abs(c.a * x)), "inversion identity broken"


def _check_score_reparameterisation():
    sched = VPSchedule()
    delta, mu = 1 / 256, 0.8
    net = AnalyticDenoiserNet(lambda y: np.full_like(y, mu), delta, sched)
    from .estimators import score_from_net

    rng = np.random.default_rng(1)
    for tau in (0.05, 0.4, 1.0):
        beta, sigma = sched.coeff_pair(tau)
        beta, s2 = float(beta), float(sigma) ** 2
        x = rng.standard_normal((32, 1))
        s = score_from_net(net, tau, x, np.zeros((32, 1)), sched, 1.0)
        ref = -(x - beta * mu * delta) / (beta**2 * delta + s2)
        assert np.allclose(s, ref, rtol=1e-12, atol=1e-12), "score reparameterisation broken"


def _check_telescoping_and_drifts():
    spec = DriftSpec("mu3")
    ds = simulate(spec, 1.0, 4, 32, 1 / 32, seed=5)
    pairs = make_increments(ds)
    z = pairs.z.reshape(4, 32, 1)
    total = z.sum(axis=1)
    assert np.allclose(total, ds.states[:, -1] - ds.states[:, 0], atol=1e-12), \
        "increment telescoping broken"
    rng = np.random.default_rng(2)
    l96 = DriftSpec("mu5", dim=8, forcing=8.0)
    for _ in range(10):
        y = rng.standard_normal(8) * 2
        adv = drift_eval(l96, y) + y - l96.forcing
        assert abs(float(y @ adv)) < 1e-10 * max(1.0, np.linalg.norm(y) ** 3), \
            "Lorenz-96 advection not energy conserving"
    sep = DriftSpec("mu4", dim=4, coupling=0.0)
    y = rng.standard_normal(4)
    base = drift_eval(sep, y)
    y2 = y.copy()
    y2[1] += 0.5
    moved = drift_eval(sep, y2)
    assert moved[0] == base[0] and moved[2] == base[2] and moved[3] == base[3], \
        "separable bistable drift couples coordinates"


def _check_deterministic_orbit():
    spec = DriftSpec("mu3")
    q0 = lambda rng, n: np.full((n, 1), 0.2)
    a = simulate(spec, 0.0, 1, 16, 1 / 16, seed=1, q0=q0)
    b = simulate(spec, 0.0, 1, 16, 1 / 16, seed=77, q0=q0)
    assert np.array_equal(a.states, b.states), "sigma=0 orbit depends on the seed"


def _check_autodiff_and_conv():
    x = Tensor(np.array([[[1.0, 2.0, 3.0]]]))
    w = Tensor(np.array([[[1.0, 0.0, -1.0]]]))
    out = conv1d(x, w, padding=1)
    assert np.array_equal(out.data, [[[-2.0, -2.0, 2.0]]]), "conv oracle broken"
    net = build(ArchSpec(kind="dn", dim=3, width_scale=0.25), seed=3)
    rng = np.random.default_rng(4)
    for p in net.params.values():
        p.data = p.data + 0.05 * rng.standard_normal(p.data.shape)
    tau = Tensor(rng.uniform(0.2, 1.0, (2, 1)), requires_grad=True)
    xx = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    yy = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    zero_grads(net.params)
    loss = (net(tau, xx, yy) ** 2).sum()
    loss.backward()
    name, p = next(iter(net.params.items()))
    step = 1e-6
    base = p.data.copy()
    flatidx = np.unravel_index(0, base.shape) if base.ndim else ()
    bump = np.zeros_like(base)
    if base.ndim:
        bump[flatidx] = step
    else:
        bump = np.asarray(step)
    p.data = base + bump
    f_plus = float((net(Tensor(tau.data), Tensor(xx.data), Tensor(yy.data)) ** 2).sum().data)
    p.data = base - bump
    f_minus = float((net(Tensor(tau.data), Tensor(xx.data), Tensor(yy.data)) ** 2).sum().data)
    p.data = base
    fd = (f_plus - f_minus) / (2 * step)
    ad = p.grad[flatidx] if base.ndim else float(p.grad)
    assert abs(ad - fd) / max(1.0, abs(fd)) < 1e-4, f"gradcheck failed for {name}"


def _check_adam():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=1e-2)
    before = p.data.copy()
    opt.step({"p": np.zeros(2)})
    assert np.array_equal(p.data, before), "Adam moved on zero gradient"
    for _ in range(61):
        opt.end_epoch(1.0)
    assert abs(opt.lr - 9e-3) < 1e-15, "plateau decay incorrect"
    for _ in range(61 * 80):
        opt.end_epoch(1.0)
    assert opt.lr >= 1e-3, "learning rate went below the floor"


def _check_file_roundtrips():
    with tempfile.TemporaryDirectory() as tmp:
        rng = np.random.default_rng(6)
        params = {"a.w": rng.standard_normal((3, 2)), "a.b": rng.standard_normal(2)}
        path = Path(tmp) / "x.params"
        save_params(path, params)
        loaded = load_params(path)
        for k in params:
            assert np.array_equal(loaded[k].view(np.uint64),
                                  params[k].view(np.uint64)), "checkpoint not bit-exact"
        ds = simulate(DriftSpec("mu3"), 1.0, 2, 8, 1 / 8, seed=7)
        dpath = Path(tmp) / "x.sdds"
        save_dataset(dpath, ds)
        re = load_dataset(dpath)
        assert np.array_equal(re.states.view(np.uint64),
                              ds.states.view(np.uint64)), "dataset not bit-exact"


def _check_baseline_identities():
    from .baselines import (NWEstimator, hermite_functions, spline_design,
                            spline_knots)

    knots = spline_knots(3, 8, -2.0, 2.0)
    y = np.linspace(-2.0, 2.0, 257)
    assert np.max(np.abs(spline_design(y, knots, 3).sum(axis=1) - 1.0)) < 1e-10, \
        "B-spline partition of unity broken"
    grid = np.linspace(-15.0, 15.0, 2000)
    basis = hermite_functions(grid, 11)
    gram = np.trapezoid(basis[:, :, None] * basis[:, None, :], grid, axis=0)
    assert np.max(np.abs(gram - np.eye(11))) < 1e-8, "Hermite orthonormality broken"
    est = NWEstimator(y=np.array([[[0.0]]]), z=np.array([[[0.5]]]),
                      bandwidth=1.0, delta=1.0, horizon=1.0)
    assert abs(est.estimate(np.array([[0.0]]))[0, 0] - 0.5) < 1e-12, \
        "NW single-pair value wrong"


def _check_estimator_behaviour():
    sched = VPSchedule()
    drift = lambda y: -(y**3) + y
    net = AnalyticDenoiserNet(drift, 1 / 256, sched)
    est = DenoisingEstimator(net, sched, 1 / 256, k=8, tau=1.0, target_scale="raw")
    y = np.linspace(-1, 1, 5)[:, None]
    out = est.estimate(y, np.random.default_rng(8))
    assert np.allclose(out, drift(y), rtol=1e-10, atol=1e-12), \
        "ideal-denoiser estimate not exact"
    draws = est.draw_noise(y, np.random.default_rng(9), k=1)
    single = est.estimate_single(y, draws[0])
    avg = est._singles(y, draws).mean(axis=0)
    assert np.array_equal(single, avg), "K=1 average differs from single sample"


def _check_param_accounting():
    for d in (8, 12):
        dn = expected_param_count(ArchSpec(kind="dn", dim=d))
        fp = expected_param_count(ArchSpec(kind="fc_plus", dim=d))
        fpc = expected_param_count(ArchSpec(kind="fc_plus_conv", dim=d))
        assert fp >= dn, "fc_plus smaller than dn"
        assert abs(fpc - dn) / dn < 0.01, "fc_plus_conv not within 1% of dn"
        built = param_count(build(ArchSpec(kind="dn", dim=d), seed=0))
        assert built == dn, "closed-form count mismatch"


CHECKS = [
    ("VP identity beta^2+sigma^2=1", _check_vp_identity),
    ("schedule monotonicity", _check_monotone_schedules),
    ("estimator inversion identity", _check_inversion_identity),
    ("score reparameterisation", _check_score_reparameterisation),
    ("increment telescoping and drift zoo", _check_telescoping_and_drifts),
    ("deterministic sigma=0 orbit", _check_deterministic_orbit),
    ("autodiff conv oracle and gradcheck", _check_autodiff_and_conv),
    ("Adam fixed point and plateau", _check_adam),
    ("bit-exact file round trips", _check_file_roundtrips),
    ("baseline identities", _check_baseline_identities),
    ("denoising estimator behaviour", _check_estimator_behaviour),
    ("parameter accounting", _check_param_accounting),
]


def run_selftest() -> int:
    failures = 0
    for label, fn in CHECKS:
        try:
            fn()
        except Exception as exc:
            failures += 1
            print(f"FAIL {label}: {exc}")
        else:
            print(f"ok   {label}")
    if failures:
        print(f"{failures} of {len(CHECKS)} checks failed")
        return 2
    print(f"all {len(CHECKS)} checks passed")
    return 0
