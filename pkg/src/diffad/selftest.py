"""Built-in verification suites for `diffad selftest`.

Three suites: exact roundtrips with constant noise backends, the analytic
Gaussian denoiser's closed forms and convergence, and metric agreement with
brute-force oracles.  A mutation hook exists so CI can prove the roundtrip
suite actually bites: `--mutate sign-flip` negates the noise estimate inside
the inversion loop and must turn the suite red.
"""

from __future__ import annotations

import numpy as np

from .backends import AnalyticGaussianDenoiser, ConstantDenoiser, GaussianWorldModel, analytic_gaussian_eps
from .ddim import LatentTensor, PromptCondition, invert, reconstruct
from .metrics import auroc, average_precision, f1_max, pro_score
from .schedule import ScheduleConfig, build_plan, build_schedule


class _SignFlippedDenoiser:
    """Mutation fixture: corrupts the noise estimate during inversion only."""

    def __init__(self, inner):
        self.inner = inner
        self.flip = True

    def predict_eps(self, latent, base_t, prompt=None):
        eps = self.inner.predict_eps(latent, base_t, prompt)
        return -eps if self.flip else eps


def roundtrip_suite(mutate: str | None = None) -> list[str]:
    """Exact-inverse checks for constant backends over several loop depths."""
    failures = []
    schedule = build_schedule(ScheduleConfig())
    plan = build_plan(1000, 50)
    rng = np.random.default_rng(11)
    prompt = PromptCondition(text="an image of a fixture", guidance_weight=3.5)
    for value in (0.0, 0.7, -0.3):
        backend = ConstantDenoiser(value)
        if mutate == "sign-flip":
            backend = _SignFlippedDenoiser(backend)
        for t_prime in (1, 5, 10, 30, 50):
            z = LatentTensor(rng.standard_normal((2, 8, 8)).astype(np.float32))
            if mutate == "sign-flip":
                backend.flip = True
            z_noisy = invert(z, backend, prompt, plan, t_prime, schedule)
            if mutate == "sign-flip":
                backend.flip = False
            z_back = reconstruct(z_noisy, backend, prompt, plan, t_prime, schedule)
            err = float(np.abs(z_back.data - z.data).max())
            if err > 1e-6:
                failures.append(f"roundtrip value={value} t_prime={t_prime}: max err {err:.3e}")
    return failures


def analytic_suite() -> list[str]:
    """Closed-form identity and density-convergence checks."""
    failures = []
    schedule = build_schedule(ScheduleConfig())
    plan = build_plan(1000, 50)
    world = GaussianWorldModel(mean=0.0, std=1.0)
    rng = np.random.default_rng(5)
    z = rng.standard_normal((1, 16, 16))
    for t in plan.base_indices:
        a = schedule.alpha_bars[t]
        eps = analytic_gaussian_eps(z, t, world, schedule)
        expected = np.sqrt(1.0 - a) * z
        if np.abs(eps - expected).max() > 1e-6:
            failures.append(f"unit-world closed form off at base step {t}")
    prompt = PromptCondition(text=None)
    rms = {}
    z0 = LatentTensor(rng.standard_normal((1, 10, 10)).astype(np.float32))
    for steps in (25, 50):
        p = build_plan(1000, steps)
        backend = AnalyticGaussianDenoiser(world, schedule)
        z_rt = reconstruct(invert(z0, backend, prompt, p, steps, schedule), backend, prompt, p, steps, schedule)
        rms[steps] = float(np.sqrt(np.mean((z_rt.data - z0.data) ** 2)))
    if not rms[50] < rms[25]:
        failures.append(f"roundtrip RMS not improving with plan density: {rms}")
    return failures


def metrics_suite() -> list[str]:
    """Spot checks of the metric implementations against tiny oracles."""
    failures = []
    scores = [0.1, 0.4, 0.35, 0.8]
    labels = [0, 0, 1, 1]
    # all-pairs oracle: positives {0.35, 0.8} vs negatives {0.1, 0.4}
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in (0.35, 0.8) for n in (0.1, 0.4))
    if abs(auroc(scores, labels) - wins / 4.0) > 1e-12:
        failures.append("auroc disagrees with the pairwise oracle")
    if abs(auroc(scores, labels) + auroc(scores, [1 - l for l in labels]) - 1.0) > 1e-12:
        failures.append("auroc complement identity broken")
    if abs(average_precision([0.9, 0.8, 0.2], [1, 1, 0]) - 1.0) > 1e-12:
        failures.append("average precision wrong on perfect ranking")
    if abs(f1_max([0.9, 0.1], [1, 0]) - 1.0) > 1e-12:
        failures.append("f1_max wrong on perfect separation")
    gt = np.zeros((8, 8), dtype=np.uint8)
    gt[2:4, 2:4] = 1
    if abs(pro_score([gt.astype(float)], [gt]) - 1.0) > 1e-12:
        failures.append("pro_score wrong on a perfect map")
    return failures


def run_selftest(mutate: str | None = None) -> int:
    """Run all suites; print one pass/fail line each; nonzero exit on failure."""
    suites = {
        "roundtrip": lambda: roundtrip_suite(mutate),
        "analytic-denoiser": analytic_suite,
        "metric-oracles": metrics_suite,
    }
    status = 0
    for name, fn in suites.items():
        failures = fn()
        if failures:
            status = 1
            print(f"[FAIL] {name}: {len(failures)} failure(s)")
            for f in failures:
                print(f"       - {f}")
        else:
            print(f"[ok]   {name}")
    return status
