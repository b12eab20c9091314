"""USAC-style estimation loop with optional neural minimal-sample filtering.

Iteration accounting
--------------------
Without the filter every processed minimal sample counts as one iteration
against the adaptive bound ``log(1 - eta) / log(1 - eps^m)``. With the filter,
a batch of ``N`` drawn samples is ranked and only the top ``k`` are solved;
each processed sample then counts as ``N / k`` iterations, i.e. the samples
the filter discarded are charged as rejected iterations, the same way SPRT
rejections count as iterations.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigError, DegenerateSample, NoModelFound, NotEnoughData, ShapeMismatch
from .geometry import (
    Pose,
    cheirality_select_batch,
    essential_to_fundamental,
    project_to_essential,
    homogeneous_pairs,
    sampson_error,
    sampson_error_batch,
)
from .nnfilter import score_batch
from .sampler import SamplerState, draw_batch, quality_order
from .solvers import eight_point_least_squares, solve_minimal_batch

SAMPLE_SIZE = {"essential": 5, "fundamental": 7}
PROFILES = {"large": (10_000, 500), "small": (128, 12)}
# average number of models per minimal sample, used by the SPRT design
MODELS_PER_SAMPLE = {"essential": 4.0, "fundamental": 2.38}


@dataclass
class UsacConfig:
    problem: str = "essential"
    threshold: float = 2.0
    confidence: float = 0.99
    max_models: int = 100_000
    max_iterations: int = 1_000_000
    filter: str = "off"
    batch_size: int = 10_000
    keep: int = 500
    sprt: bool = True
    sprt_epsilon: float = 0.2
    sprt_delta: float = 0.05
    sprt_time_model: float = 200.0
    lo_iterations: int = 10
    lo_multiplier: float = 4.0
    final_candidates: int = 3
    final_inner_samples: int = 8
    final_inner_size: int = 16
    solve_chunk: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.problem not in SAMPLE_SIZE:
            raise ConfigError("problem", "must be 'essential' or 'fundamental'")
        if self.filter not in ("on", "off"):
            raise ConfigError("filter", "must be 'on' or 'off'")
        if not self.threshold > 0:
            raise ConfigError("threshold", "must be positive")
        if not 0 < self.confidence < 1:
            raise ConfigError("confidence", "must lie in (0, 1)")
        if not 0 < self.keep <= self.batch_size:
            raise ConfigError("keep", "need 0 < keep <= batch_size")
        for name in ("max_models", "max_iterations", "lo_iterations", "solve_chunk", "final_candidates", "final_inner_size"):
            if not getattr(self, name) >= 1:
                raise ConfigError(name, "must be >= 1")
        if not 0 < self.sprt_delta < self.sprt_epsilon < 1:
            raise ConfigError("sprt_delta", "need 0 < sprt_delta < sprt_epsilon < 1")
        if not self.lo_multiplier >= 1:
            raise ConfigError("lo_multiplier", "must be >= 1")
        if not self.final_inner_samples >= 0:
            raise ConfigError("final_inner_samples", "must be >= 0")

    @property
    def m(self) -> int:
        return SAMPLE_SIZE[self.problem]

    def with_profile(self, name: str) -> "UsacConfig":
        if name not in PROFILES:
            raise ConfigError("profile", f"must be one of {tuple(PROFILES)}")
        N, k = PROFILES[name]
        return replace(self, batch_size=N, keep=k)


@dataclass
class EstimateResult:
    F: np.ndarray
    E: np.ndarray | None
    pose: Pose
    inliers: np.ndarray
    models_tested: int
    samples_scored: int
    samples_processed: int
    batches_drawn: int
    lo_runs: int
    iterations: float
    wall_time: float


def iterations_needed(inlier_ratio: float, m: int, confidence: float) -> float:
    """Samples needed to draw one all-inlier sample with probability ``confidence``."""
    if inlier_ratio <= 0:
        return math.inf
    p = inlier_ratio**m
    if p >= 1.0:
        return 1.0
    return max(math.log(1.0 - confidence) / math.log1p(-p), 1.0)


def count_inliers(F, correspondences, threshold):
    """``(count, indices)`` of correspondences with Sampson error <= threshold."""
    idx = np.flatnonzero(sampson_error(F, correspondences) <= threshold)
    return len(idx), idx


# ---------------------------------------------------------------------------
# SPRT


def sprt_threshold(epsilon, delta, time_model, models_per_sample):
    """Decision threshold ``A`` solving ``A = K + ln A``."""
    if not epsilon > delta:
        return math.inf
    C = (1 - delta) * math.log((1 - delta) / (1 - epsilon)) + delta * math.log(delta / epsilon)
    K = time_model * C / models_per_sample + 1.0
    A = K
    for _ in range(50):
        nxt = K + math.log(A)
        if abs(nxt - A) <= 1e-12 * A:
            break
        A = nxt
    return A


@dataclass
class SprtState:
    epsilon: float = 0.2
    delta: float = 0.05
    time_model: float = 200.0
    models_per_sample: float = 4.0
    enabled: bool = True
    A: float = field(init=False)
    rejected: int = 0
    rejected_ratio_sum: float = 0.0

    def __post_init__(self):
        self._recompute()

    def _recompute(self):
        self._eps_A, self._delta_A = self.epsilon, self.delta
        self.A = sprt_threshold(self.epsilon, self.delta, self.time_model, self.models_per_sample) if self.enabled else math.inf

    def _maybe_recompute(self):
        if abs(self.epsilon - self._eps_A) > 0.05 * self._eps_A or abs(self.delta - self._delta_A) > 0.05 * self._delta_A:
            self._recompute()

    def update_epsilon(self, ratio: float):
        if ratio > self.epsilon:
            self.epsilon = min(ratio, 1.0 - 1e-9)
            self._maybe_recompute()

    def record_rejection(self, ratio: float):
        self.rejected += 1
        self.rejected_ratio_sum += ratio
        self.delta = min(max(self.rejected_ratio_sum / self.rejected, 1e-6), self.epsilon * 0.999)
        self._maybe_recompute()


def sprt_verify(errors_in_order, threshold, state: SprtState):
    """Sequential test over Sampson errors already arranged in evaluation order.

    Returns ``(accepted, points_evaluated, inlier_count)``; the count is exact
    when accepted and covers the evaluated prefix when rejected.
    """
    inl = errors_in_order <= threshold
    n = len(inl)
    if math.isinf(state.A):
        return True, n, int(inl.sum())
    up = math.log((1 - state.delta) / (1 - state.epsilon))
    down = math.log(state.delta / state.epsilon)
    llr = np.cumsum(np.where(inl, down, up))
    cross = np.flatnonzero(llr > math.log(state.A))
    if len(cross) == 0:
        return True, n, int(inl.sum())
    j = int(cross[0]) + 1
    seen = int(inl[:j].sum())
    state.record_rejection(seen / j)
    return False, j, seen


# ---------------------------------------------------------------------------
# local optimization


def _to_F(M, problem, K1, K2):
    return essential_to_fundamental(M, K1, K2) if problem == "essential" else M


def _score(F, corr, threshold):
    e = sampson_error(F, corr)
    inl = e <= threshold
    cnt = int(inl.sum())
    return cnt, (float(e[inl].mean()) if cnt else math.inf), inl


def local_optimize(model, correspondences, config: UsacConfig, K1=None, K2=None):
    """Iterated least squares with a shrinking threshold schedule.

    ``model`` is E (calibrated) for the essential problem, else F. Returns
    ``(model, F, inlier_mask)`` of the best model by inlier count at the
    base threshold, ties going to the lower mean inlier error.
    """
    corr = np.asarray(correspondences, dtype=float)
    th = config.threshold
    F0 = _to_F(model, config.problem, K1, K2)
    cnt, mean, inl = _score(F0, corr, th)
    best = (model, F0, cnt, mean, inl)
    if cnt < 8:
        return best[0], best[1], best[4]
    cur = F0
    steps = config.lo_iterations
    for i in range(steps):
        mult = config.lo_multiplier + (1.0 - config.lo_multiplier) * (i / (steps - 1) if steps > 1 else 1.0)
        sel = sampson_error(cur, corr) <= mult * th
        if sel.sum() < 8:
            break
        try:
            M = eight_point_least_squares(corr[sel], config.problem, K1, K2)
        except DegenerateSample:
            break
        Fm = _to_F(M, config.problem, K1, K2)
        c, mu, mask = _score(Fm, corr, th)
        if c > best[2] or (c == best[2] and mu < best[3]):
            best = (M, Fm, c, mu, mask)
        cur = Fm
    return best[0], best[1], best[4]


def _signed_sampson(F, corr):
    """Algebraic residual over the Sampson denominator, sign kept, and that denominator."""
    x1, x2 = homogeneous_pairs(corr)
    Fx1 = x1 @ F.T
    Ftx2 = x2 @ F
    grad = np.sqrt(Fx1[:, 0] ** 2 + Fx1[:, 1] ** 2 + Ftx2[:, 0] ** 2 + Ftx2[:, 1] ** 2)
    return np.sum(x2 * Fx1, axis=1) / grad, grad


def _biweight_root(e, scale):
    """Square root of the biweight, i.e. the factor applied to each residual row."""
    return np.clip(1.0 - (e / scale) ** 2, 0.0, None)


def _essential_from_frame(U, V, p):
    """Essentials U R(a) diag(1,1,0) (V R(b))^T for a stack of parameter rows p = (a, b)."""
    Ua = U @ Rotation.from_rotvec(p[:, :3]).as_matrix()
    Vb = V @ Rotation.from_rotvec(p[:, 3:]).as_matrix()
    return Ua[..., :2] @ np.swapaxes(Vb[..., :2], -1, -2)


def _essential_gauss_newton(E, corr, root_w, K1, K2):
    """One weighted Gauss-Newton step on the Sampson residual, staying on the essential manifold.

    Turning both frames about their third axis by one angle leaves E
    unchanged, so that parameter of the second frame is held at zero.
    """
    U, _, Vt = np.linalg.svd(E)
    U = U * np.sign(np.linalg.det(U))
    V = Vt.T * np.sign(np.linalg.det(Vt))
    x1, x2 = homogeneous_pairs(corr)

    def residuals(p):
        F = K2.K_inv.T @ _essential_from_frame(U, V, p) @ K1.K_inv
        Fx1 = np.einsum("pij,nj->pni", F, x1)
        Ftx2 = np.einsum("pji,nj->pni", F, x2)
        grad = np.sqrt(Fx1[..., 0] ** 2 + Fx1[..., 1] ** 2 + Ftx2[..., 0] ** 2 + Ftx2[..., 1] ** 2)
        return root_w * np.einsum("ni,pni->pn", x2, Fx1) / grad

    h = 1e-7
    basis = np.eye(6)[:5]
    r = residuals(np.vstack([np.zeros(6), h * basis, -h * basis]))
    J = (r[1:6] - r[6:]).T / (2 * h)
    step = np.linalg.lstsq(J, -r[0], rcond=None)[0] @ basis
    trials = step[None] * 0.5 ** np.arange(8)[:, None]
    cost = np.sum(residuals(trials) ** 2, axis=1)
    ok = np.flatnonzero(cost <= r[0] @ r[0])
    if not len(ok):
        return E
    return _essential_from_frame(U, V, trials[ok[0] : ok[0] + 1])[0]


def _irls_step(M, F, corr, scale, config, K1, K2):
    sel = sampson_error(F, corr) <= scale
    if sel.sum() < 8:
        return None
    e, grad = _signed_sampson(F, corr[sel])
    root_w = _biweight_root(e, scale)
    if config.problem == "essential":
        M2 = _essential_gauss_newton(M, corr[sel], root_w, K1, K2)
    else:
        # algebraic rows over |grad| are Sampson residuals up to one global factor
        try:
            M2 = eight_point_least_squares(corr[sel], config.problem, K1, K2, weights=root_w / grad)
        except DegenerateSample:
            return None
    F2 = _to_F(M2, config.problem, K1, K2)
    if (sampson_error(F2, corr) <= config.threshold).sum() < 8:
        return None
    return M2, F2


def polish(model, correspondences, config: UsacConfig, K1=None, K2=None, max_steps=20):
    """Reweighted least squares with a biweight kernel shrinking to the threshold.

    The wide early kernels pull nearby starting models into one basin; the
    last stage iterates at the inlier threshold until the model settles.
    """
    corr = np.asarray(correspondences, dtype=float)
    M, F = model, _to_F(model, config.problem, K1, K2)
    th = config.threshold
    schedule = [config.lo_multiplier ** (1 - k / 4) * th for k in range(4)]
    for scale in schedule:
        for _ in range(2):
            out = _irls_step(M, F, corr, scale, config, K1, K2)
            if out is None:
                break
            M, F = out
    for _ in range(max_steps):
        out = _irls_step(M, F, corr, th, config, K1, K2)
        if out is None:
            break
        step = np.abs(out[1] - F).max()
        M, F = out
        if step < 1e-12:
            break
    return M, F


def truncated_score(F, correspondences, threshold):
    """Sum of squared Sampson errors truncated at the threshold (lower is better)."""
    e = sampson_error(F, correspondences)
    return float(np.minimum(e * e, threshold * threshold).sum())


# ---------------------------------------------------------------------------
# main loop


def _candidates(samples, config, K1, K2):
    """Solve a stack of samples; returns per-sample lists of ``(model, F)``."""
    models, valid = solve_minimal_batch(samples, config.problem, K1, K2)
    if config.problem == "essential":
        q1 = K1.normalize(samples[..., 0:2])[:, None]
        q2 = K2.normalize(samples[..., 2:4])[:, None]
        _, _, ok = cheirality_select_batch(models, q1, q2)
        valid = valid & ok
        Fs = essential_to_fundamental(np.where(valid[..., None, None], models, np.eye(3)), K1, K2)
    else:
        Fs = models
    return [[(models[b, j], Fs[b, j]) for j in np.flatnonzero(valid[b])] for b in range(len(samples))]


def _inner_starts(F, corr, cfg, K1, K2, rng):
    """Least-squares fits to random subsets of the inliers of ``F``."""
    pool = np.flatnonzero(sampson_error(F, corr) <= cfg.threshold)
    size = max(cfg.final_inner_size, 8)
    if len(pool) <= size:
        return
    for _ in range(cfg.final_inner_samples):
        sub = rng.choice(pool, size, replace=False)
        try:
            yield eight_point_least_squares(corr[sub], cfg.problem, K1, K2)
        except DegenerateSample:
            continue


def _finalize(history, corr, cfg, K1, K2, lo_runs):
    """Refine the last few best-so-far models and keep the lowest truncated score.

    Inlier count cannot tell apart refinements that differ by a couple of
    near-threshold points; the truncated quadratic can. Each candidate also
    seeds fits on random subsets of its inliers, which lets the search leave
    an optimum held in place by a few near-threshold outliers. The subset
    stream has its own generator so it never perturbs the main sampler.
    """
    rng = np.random.default_rng([cfg.seed, 1])
    best, best_score = None, math.inf

    def consider(M0, lo=True):
        nonlocal best, best_score
        M = local_optimize(M0, corr, cfg, K1, K2)[0] if lo else M0
        M, F = polish(M, corr, cfg, K1, K2)
        score = truncated_score(F, corr, cfg.threshold)
        if score < best_score:
            best, best_score = (M, F), score

    for M0, _ in reversed(history[-cfg.final_candidates :]):
        lo_runs += 1
        consider(M0)
    for M0 in list(_inner_starts(best[1], corr, cfg, K1, K2, rng)):
        consider(M0, lo=False)
    return best[0], best[1], lo_runs


def _final_pose(M, F, corr, inliers, problem, K1, K2):
    E = M if problem == "essential" else project_to_essential(K2.K.T @ F @ K1.K)
    pts = corr[inliers] if len(inliers) else corr
    q1 = K1.normalize(pts[:, 0:2])
    q2 = K2.normalize(pts[:, 2:4])
    R, t, _ = cheirality_select_batch(E, q1, q2)
    return E, Pose(R, t)


def estimate(correspondences, quality_scores, K1, K2, config: UsacConfig, network=None) -> EstimateResult:
    t_start = time.perf_counter()
    corr = np.asarray(correspondences, dtype=float)
    cfg = config
    m = cfg.m
    n = len(corr)
    if n < m:
        raise NotEnoughData(f"need {m} correspondences, have {n}")
    use_filter = cfg.filter == "on"
    if use_filter:
        if network is None:
            raise ConfigError("filter", "filter is on but no network was given")
        if network.m != m:
            raise ShapeMismatch(f"network scores {network.m}-point samples, problem needs {m}")

    rng = np.random.default_rng(cfg.seed)
    state = SamplerState(quality_order(quality_scores), m, rng)
    sprt = SprtState(cfg.sprt_epsilon, cfg.sprt_delta, cfg.sprt_time_model, MODELS_PER_SAMPLE[cfg.problem], cfg.sprt)
    order = rng.permutation(n)
    corr_ordered = corr[order]

    best = None  # (model, F)
    best_count = 0
    history = []  # every model that became the best, oldest first
    bound = math.inf
    credit = 0.0
    tested = scored = processed = batches = lo_runs = 0
    per = cfg.batch_size / cfg.keep if use_filter else 1.0
    cap = min(float(cfg.max_iterations), math.inf)

    def done():
        return credit >= bound or credit >= cap or tested >= cfg.max_models

    while not done():
        if use_filter:
            drawn = draw_batch(state, cfg.batch_size)
            scores = score_batch(network, corr[drawn])
            queue = drawn[np.argsort(-scores, kind="stable")[: cfg.keep]]
            scored += cfg.batch_size
        else:
            want = cfg.solve_chunk if math.isinf(bound) else max(1, math.ceil(min(bound, cap) - credit))
            queue = draw_batch(state, min(cfg.solve_chunk, want))
        batches += 1
        pos = 0
        while pos < len(queue) and not done():
            remaining = (min(bound, cap) - credit) / per
            size = int(min(cfg.solve_chunk, max(1, math.ceil(remaining)) if math.isfinite(remaining) else cfg.solve_chunk))
            sub = queue[pos : pos + size]
            pos += len(sub)
            for cands in _candidates(corr[sub], cfg, K1, K2):
                if done():
                    break
                credit += per
                processed += 1
                if not cands:
                    continue
                errs = sampson_error_batch(np.stack([F for _, F in cands]), corr_ordered)
                for (M, F), e in zip(cands, errs):
                    if tested >= cfg.max_models:
                        break
                    tested += 1
                    accepted, _, count = sprt_verify(e, cfg.threshold, sprt)
                    if not accepted or count <= best_count:
                        continue
                    best, best_count = (M, F), count
                    lo_runs += 1
                    M2, F2, mask = local_optimize(M, corr, cfg, K1, K2)
                    if mask.sum() > best_count:
                        best, best_count = (M2, F2), int(mask.sum())
                    history.append(best)
                    sprt.update_epsilon(best_count / n)
                    bound = iterations_needed(best_count / n, m, cfg.confidence)

    if best is None:
        raise NoModelFound("no minimal sample produced a verified model")
    M, F, lo_runs = _finalize(history, corr, cfg, K1, K2, lo_runs)
    _, inliers = count_inliers(F, corr, cfg.threshold)
    E, pose = _final_pose(M, F, corr, inliers, cfg.problem, K1, K2)
    return EstimateResult(
        F=F,
        E=E if cfg.problem == "essential" else None,
        pose=pose,
        inliers=inliers,
        models_tested=tested,
        samples_scored=scored,
        samples_processed=processed,
        batches_drawn=batches,
        lo_runs=lo_runs,
        iterations=credit,
        wall_time=time.perf_counter() - t_start,
    )
