"""Reverse-diffusion posterior samplers, unregularized and equivariance-regularized.

Every guided sampler differentiates its losses through the Tweedie map (full
chain rule through the score model) on a per-step tape. Chain noise and
regularizer element draws come from independent child generators of the seed,
so an arm with the regularizer disabled is bit-identical to its baseline and
an arm with it enabled sees the same chain noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import (
    NonFiniteValue,
    Tensor,
    backward,
    l2_norm,
    matmul,
    mul,
    norm_sq,
    reshape,
    sqrt,
    square,
    sub,
    tsum,
)
from .equi import EquiLossConfig, EquivariantFunction, equi_loss, equicon_loss
from .models import tweedie_x0_traced
from .nn import Adam
from .operators import MeasurementOperator

__all__ = [
    "SamplerConfig",
    "StepRecord",
    "Trajectory",
    "SamplerError",
    "step_indices",
    "ancestral_sample",
    "ddim_sample",
    "dps_sample",
    "equi_dps_sample",
    "psld_sample",
    "equi_psld_sample",
    "equicon_psld_sample",
    "resample_sample",
    "equi_resample_sample",
    "equicon_resample_sample",
    "sitcom_sample",
    "equi_sitcom_sample",
    "stochastic_resample",
]

ALGORITHMS = (
    "ancestral",
    "ddim",
    "dps",
    "equi-dps",
    "psld",
    "equi-psld",
    "equicon-psld",
    "resample",
    "equi-resample",
    "equicon-resample",
    "sitcom",
    "equi-sitcom",
)


class SamplerError(RuntimeError):
    pass


@dataclass
class SamplerConfig:
    algorithm: str = "dps"
    steps: int = 1000
    zeta: float = 1.0
    zeta_normalized: bool = False
    eta_psld: float = 0.5
    gamma_psld: float = 0.05
    gamma_resample: float = 40.0
    delta: float = 1e-2
    k_meas: int = 10
    k_equi: int = 0
    inner_lr: float = 5e-2
    closeness_weight: float = 1e-2
    equi: EquiLossConfig = field(default_factory=EquiLossConfig)
    seed: int = 0
    ddim_eta: float = 0.0
    resample_steps: object = "all"  # "all" | list of step positions
    guidance_norm: str = "squared"  # "squared" | "plain"
    detach_regularizer: bool = False
    record_states: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if min(self.zeta, self.eta_psld, self.gamma_psld, self.gamma_resample) < 0:
            raise ValueError("guidance weights must be >= 0")
        if self.k_meas < 0 or self.k_equi < 0:
            raise ValueError("inner step counts must be >= 0")
        if self.guidance_norm not in ("squared", "plain"):
            raise ValueError("guidance_norm must be 'squared' or 'plain'")
        if isinstance(self.equi, dict):
            self.equi = EquiLossConfig(**self.equi)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["equi"] = self.equi.to_dict()
        return out


@dataclass
class StepRecord:
    t: int
    meas_loss: float
    equi_loss: float


@dataclass
class Trajectory:
    records: list[StepRecord]
    final: np.ndarray
    counts: dict
    config: dict
    states: list | None = None
    x0_estimates: list | None = None

    def assert_finite(self):
        if not np.all(np.isfinite(self.final)):
            raise SamplerError("trajectory final state is not finite")


def step_indices(T: int, N: int) -> list[int]:
    """Evenly spaced subsequence of 1..T with N entries ending at T."""
    if not 1 <= N <= T:
        raise ValueError(f"steps must lie in 1..{T}, got {N}")
    return [(j * T) // N for j in range(1, N + 1)]


def _pairs(T: int, N: int) -> list[tuple[int, int]]:
    idx = step_indices(T, N)
    lower = [0] + idx[:-1]
    return list(zip(reversed(idx), reversed(lower)))


def _ancestral_coefs(sched, t: int, s: int) -> tuple[float, float, float]:
    abar_t, abar_s = sched.abar(t), sched.abar(s)
    alpha_eff = abar_t / abar_s
    beta_eff = 1.0 - alpha_eff
    c1 = np.sqrt(alpha_eff) * (1.0 - abar_s) / (1.0 - abar_t)
    c2 = np.sqrt(abar_s) * beta_eff / (1.0 - abar_t)
    sig = np.sqrt(beta_eff * (1.0 - abar_s) / (1.0 - abar_t))
    return c1, c2, sig


def _ddim_coefs(sched, t: int, s: int, eta: float) -> tuple[float, float, float]:
    abar_t, abar_s = sched.abar(t), sched.abar(s)
    sig = eta * np.sqrt((1.0 - abar_s) / (1.0 - abar_t)) * np.sqrt(1.0 - abar_t / abar_s)
    dir_coef = np.sqrt(max(1.0 - abar_s - sig * sig, 0.0))
    return np.sqrt(abar_s), dir_coef, sig


def _reg_plan(N: int, equi_cfg: EquiLossConfig, enabled: bool) -> list[bool]:
    """Which step positions (0-based from the chain start) evaluate the regularizer."""
    if not enabled or equi_cfg.lam <= 0.0:
        return [False] * N
    active = N - int(np.floor(equi_cfg.early_stop_frac * N))
    return [(i < active) and (i % equi_cfg.period == 0) for i in range(N)]


def expected_reg_count(N: int, equi_cfg: EquiLossConfig) -> int:
    active = N - int(np.floor(equi_cfg.early_stop_frac * N))
    return int(np.ceil(active / equi_cfg.period)) if equi_cfg.lam > 0 else 0


def _meas_loss(y: np.ndarray, op: MeasurementOperator, x0t: Tensor, norm: str) -> Tensor:
    resid = sub(y, op.apply(x0t))
    return norm_sq(resid) if norm == "squared" else l2_norm(resid)


def _grad_or_raise(leaf: Tensor, t: int) -> np.ndarray:
    g = leaf.grad
    if g is None:
        return np.zeros(leaf.shape)
    if not np.all(np.isfinite(g)):
        raise SamplerError(f"non-finite gradient at step t={t}")
    return g


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    root = np.random.default_rng(seed)
    noise, equi = root.spawn(2)
    return noise, equi


# -- unconditional samplers -------------------------------------------------------


def _unconditional(model, cfg: SamplerConfig, n: int | None, use_ddim: bool) -> Trajectory:
    sched = model.schedule
    shape = model.data_shape if hasattr(model, "data_shape") else (model.prior.dim,)
    full = shape if n is None else (n,) + tuple(shape)
    rng_noise, _ = _rngs(cfg.seed)
    x = rng_noise.standard_normal(full)
    records: list[StepRecord] = []
    states = [] if cfg.record_states else None
    evals = 0
    for t, s in _pairs(sched.T, cfg.steps):
        x0 = ( x + (1.0 - sched.abar(t)) * model.score(x, t) ) / np.sqrt(sched.abar(t))
        evals += 1
        if use_ddim:
            a, b, sig = _ddim_coefs(sched, t, s, cfg.ddim_eta)
            eps_hat = (x - np.sqrt(sched.abar(t)) * x0) / np.sqrt(1.0 - sched.abar(t))
            x = a * x0 + b * eps_hat
            if sig > 0:
                x = x + sig * rng_noise.standard_normal(full)
        else:
            c1, c2, sig = _ancestral_coefs(sched, t, s)
            eps = rng_noise.standard_normal(full)
            x = c1 * x + c2 * x0 + sig * eps
        if not np.all(np.isfinite(x)):
            raise SamplerError(f"non-finite state at step t={t}")
        records.append(StepRecord(t=t, meas_loss=0.0, equi_loss=0.0))
        if states is not None:
            states.append(x.copy())
    traj = Trajectory(records=records, final=x, config=cfg.to_dict(),
                      counts={"score_evals": evals, "guidance_grads": 0, "equi_grads": 0},
                      states=states)
    traj.assert_finite()
    return traj


def ancestral_sample(model, cfg: SamplerConfig, n: int | None = None) -> Trajectory:
    """Unconditional chain from pure noise using the ancestral transition."""
    return _unconditional(model, cfg, n, use_ddim=False)


def ddim_sample(model, cfg: SamplerConfig, n: int | None = None) -> Trajectory:
    return _unconditional(model, cfg, n, use_ddim=True)


# -- pixel-space guided samplers ---------------------------------------------------


def equi_dps_sample(model, op: MeasurementOperator, y: np.ndarray,
                    m: EquivariantFunction | None, cfg: SamplerConfig,
                    n_chains: int | None = None) -> Trajectory:
    """Ancestral chain with measurement guidance and the equivariance penalty.

    Per step: Tweedie estimate, ancestral proposal, then a single combined
    gradient step on zeta * ||y - A(x0|t)||^2 + lambda * R, both differentiated
    with respect to the current state.

    With ``n_chains``, y carries a leading chain axis and the independent
    chains run in lockstep on one batched tape (losses are additive over
    chains, so per-chain gradients are unchanged; a regularizer element draw
    is shared per step).
    """
    sched = model.schedule
    shape = model.data_shape if hasattr(model, "data_shape") else (model.prior.dim,)
    if n_chains is not None:
        shape = (n_chains,) + tuple(shape)
    rng_noise, rng_equi = _rngs(cfg.seed)
    x = rng_noise.standard_normal(shape)
    y = np.asarray(y, dtype=np.float64)

    pairs = _pairs(sched.T, cfg.steps)
    plan = _reg_plan(len(pairs), cfg.equi, m is not None)
    records: list[StepRecord] = []
    states = [] if cfg.record_states else None
    x0s = [] if cfg.record_states else None
    counts = {"score_evals": 0, "guidance_grads": 0, "equi_grads": 0}

    batched = n_chains is not None
    for i, (t, s) in enumerate(pairs):
        leaf = Tensor(x, requires_grad=True)
        try:
            x0t = tweedie_x0_traced(leaf, t, model)
            counts["score_evals"] += 1
            resid = sub(y, op.apply(x0t))
            axes = tuple(range(1, resid.data.ndim)) if batched else None
            sq = tsum(square(resid), axis=axes)  # per-chain squared residual
            per = sqrt(sq) if cfg.guidance_norm == "plain" else sq
            if cfg.zeta_normalized:
                scale = cfg.zeta / (np.sqrt(sq.data) + 1e-12)
            else:
                scale = cfg.zeta
            meas = tsum(mul(per, scale)) if batched else mul(per, scale)
            meas_record = float(np.sum(sq.data))
            total = meas
            counts["guidance_grads"] += 1
            r_val = 0.0
            if plan[i]:
                if cfg.detach_regularizer:
                    x0_leaf = Tensor(x0t.data, requires_grad=True)
                    r = equi_loss(m, x0_leaf, rng_equi, cfg.equi)
                    backward(r)
                    r_val = r.data.item()
                    reg_grad = (cfg.equi.lam * _grad_or_raise(x0_leaf, t), "x0")
                else:
                    r = equi_loss(m, x0t, rng_equi, cfg.equi)
                    r_val = r.data.item()
                    total = total + mul(r, cfg.equi.lam)
                    reg_grad = None
                counts["equi_grads"] += 1
            else:
                reg_grad = None
            backward(total)
            grad = _grad_or_raise(leaf, t)
        except NonFiniteValue as exc:
            raise SamplerError(f"non-finite value at step t={t}: {exc}") from exc

        c1, c2, sig = _ancestral_coefs(sched, t, s)
        eps = rng_noise.standard_normal(shape)
        x = c1 * x + c2 * x0t.data + sig * eps - grad
        if reg_grad is not None:
            x = x - reg_grad[0]
        if not np.all(np.isfinite(x)):
            raise SamplerError(f"non-finite state at step t={t}")
        records.append(StepRecord(t=t, meas_loss=meas_record, equi_loss=float(r_val)))
        if states is not None:
            states.append(x.copy())
            x0s.append(x0t.data.copy())

    traj = Trajectory(records=records, final=x, counts=counts, config=cfg.to_dict(),
                      states=states, x0_estimates=x0s)
    traj.assert_finite()
    return traj


def dps_sample(model, op: MeasurementOperator, y: np.ndarray, cfg: SamplerConfig,
               n_chains: int | None = None) -> Trajectory:
    return equi_dps_sample(model, op, y, None, cfg, n_chains=n_chains)


# -- latent-space guided samplers ---------------------------------------------------


def _latent_shape(ae) -> tuple[int, ...]:
    return tuple(ae.latent_shape())


def equi_psld_sample(model, ae, op: MeasurementOperator, y: np.ndarray,
                     m: EquivariantFunction | None, cfg: SamplerConfig,
                     constrained: bool = False) -> Trajectory:
    """Latent chain with measurement, gluing, and equivariance corrections.

    The probe's map should be the decoder (latent domain, pixel codomain); the
    constrained variant additionally needs the paired encoder. The gluing
    target pins measured coordinates through the decode/encode round trip;
    A^T A x0* is realized as A^T y (equal in expectation under the noise
    model). Linear operators only.
    """
    if not op.is_linear:
        raise SamplerError("latent gluing requires a linear operator")
    sched = model.schedule
    lat_shape = _latent_shape(ae)
    rng_noise, rng_equi = _rngs(cfg.seed)
    z = rng_noise.standard_normal(lat_shape)
    y = np.asarray(y, dtype=np.float64)

    pairs = _pairs(sched.T, cfg.steps)
    plan = _reg_plan(len(pairs), cfg.equi, m is not None)
    records: list[StepRecord] = []
    states = [] if cfg.record_states else None
    counts = {"score_evals": 0, "guidance_grads": 0, "equi_grads": 0}

    # pixel geometry for the gluing term
    pix_shape = None
    M = None
    aty = None

    x0_final = None
    for i, (t, s) in enumerate(pairs):
        leaf = Tensor(z, requires_grad=True)
        try:
            z0t = tweedie_x0_traced(leaf, t, model)
            counts["score_evals"] += 1
            dz = ae.decode(z0t)
            if M is None:
                pix_shape = dz.shape
                M = op.matrix(pix_shape)
                aty = (M.T @ y.reshape(-1)).reshape(pix_shape)
            meas = _meas_loss(y, op, dz, cfg.guidance_norm)
            adz = op.apply(dz)
            atadz = reshape(matmul(reshape(adz, (-1,)), M), pix_shape)
            glue_target = ae.encode(Tensor(aty) + dz - atadz)
            glue_diff = sub(z0t, glue_target)
            glue = norm_sq(glue_diff) if cfg.guidance_norm == "squared" else l2_norm(glue_diff)
            counts["guidance_grads"] += 1
            total = mul(meas, cfg.eta_psld) + mul(glue, cfg.gamma_psld)
            r_val = 0.0
            if plan[i]:
                if constrained:
                    r = equicon_loss(m, z0t, rng_equi, cfg.equi)
                else:
                    r = equi_loss(m, z0t, rng_equi, cfg.equi)
                r_val = r.data.item()
                total = total + mul(r, cfg.equi.lam)
                counts["equi_grads"] += 1
            backward(total)
            grad = _grad_or_raise(leaf, t)
        except NonFiniteValue as exc:
            raise SamplerError(f"non-finite value at step t={t}: {exc}") from exc

        c1, c2, sig = _ancestral_coefs(sched, t, s)
        eps = rng_noise.standard_normal(lat_shape)
        z = c1 * z + c2 * z0t.data + sig * eps - grad
        if not np.all(np.isfinite(z)):
            raise SamplerError(f"non-finite latent at step t={t}")
        records.append(StepRecord(t=t, meas_loss=float(meas.item()), equi_loss=float(r_val)))
        if states is not None:
            states.append(z.copy())
        x0_final = z0t.data

    final = ae.decode(Tensor(x0_final)).data
    traj = Trajectory(records=records, final=final, counts=counts, config=cfg.to_dict(),
                      states=states)
    traj.assert_finite()
    return traj


def psld_sample(model, ae, op, y, cfg: SamplerConfig) -> Trajectory:
    return equi_psld_sample(model, ae, op, y, None, cfg)


def equicon_psld_sample(model, ae, op, y, m, cfg: SamplerConfig) -> Trajectory:
    if m is not None and not m.has_inverse:
        raise SamplerError("constrained variant needs a probe with an inverse map")
    return equi_psld_sample(model, ae, op, y, m, cfg, constrained=True)


def stochastic_resample(z0y: np.ndarray, z_prime: np.ndarray, gamma: float,
                        var_t: float, rng: np.random.Generator, abar_s: float) -> np.ndarray:
    """Posterior-weighted blend mapping the optimized estimate back to time t.

    z_t ~ N((var_t * sqrt(abar) * z0y + gamma * z') / (var_t + gamma),
            var_t * gamma / (var_t + gamma) I); the gamma -> infinity limit
    keeps the unconditional proposal's mean.
    """
    if var_t <= 0.0:  # t = 0: no noise left, the estimate is exact
        return np.sqrt(abar_s) * z0y
    mean = (var_t * np.sqrt(abar_s) * z0y + gamma * z_prime) / (var_t + gamma)
    std = np.sqrt(var_t * gamma / (var_t + gamma))
    return mean + std * rng.standard_normal(z0y.shape)


def equi_resample_sample(model, ae, op: MeasurementOperator, y: np.ndarray,
                         m: EquivariantFunction | None, cfg: SamplerConfig,
                         constrained: bool = False) -> Trajectory:
    """DDIM chain with hard data consistency by inner descent on resample steps.

    The inner loop minimizes 0.5 ||y - A(D(z))||^2 plus the (optionally
    constrained) equivariance penalty by plain gradient descent, then maps the
    optimized estimate back to the current time by a stochastic blend.
    """
    sched = model.schedule
    lat_shape = _latent_shape(ae)
    rng_noise, rng_equi = _rngs(cfg.seed)
    z = rng_noise.standard_normal(lat_shape)
    y = np.asarray(y, dtype=np.float64)

    pairs = _pairs(sched.T, cfg.steps)
    members = set(range(len(pairs))) if cfg.resample_steps == "all" else set(cfg.resample_steps)
    resample_events = [i for i in range(len(pairs)) if i in members]
    plan_events = _reg_plan(len(resample_events), cfg.equi, m is not None)
    event_reg = dict(zip(resample_events, plan_events))

    records: list[StepRecord] = []
    states = [] if cfg.record_states else None
    counts = {"score_evals": 0, "guidance_grads": 0, "equi_grads": 0, "inner_steps": 0}

    for i, (t, s) in enumerate(pairs):
        x0 = (z + (1.0 - sched.abar(t)) * model.score(z, t)) / np.sqrt(sched.abar(t))
        counts["score_evals"] += 1
        a, b, sig = _ddim_coefs(sched, t, s, cfg.ddim_eta)
        eps_hat = (z - np.sqrt(sched.abar(t)) * x0) / np.sqrt(1.0 - sched.abar(t))
        z_prime = a * x0 + b * eps_hat
        if sig > 0:
            z_prime = z_prime + sig * rng_noise.standard_normal(lat_shape)

        meas_val = 0.0
        r_val = 0.0
        if i in members:
            reg_on = event_reg[i] and m is not None
            g_el = cfg.equi.draw_element(m.action, rng_equi) if reg_on else None
            v = x0.copy()
            initial = None
            for it in range(cfg.k_meas):
                leaf = Tensor(v, requires_grad=True)
                try:
                    resid = norm_sq(sub(y, op.apply(ae.decode(leaf))))
                    meas_val = resid.item()
                    if meas_val < cfg.delta**2:
                        break
                    total = mul(resid, 0.5)
                    if reg_on:
                        r = (equicon_loss if constrained else equi_loss)(m, leaf, g_el, cfg.equi)
                        r_val = r.data.item()
                        total = total + mul(r, cfg.equi.lam)
                        counts["equi_grads"] += 1
                    tot_val = total.item()
                    if initial is None:
                        initial = tot_val
                    elif tot_val > 10.0 * max(initial, 1e-12):
                        raise SamplerError(f"inner loop diverged at step t={t}")
                    backward(total)
                    counts["guidance_grads"] += 1
                    counts["inner_steps"] += 1
                    v = v - cfg.inner_lr * _grad_or_raise(leaf, t)
                except NonFiniteValue as exc:
                    raise SamplerError(f"non-finite value at step t={t}: {exc}") from exc
            z = stochastic_resample(v, z_prime, cfg.gamma_resample, 1.0 - sched.abar(s),
                                    rng_noise, sched.abar(s))
        else:
            z = z_prime
        if not np.all(np.isfinite(z)):
            raise SamplerError(f"non-finite latent at step t={t}")
        records.append(StepRecord(t=t, meas_loss=float(meas_val), equi_loss=float(r_val)))
        if states is not None:
            states.append(z.copy())

    final = ae.decode(Tensor(z)).data
    traj = Trajectory(records=records, final=final, counts=counts, config=cfg.to_dict(),
                      states=states)
    traj.assert_finite()
    return traj


def resample_sample(model, ae, op, y, cfg: SamplerConfig) -> Trajectory:
    return equi_resample_sample(model, ae, op, y, None, cfg)


def equicon_resample_sample(model, ae, op, y, m, cfg: SamplerConfig) -> Trajectory:
    if m is not None and not m.has_inverse:
        raise SamplerError("constrained variant needs a probe with an inverse map")
    return equi_resample_sample(model, ae, op, y, m, cfg, constrained=True)


def equi_sitcom_sample(model, op: MeasurementOperator, y: np.ndarray,
                       m: EquivariantFunction | None, cfg: SamplerConfig,
                       n_chains: int | None = None) -> Trajectory:
    """Two-stage per-step refinement: measurement consistency, then equivariance.

    Stage 1 runs adaptive-moment descent on ||A(tweedie(v)) - y||^2 plus a
    closeness pull toward the step's initial state, stopping when the residual
    falls under delta^2. Stage 2 refines the same variable on the probe's
    equivariance gap. The refined state is re-noised to the next time.
    Batched chains share the stopping decision, so use a small delta when
    comparing batched arms.
    """
    sched = model.schedule
    shape = model.data_shape if hasattr(model, "data_shape") else (model.prior.dim,)
    if n_chains is not None:
        shape = (n_chains,) + tuple(shape)
    rng_noise, rng_equi = _rngs(cfg.seed)
    x = rng_noise.standard_normal(shape)
    y = np.asarray(y, dtype=np.float64)

    pairs = _pairs(sched.T, cfg.steps)
    records: list[StepRecord] = []
    states = [] if cfg.record_states else None
    counts = {"score_evals": 0, "guidance_grads": 0, "equi_grads": 0,
              "inner_meas_steps": 0, "inner_equi_steps": 0}

    for i, (t, s) in enumerate(pairs):
        v = x.copy()
        opt1 = Adam(cfg.inner_lr)
        meas_val = np.inf
        for _ in range(cfg.k_meas):
            leaf = Tensor(v, requires_grad=True)
            try:
                x0 = tweedie_x0_traced(leaf, t, model)
                counts["score_evals"] += 1
                resid = norm_sq(sub(op.apply(x0), y))
                meas_val = resid.item()
                if meas_val < cfg.delta**2:
                    break
                close = norm_sq(sub(leaf, x))
                backward(resid + mul(close, cfg.closeness_weight))
                counts["guidance_grads"] += 1
                counts["inner_meas_steps"] += 1
                grads = {"v": _grad_or_raise(leaf, t)}
                params = {"v": v}
                opt1.step(params, grads)
                v = params["v"]
            except NonFiniteValue as exc:
                raise SamplerError(f"non-finite value at step t={t}: {exc}") from exc

        r_val = 0.0
        if m is not None and cfg.k_equi > 0:
            g_el = cfg.equi.draw_element(m.action, rng_equi)
            opt2 = Adam(cfg.inner_lr)
            for _ in range(cfg.k_equi):
                leaf = Tensor(v, requires_grad=True)
                try:
                    r = equi_loss(m, leaf, g_el, cfg.equi)
                    r_val = r.data.item()
                    if r_val < cfg.delta**2:
                        break
                    backward(r)
                    counts["equi_grads"] += 1
                    counts["inner_equi_steps"] += 1
                    grads = {"v": _grad_or_raise(leaf, t)}
                    params = {"v": v}
                    opt2.step(params, grads)
                    v = params["v"]
                except NonFiniteValue as exc:
                    raise SamplerError(f"non-finite value at step t={t}: {exc}") from exc

        # backward consistency, then forward re-noising to the next time index
        x0_hat = (v + (1.0 - sched.abar(t)) * model.score(v, t)) / np.sqrt(sched.abar(t))
        counts["score_evals"] += 1
        abar_s = sched.abar(s)
        eta = rng_noise.standard_normal(shape)
        x = np.sqrt(abar_s) * x0_hat + np.sqrt(1.0 - abar_s) * eta if s > 0 else x0_hat
        if not np.all(np.isfinite(x)):
            raise SamplerError(f"non-finite state at step t={t}")
        records.append(StepRecord(t=t, meas_loss=float(meas_val if np.isfinite(meas_val) else 0.0),
                                  equi_loss=float(r_val)))
        if states is not None:
            states.append(x.copy())

    traj = Trajectory(records=records, final=x, counts=counts, config=cfg.to_dict(),
                      states=states)
    traj.assert_finite()
    return traj


def sitcom_sample(model, op, y, cfg: SamplerConfig, n_chains: int | None = None) -> Trajectory:
    return equi_sitcom_sample(model, op, y, None, cfg, n_chains=n_chains)
