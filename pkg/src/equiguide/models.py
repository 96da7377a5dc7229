"""Score models: exact Gaussian-mixture scores and trained epsilon-denoisers.

Both expose the same surface (``score`` on arrays, ``score_traced`` on
tensors), so samplers can differentiate guidance losses through either one.
The Tweedie map turns a score into the posterior-mean estimate of the clean
signal that anchors every guidance loss.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, add, div, mul, reshape
from .containers import load_tensors, save_tensors
from .gmm import GMMPrior, _score_cache, gmm_marginal_score_traced
from .nn import Adam, ConvNet, Mlp, _wrap_params
from .schedule import NoiseSchedule, time_features

__all__ = [
    "AnalyticGmmScore",
    "DenoiserScore",
    "TrainingDiverged",
    "tweedie_x0",
    "tweedie_x0_traced",
    "train_denoiser",
    "save_score_model",
    "load_score_model",
]


class TrainingDiverged(RuntimeError):
    pass


class AnalyticGmmScore:
    """Exact marginal score of a mixture prior under the VP forward process."""

    kind = "analytic-gmm"

    def __init__(self, prior: GMMPrior, schedule: NoiseSchedule):
        self.prior = prior
        self.schedule = schedule
        self._cache: dict[int, object] = {}

    def _cached(self, t: int):
        hit = self._cache.get(t)
        if hit is None:
            hit = _score_cache(self.prior, t, self.schedule)
            self._cache[t] = hit
        return hit

    def score_traced(self, x: Tensor, t: int) -> Tensor:
        return gmm_marginal_score_traced(self.prior, x, t, self.schedule, _cache=self._cached(t))

    def score(self, x: np.ndarray, t: int) -> np.ndarray:
        return self.score_traced(Tensor(np.asarray(x, dtype=np.float64)), t).data


class DenoiserScore:
    """Epsilon-prediction network converted to a score: s = -eps_hat / sqrt(1 - abar)."""

    kind = "trained-denoiser"

    def __init__(self, net, schedule: NoiseSchedule, data_shape: tuple[int, ...],
                 trained: bool = False, loss_history: list[float] | None = None):
        self.net = net
        self.schedule = schedule
        self.data_shape = tuple(data_shape)
        self.trained = trained
        self.loss_history = loss_history or []

    def _eps(self, x: Tensor, t: int, params=None) -> Tensor:
        grid = len(self.data_shape) == 2
        batched = x.data.ndim == len(self.data_shape) + 1
        cond = time_features(t, self.schedule)
        if batched:
            cond = np.tile(cond, (x.shape[0], 1))
        if grid:
            h = reshape(x, ((x.shape[0], 1) if batched else (1,)) + self.data_shape)
            out = self.net.forward(h, cond=cond, params=params)
            return reshape(out, x.shape)
        return self.net.forward(x, cond=cond, params=params)

    def score_traced(self, x: Tensor, t: int, params=None) -> Tensor:
        eps = self._eps(x, t, params=params)
        return div(eps, -np.sqrt(1.0 - self.schedule.abar(t)))

    def score(self, x: np.ndarray, t: int) -> np.ndarray:
        return self.score_traced(Tensor(np.asarray(x, dtype=np.float64)), t).data


def tweedie_x0_traced(x_t: Tensor, t: int, model) -> Tensor:
    """Posterior-mean estimate of the clean signal from the score at step t."""
    abar = model.schedule.abar(t)
    s = model.score_traced(x_t, t)
    return div(add(x_t, mul(s, 1.0 - abar)), np.sqrt(abar))


def tweedie_x0(x_t, t: int, model):
    if isinstance(x_t, Tensor):
        return tweedie_x0_traced(x_t, t, model)
    return tweedie_x0_traced(Tensor(np.asarray(x_t, dtype=np.float64)), t, model).data


def _canonical_order(items: np.ndarray) -> np.ndarray:
    """Sort samples by their raw bytes so training ignores dataset order."""
    keys = [a.tobytes() for a in items]
    order = sorted(range(len(items)), key=lambda i: keys[i])
    return items[order]


def train_denoiser(dataset, sched: NoiseSchedule, cfg: dict | None = None) -> DenoiserScore:
    """Denoising score-matching training of a small epsilon net.

    Vectors get an MLP (3x128 hidden by default), grids a 4-layer conv net.
    cfg keys: steps, batch_size, lr, seed, hidden, width.
    """
    from .autodiff import backward, tmean, square

    cfg = dict(cfg or {})
    items = np.asarray([np.asarray(a, dtype=np.float64) for a in dataset])
    if items.size == 0:
        raise ValueError("dataset must be nonempty")
    data_shape = items.shape[1:]
    if len(data_shape) not in (1, 2):
        raise ValueError(f"expected vector or grid data, got shape {data_shape}")
    items = _canonical_order(items)

    seed = int(cfg.get("seed", 0))
    rng = np.random.default_rng(seed)
    steps = int(cfg.get("steps", 2000))
    batch = min(int(cfg.get("batch_size", 64)), len(items))
    lr = float(cfg.get("lr", 1e-3))

    if len(data_shape) == 1:
        hidden = list(cfg.get("hidden", [128, 128, 128]))
        net = Mlp(data_shape[0], hidden, data_shape[0], rng, cond_dim=8)
    else:
        net = ConvNet(1, int(cfg.get("width", 32)), rng, cond_dim=8)

    model = DenoiserScore(net, sched, data_shape, trained=False)
    if steps == 0:
        return model

    opt = Adam(lr)
    history: list[float] = []
    try:
        for _ in range(steps):
            idx = rng.integers(0, len(items), size=batch)
            x0 = items[idx]
            ts = rng.integers(1, sched.T + 1, size=batch)
            abar = sched.alpha_bar[ts - 1].reshape((batch,) + (1,) * len(data_shape))
            eps = rng.standard_normal(x0.shape)
            x_t = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps

            params = _wrap_params(net.params, True)
            cond = np.stack([time_features(int(t), sched) for t in ts])
            if len(data_shape) == 2:
                xin = Tensor(x_t.reshape(batch, 1, *data_shape))
                pred = net.forward(xin, cond=cond, params=params)
                pred = reshape(pred, x_t.shape)
            else:
                pred = net.forward(Tensor(x_t), cond=cond, params=params)
            loss = tmean(square(pred - Tensor(eps)))
            backward(loss)
            history.append(loss.item())
            opt.step(net.params, {k: p.grad for k, p in params.items()})
    except FloatingPointError as exc:
        raise TrainingDiverged(f"training produced non-finite values: {exc}") from exc

    model.trained = True
    model.loss_history = history
    return model


def save_score_model(path, model: DenoiserScore) -> None:
    manifest = {
        "kind": model.kind,
        "net": model.net.config(),
        "data_shape": list(model.data_shape),
        "schedule": model.schedule.to_config(),
        "trained": model.trained,
    }
    save_tensors(path, dict(model.net.params), manifest=manifest)


def load_score_model(path) -> DenoiserScore:
    tensors, manifest = load_tensors(path)
    if manifest.get("kind") != "trained-denoiser":
        raise ValueError(f"not a denoiser checkpoint: {manifest.get('kind')}")
    net_cfg = manifest["net"]
    net = Mlp.from_config(net_cfg) if net_cfg["arch"] == "mlp" else ConvNet.from_config(net_cfg)
    net.params = {k: tensors[k] for k in net.params}
    sched = NoiseSchedule.from_config(manifest["schedule"])
    return DenoiserScore(net, sched, tuple(manifest["data_shape"]), trained=manifest["trained"])
