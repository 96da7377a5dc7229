"""Equivariance probes and the regularization losses built on them.

A probe is a differentiable map paired with a group action on its domain and
codomain. Probes trained with symmetry augmentation develop low equivariance
error on the data manifold and higher error away from it, which is what lets
the samplers use the error as an off-manifold penalty. The plain loss measures
the gap between transforming before and after the map; the cycle-consistency
variant routes the gap through a paired inverse map instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, backward, l2_norm, norm_sq, square, sub, tmean
from .containers import load_tensors, save_tensors
from .groups import GroupAction, make_group
from .nn import Adam, ConvAutoencoder, MlpAutoencoder, _wrap_params

__all__ = [
    "EquiLossConfig",
    "EquivariantFunction",
    "equi_error",
    "equi_loss",
    "equicon_loss",
    "train_autoencoder_augmented",
    "mpe_sweep",
    "save_probe",
    "load_probe",
]


@dataclass
class EquiLossConfig:
    """Weighting and scheduling of the regularization term inside samplers."""

    lam: float = 0.0
    period: int = 1
    early_stop_frac: float = 0.1
    norm: str = "squared-l2"  # or "l2"
    element_policy: str = "random-per-call"  # or "fixed"
    fixed_element: int | None = None
    subset: list[int] | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.period < 1:
            raise ValueError("period must be >= 1")
        if not 0.0 <= self.early_stop_frac < 1.0:
            raise ValueError("early-stop fraction must lie in [0, 1)")
        if self.norm not in ("squared-l2", "l2"):
            raise ValueError(f"unknown norm '{self.norm}'")

    def draw_element(self, action, rng: np.random.Generator) -> int:
        if self.element_policy == "fixed":
            if self.fixed_element is None:
                raise ValueError("fixed element policy needs fixed_element")
            return self.fixed_element
        return action.random_element(rng, subset=self.subset)

    def to_dict(self) -> dict:
        return {
            "lam": self.lam,
            "period": self.period,
            "early_stop_frac": self.early_stop_frac,
            "norm": self.norm,
            "element_policy": self.element_policy,
            "fixed_element": self.fixed_element,
            "subset": self.subset,
        }


class EquivariantFunction:
    """Differentiable map with its group pairing and optional inverse.

    ``f`` maps domain tensors to codomain tensors; ``action.apply_domain``
    transforms f's inputs and ``action.apply_codomain`` its outputs. When a
    paired inverse ``h`` exists (encoder for a decoder and vice versa), the
    cycle-consistency loss becomes available.
    """

    def __init__(self, f, action, h=None, name: str = "probe", meta: dict | None = None):
        self.f = f
        self.h = h
        self.action = action
        self.name = name
        self.meta = dict(meta or {})

    @property
    def has_inverse(self) -> bool:
        return self.h is not None

    def apply_f(self, z):
        return self.f(z if isinstance(z, Tensor) else Tensor(z))

    def apply_h(self, x):
        if self.h is None:
            raise ValueError(f"probe '{self.name}' has no paired inverse map")
        return self.h(x if isinstance(x, Tensor) else Tensor(x))


def _norm_of(diff: Tensor, norm: str) -> Tensor:
    return norm_sq(diff) if norm == "squared-l2" else l2_norm(diff)


def equi_error(m: EquivariantFunction, g: int, z, norm: str = "l2") -> float:
    """Size of S_g(f(z)) - f(T_g(z)); zero iff f commutes with the pair at z."""
    zt = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float64))
    a = m.action.apply_codomain(g, m.apply_f(zt))
    b = m.apply_f(m.action.apply_domain(g, zt))
    if a.shape != b.shape:
        raise ValueError(f"codomain shapes differ: {a.shape} vs {b.shape}")
    return float(_norm_of(sub(a, b), norm).item())


def equi_loss(m: EquivariantFunction, x0t: Tensor, rng_or_g, cfg: EquiLossConfig | None = None) -> Tensor:
    """Differentiable equivariance gap at the current clean-signal estimate.

    ``rng_or_g`` is either a Generator (an element is drawn per the config
    policy) or an explicit element index.
    """
    cfg = cfg or EquiLossConfig(norm="squared-l2")
    if isinstance(rng_or_g, (int, np.integer)):
        g = int(rng_or_g)
    else:
        g = cfg.draw_element(m.action, rng_or_g)
    a = m.action.apply_codomain(g, m.apply_f(x0t))
    b = m.apply_f(m.action.apply_domain(g, x0t))
    if a.shape != b.shape:
        raise ValueError(f"codomain shapes differ: {a.shape} vs {b.shape}")
    return _norm_of(sub(a, b), cfg.norm)


def equicon_loss(m: EquivariantFunction, z0t: Tensor, rng_or_g, cfg: EquiLossConfig | None = None) -> Tensor:
    """Cycle-consistency gap: || z - h(S_g^{-1}(f(T_g(z)))) || per config norm."""
    cfg = cfg or EquiLossConfig(norm="squared-l2")
    if m.h is None:
        raise ValueError(f"probe '{m.name}' has no inverse map for the constrained loss")
    if isinstance(rng_or_g, (int, np.integer)):
        g = int(rng_or_g)
    else:
        g = cfg.draw_element(m.action, rng_or_g)
    fx = m.apply_f(m.action.apply_domain(g, z0t))
    back_ = m.action.apply_codomain(m.action.inverse(g), fx)
    cycled = m.apply_h(back_)
    if cycled.shape != z0t.shape:
        raise ValueError(f"cycle shape {cycled.shape} differs from input {z0t.shape}")
    return _norm_of(sub(z0t, cycled), cfg.norm)


# -- probe construction ----------------------------------------------------------


def _probe_from_autoencoder(ae, data_action_spec: dict, f_kind: str,
                            latent_action_spec: dict | None = None, meta=None) -> EquivariantFunction:
    latent_spec = latent_action_spec or data_action_spec
    if f_kind == "encoder":
        action = make_group(data_action_spec, latent_spec)
        return EquivariantFunction(ae.encode, action, h=ae.decode, name="encoder", meta=meta)
    if f_kind == "decoder":
        action = make_group(latent_spec, data_action_spec)
        return EquivariantFunction(ae.decode, action, h=ae.encode, name="decoder", meta=meta)
    if f_kind == "autoencoder":
        action = make_group(data_action_spec)
        fn = lambda x: ae.decode(ae.encode(x))
        return EquivariantFunction(fn, action, h=None, name="autoencoder", meta=meta)
    raise ValueError(f"f must be encoder, decoder or autoencoder, got '{f_kind}'")


def train_autoencoder_augmented(dataset, action: GroupAction, cfg: dict | None = None) -> EquivariantFunction:
    """Reconstruction training with group-augmented batches.

    Each batch element is replaced by a transformed copy with probability 1/2
    (uniform non-identity element). Returns a probe whose map is chosen by
    cfg["f"]; holds the underlying autoencoder in ``meta``.

    cfg keys: steps, batch_size, lr, seed, arch (mlp-ae | conv-ae), hidden,
    latent_dim, channels, latent_channels, augment, f, latent_action.
    """
    cfg = dict(cfg or {})
    items = np.asarray([np.asarray(a, dtype=np.float64) for a in dataset])
    if items.size == 0:
        raise ValueError("dataset must be nonempty")
    data_shape = items.shape[1:]
    keys = [a.tobytes() for a in items]
    items = items[sorted(range(len(items)), key=lambda i: keys[i])]

    seed = int(cfg.get("seed", 0))
    rng = np.random.default_rng(seed)
    steps = int(cfg.get("steps", 1500))
    batch = min(int(cfg.get("batch_size", 64)), len(items))
    lr = float(cfg.get("lr", 1e-3))
    augment = bool(cfg.get("augment", True))
    f_kind = cfg.get("f", "encoder")

    if len(data_shape) == 1:
        ae = MlpAutoencoder(data_shape[0], list(cfg.get("hidden", [64, 64])),
                            int(cfg.get("latent_dim", max(1, data_shape[0] // 2))), rng)
    elif len(data_shape) == 2:
        if data_shape[0] != data_shape[1]:
            raise ValueError("grid autoencoder expects square grids")
        ae = ConvAutoencoder(data_shape[0], int(cfg.get("channels", 8)),
                             int(cfg.get("latent_channels", 4)), rng)
    else:
        raise ValueError(f"unsupported data shape {data_shape}")

    history: list[float] = []
    opt = Adam(lr)
    try:
        for _ in range(steps):
            idx = rng.integers(0, len(items), size=batch)
            x0 = items[idx].copy()
            if augment and action.order > 1:
                for b in range(batch):
                    if rng.random() >= 0.5:
                        g = action.random_element(rng)
                        x0[b] = action.apply_domain(g, x0[b])
            params = _wrap_params(ae.params, True)
            xin = Tensor(x0)
            recon = ae.decode(ae.encode(xin, params=params), params=params)
            loss = tmean(square(sub(recon, xin)))
            backward(loss)
            history.append(loss.item())
            grads = {k: p.grad for k, p in params.items()}
            new = dict(ae.params)
            opt.step(new, grads)
            ae.set_params(new)
    except FloatingPointError as exc:
        raise RuntimeError(f"autoencoder training diverged: {exc}") from exc

    # held-out style reconstruction check on the training distribution
    probe_n = min(256, len(items))
    xs = items[:probe_n]
    recon = ae.decode(ae.encode(Tensor(xs))).data
    recon_mse = float(np.mean((recon - xs) ** 2))
    data_var = float(np.var(xs))
    meta = {
        "recon_mse": recon_mse,
        "data_var": data_var,
        "recon_ok": bool(recon_mse <= 0.1 * data_var) if data_var > 0 else True,
        "augment": augment,
        "loss_history": history,
        "ae": ae,
        "train_cfg": {k: v for k, v in cfg.items() if k != "latent_action"},
    }
    data_spec = dict(action.domain_spec)
    latent_spec = cfg.get("latent_action")
    meta["data_action"] = data_spec
    meta["latent_action"] = latent_spec
    return _probe_from_autoencoder(ae, data_spec, f_kind, latent_action_spec=latent_spec, meta=meta)


def mpe_sweep(m: EquivariantFunction, dataset, noise_levels, rng: np.random.Generator,
              norm: str = "l2") -> list[dict]:
    """Equivariance error of the probe on data perturbed at increasing noise.

    For each noise level, every datum is perturbed once and the error is
    evaluated for every non-identity group element. Rows report mean and std
    over the (datum, element) population.
    """
    items = [np.asarray(a, dtype=np.float64) for a in dataset]
    if not items:
        raise ValueError("dataset must be nonempty")
    levels = [float(s) for s in noise_levels]
    if levels != sorted(levels) or levels[0] != 0.0:
        raise ValueError("noise levels must be ascending and start at 0")
    elements = m.action.elements[1:] or [0]
    rows = []
    for sigma in levels:
        vals = []
        for x in items:
            xp = x + sigma * rng.standard_normal(x.shape) if sigma > 0 else x
            for g in elements:
                vals.append(equi_error(m, g, xp, norm=norm))
        vals = np.asarray(vals)
        rows.append({"sigma": sigma, "mean": float(vals.mean()),
                     "std": float(vals.std()), "n": int(vals.size)})
    return rows


def save_probe(path, m: EquivariantFunction) -> None:
    ae = m.meta.get("ae")
    if ae is None:
        raise ValueError("only autoencoder-backed probes can be saved")
    manifest = {
        "kind": "equivariant-probe",
        "f": m.name,
        "ae": ae.config(),
        "data_action": m.meta.get("data_action"),
        "latent_action": m.meta.get("latent_action"),
        "recon_mse": m.meta.get("recon_mse"),
        "data_var": m.meta.get("data_var"),
        "augment": m.meta.get("augment"),
    }
    save_tensors(path, dict(ae.params), manifest=manifest)


def load_probe(path) -> EquivariantFunction:
    tensors, manifest = load_tensors(path)
    if manifest.get("kind") != "equivariant-probe":
        raise ValueError(f"not a probe checkpoint: {manifest.get('kind')}")
    ae_cfg = manifest["ae"]
    ae = MlpAutoencoder.from_config(ae_cfg) if ae_cfg["arch"] == "mlp-ae" else ConvAutoencoder.from_config(ae_cfg)
    ae.set_params({k: tensors[k] for k in tensors})
    meta = {"ae": ae, "recon_mse": manifest.get("recon_mse"),
            "data_var": manifest.get("data_var"), "augment": manifest.get("augment"),
            "data_action": manifest.get("data_action"),
            "latent_action": manifest.get("latent_action")}
    return _probe_from_autoencoder(ae, manifest["data_action"], manifest["f"],
                                   latent_action_spec=manifest.get("latent_action"), meta=meta)
