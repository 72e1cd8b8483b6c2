"""Rate-based vision pipeline: retina, lamina, medulla, lobula, VPN, KC.

The optic-lobe stages are convolutional processing layers (conv, leaky
activation, local response norm, group norm).  The lobula output is pooled
to one channel, projected through a fixed sparse connectivity mask into
1,024 Kenyon cells and sparsified by an adaptive k-winner-take-all.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import AKWTAConfig, ModelConfig
from .numeric import Param, no_grad, ops

VPN_TRACTS = ("asot", "aiot", "lot")


class ProcessingLayer:
    """Convolution followed by the activation/normalisation block."""

    def __init__(self, c_in, c_out, stride, cfg: ModelConfig, rng, dtype=np.float32, name="pl"):
        k = cfg.kernel_size
        bound = 1.0 / np.sqrt(c_in * k * k)
        self.name = name
        self.kernel = Param(rng.uniform(-bound, bound, (c_out, c_in, k, k)), dtype=dtype,
                            name=f"{name}.kernel")
        self.bias = Param(rng.uniform(-bound, bound, c_out), dtype=dtype, name=f"{name}.bias")
        self.gamma = Param(np.ones(c_out), dtype=dtype, name=f"{name}.gamma")
        self.delta = Param(np.zeros(c_out), dtype=dtype, name=f"{name}.delta")
        self.stride = stride
        self.padding = k // 2
        self.groups = cfg.gn_groups if c_out >= cfg.gn_groups else c_out
        if c_out % self.groups:
            raise ValueError(f"{name}: {c_out} channels not divisible by {self.groups} groups")
        self.cfg = cfg

    def params(self):
        return [self.kernel, self.bias, self.gamma, self.delta]

    def conv(self, x):
        return ops.conv2d(x, self.kernel, self.bias, stride=self.stride, padding=self.padding)

    def normalize(self, x):
        c = self.cfg
        x = ops.local_response_norm(x, n=c.lrn_n, k=c.lrn_k, alpha=c.lrn_alpha, beta=c.lrn_beta)
        return ops.group_norm(x, self.groups, self.gamma, self.delta, eps=c.gn_eps)

    def __call__(self, x):
        x = self.conv(x)
        x = ops.leaky_relu(x, self.cfg.leaky_slope)
        return self.normalize(x)

    def out_size(self, size):
        k = self.cfg.kernel_size
        return (size + 2 * self.padding - k) // self.stride + 1


def build_mask(d_in, d_out=1024, fan_in=10, seed=0):
    """Binary mask with exactly ``fan_in`` ones per row, sampled without replacement."""
    if not 1 <= fan_in <= d_in:
        raise ValueError(f"fan_in must lie in [1, {d_in}], got {fan_in}")
    rng = np.random.default_rng(seed)
    mask = np.zeros((d_out, d_in), dtype=np.float32)
    for i in range(d_out):
        mask[i, rng.choice(d_in, size=fan_in, replace=False)] = 1.0
    return mask


def tract_sizes(channels, n_tracts=3):
    base, extra = divmod(channels, n_tracts)
    return [base + (1 if i < extra else 0) for i in range(n_tracts)]


def vpn_split_concat(x):
    """Split lobula channels into the three optic tracts, rejoin and pool.

    Returns a (B, H*W) tensor.
    """
    sizes = tract_sizes(x.shape[1])
    bounds = np.cumsum([0] + sizes)
    tracts = [ops.channel_slice(x, bounds[i], bounds[i + 1]) for i in range(len(sizes))]
    vpn = ops.concat(tracts, axis=1)
    pooled = ops.avg_pool_channels(vpn)
    return pooled.reshape(x.shape[0], -1)


def achromatic_concat(x):
    """``[x || mean_c(x)]``: chromatic stream plus replicated greyscale stream."""
    grey = ops.repeat_channels(ops.avg_pool_channels(x), x.shape[1])
    return ops.concat([x, grey], axis=1)


def kwta_k(rho, dim):
    return max(1, int(np.floor(rho * dim)))


class AKWTA:
    """Adaptive k-WTA with running activation-frequency homeostasis."""

    def __init__(self, dim=1024, rho=0.05, momentum=0.9, dtype=np.float32):
        if not 0 < rho < 1:
            raise ValueError(f"rho must lie in (0, 1), got {rho}")
        if not 0 < momentum < 1:
            raise ValueError(f"momentum must lie in (0, 1), got {momentum}")
        self.dim = dim
        self.rho = rho
        self.momentum = momentum
        self.mu = np.zeros(dim, dtype=dtype)

    @property
    def k(self):
        return kwta_k(self.rho, self.dim)

    @property
    def theta(self):
        # the outer clamp at 0 is inert (1 + 2 max(0, .) >= 1) but kept as written
        return np.maximum(0.0, 1.0 + 2.0 * np.maximum(0.0, self.mu - self.rho))

    def update(self, kc_raw):
        frac = (np.asarray(kc_raw) > 0).mean(axis=0)
        self.mu = (self.momentum * self.mu + (1.0 - self.momentum) * frac).astype(self.mu.dtype)

    def select(self, kc_raw):
        """Indices (B, k) of the winners of ``kc_raw / theta``."""
        adj = np.asarray(kc_raw) / self.theta
        k = self.k
        return np.argpartition(-adj, k - 1, axis=1)[:, :k]

    def __call__(self, kc_raw, training=False):
        if training:
            self.update(kc_raw.data)
        idx = self.select(kc_raw.data)
        mask = np.zeros(kc_raw.shape, dtype=kc_raw.dtype)
        np.put_along_axis(mask, idx, 1.0, axis=1)
        return ops.apply_mask(kc_raw, mask)


@dataclass
class KCCode:
    values: np.ndarray

    @property
    def active_count(self):
        return int(np.count_nonzero(self.values))

    @property
    def indices(self):
        return np.flatnonzero(self.values)


class VisionModelANN:
    kind = "ann"

    def __init__(self, model_cfg: ModelConfig = None, akwta_cfg: AKWTAConfig = None,
                 dtype=np.float32):
        self.cfg = model_cfg or ModelConfig()
        self.akwta_cfg = akwta_cfg or AKWTAConfig()
        self.cfg.validate()
        self.akwta_cfg.validate()
        self.dtype = np.dtype(dtype)
        self._build()

    def _build(self):
        c = self.cfg
        rng = np.random.default_rng(c.init_seed)
        self.retina = ProcessingLayer(2, c.retina_channels, c.retina_stride, c, rng, self.dtype,
                                      "retina")
        self.lamina = ProcessingLayer(2 * c.retina_channels, c.lamina_channels, c.stride, c, rng,
                                      self.dtype, "lamina")
        self.medulla = ProcessingLayer(2 * c.lamina_channels, c.medulla_channels, c.stride, c,
                                       rng, self.dtype, "medulla")
        self.lobula = ProcessingLayer(c.medulla_channels, c.lobula_channels, c.stride, c, rng,
                                      self.dtype, "lobula")
        size = c.input_size
        for layer in self.layers:
            size = layer.out_size(size)
        self.lobula_size = size
        self.d_vpn = size * size
        bound = 1.0 / np.sqrt(c.fan_in)
        self.kc_weight = Param(rng.uniform(-bound, bound, (c.kc_dim, self.d_vpn)),
                               dtype=self.dtype, name="kc.weight")
        self.kc_bias = (Param(rng.uniform(-bound, bound, c.kc_dim), dtype=self.dtype,
                              name="kc.bias") if c.kc_bias else None)
        self.kc_mask = build_mask(self.d_vpn, c.kc_dim, c.fan_in, seed=c.init_seed).astype(
            self.dtype)
        self.kc_mask.setflags(write=False)
        self.akwta = AKWTA(c.kc_dim, self.akwta_cfg.rho, self.akwta_cfg.momentum, self.dtype)

    @property
    def layers(self):
        return [self.retina, self.lamina, self.medulla, self.lobula]

    def params(self):
        ps = [p for layer in self.layers for p in layer.params()]
        ps.append(self.kc_weight)
        if self.kc_bias is not None:
            ps.append(self.kc_bias)
        return ps

    # -- stages ----------------------------------------------------------
    def check_input(self, img):
        if img.ndim != 4 or img.shape[1] != 2:
            raise ValueError(f"expected (B, 2, H, W) blue:green images, got {img.shape}")

    def retina_forward(self, img):
        self.check_input(img)
        r = self.retina(img)
        return ops.concat([r, -r], axis=1)

    def lamina_forward(self, x):
        return self.lamina(x)

    def medulla_forward(self, x):
        return self.medulla(achromatic_concat(x))

    def lobula_forward(self, x):
        return self.lobula(x)

    def sparse_linear(self, vpn):
        return ops.masked_linear(vpn, self.kc_weight, self.kc_mask, self.kc_bias)

    def features(self, img):
        """Everything up to the raw (pre-k-WTA) KC drive."""
        x = self.retina_forward(img)
        x = self.lamina_forward(x)
        x = self.medulla_forward(x)
        x = self.lobula_forward(x)
        return self.sparse_linear(vpn_split_concat(x))

    def forward(self, img, training=False):
        return self.akwta(self.features(img), training=training)

    __call__ = forward

    def stage_outputs(self, img):
        """Activations of every stage for one batch (for plots / inspection)."""
        with no_grad():
            ret = self.retina_forward(img)
            lam = self.lamina_forward(ret)
            med = self.medulla_forward(lam)
            lob = self.lobula_forward(med)
            vpn = vpn_split_concat(lob)
            kc = self.akwta(self.sparse_linear(vpn))
        return {"retina": ret.data, "lamina": lam.data, "medulla": med.data,
                "lobula": lob.data, "vpn": vpn.data, "kc": kc.data}

    def encode(self, images, batch_size=64):
        """KC codes (N, 1024) in evaluation mode."""
        images = np.asarray(images, dtype=self.dtype)
        out = []
        with no_grad():
            for i in range(0, len(images), batch_size):
                out.append(self.forward(images[i:i + batch_size]).data)
        return np.concatenate(out) if out else np.zeros((0, self.cfg.kc_dim), self.dtype)

    # -- state -------------------------------------------------------------
    def state_tensors(self):
        """Named arrays making up the full model state."""
        state = {p.name: p.data for p in self.params()}
        state["kc.mask"] = self.kc_mask
        state["akwta.mu"] = self.akwta.mu
        return state

    def load_state(self, tensors):
        for p in self.params():
            p.data[...] = tensors[p.name]
        mask = np.array(tensors["kc.mask"], dtype=self.dtype)
        mask.setflags(write=False)
        self.kc_mask = mask
        self.akwta.mu = np.array(tensors["akwta.mu"], dtype=self.dtype)
