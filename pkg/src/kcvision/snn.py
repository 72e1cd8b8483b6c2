"""Spiking variant of the vision pipeline.

Leaky activations become LIF populations, images are Bernoulli-encoded
over ``T`` timesteps and the KC layer is a LIF population with learnable
per-neuron thresholds instead of k-WTA.  Normalisation acts on membrane
currents, so every population emits strictly binary spikes.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .ann import VisionModelANN, achromatic_concat, vpn_split_concat
from .config import AKWTAConfig, ModelConfig, SNNConfig
from .numeric import Param, Tensor, no_grad, ops


def decay_from_tau(tau, dt=1.0):
    return math.exp(-dt / tau)


def tau_from_decay(beta, dt=1.0):
    return -dt / math.log(beta)


def bernoulli_encode(img, timesteps, rate_scale=1.0, seed=None):
    """Binary raster ``(T, *img.shape)``: spike iff ``u < pixel * rate_scale``."""
    img = np.asarray(img)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = img * rate_scale
    if np.any(p > 1.0):
        warnings.warn("spike probability above 1 clamped; lower rate_scale", RuntimeWarning,
                      stacklevel=2)
        p = np.minimum(p, 1.0)
    u = rng.random((timesteps,) + img.shape, dtype=np.float32 if img.dtype == np.float32
                   else np.float64)
    return (u < p).astype(img.dtype if img.dtype.kind == "f" else np.float32)


@dataclass
class LIFState:
    """Membrane state of one LIF population."""

    beta: float = 0.95
    threshold: float = 1.0
    reset: str = "subtract"
    resistance: float = 1.0
    slope: float = 25.0
    detach_reset: bool = True
    membrane: Tensor = None

    def reset_state(self):
        self.membrane = None


def lif_step(state: LIFState, current, threshold=None, smooth=False):
    """One exponential-Euler update ``U <- beta U + (1 - beta) R I``, spike, reset.

    ``threshold`` may be a Tensor (learnable, per neuron); defaults to the
    state's scalar threshold.  ``smooth`` swaps the hard step for its
    surrogate antiderivative (gradient checking only).
    """
    thr = state.threshold if threshold is None else threshold
    u = ops.lif_integrate(state.membrane, current, state.beta,
                          (1.0 - state.beta) * state.resistance)
    s = ops.threshold_spike(u, thr, state.slope, smooth=smooth)
    state.membrane = ops.lif_reset(u, s, thr, state.reset, state.detach_reset)
    return s, state


def run_lif(currents, beta=0.95, threshold=1.0, reset="subtract", resistance=1.0):
    """Simulate a LIF population on a (T, ...) current array; returns spikes and membranes."""
    state = LIFState(beta=beta, threshold=threshold, reset=reset, resistance=resistance)
    spikes, mems = [], []
    with no_grad():
        for i_t in np.asarray(currents, dtype=np.float64):
            s, state = lif_step(state, i_t)
            spikes.append(s.data)
            mems.append(state.membrane.data)
    return np.array(spikes), np.array(mems)


class VisionModelSNN(VisionModelANN):
    """Same conv/norm skeleton as the ANN with LIF populations."""

    kind = "snn"

    def __init__(self, model_cfg: ModelConfig = None, snn_cfg: SNNConfig = None,
                 akwta_cfg: AKWTAConfig = None, dtype=np.float32):
        self.snn_cfg = snn_cfg or SNNConfig()
        self.snn_cfg.validate()
        super().__init__(model_cfg, akwta_cfg, dtype)
        self.kc_log_threshold = Param(np.zeros(self.cfg.kc_dim), dtype=self.dtype,
                                      trainable=self.snn_cfg.learn_kc_threshold,
                                      name="kc.log_threshold")

    def params(self):
        return super().params() + [self.kc_log_threshold]

    def _lif(self):
        c = self.snn_cfg
        return LIFState(beta=c.beta, threshold=c.threshold, reset=c.reset,
                        resistance=c.resistance,
                        slope=c.surrogate_slope, detach_reset=c.detach_reset)

    def kc_threshold(self):
        # exp keeps per-neuron thresholds positive while learnable
        return ops.exp(self.kc_log_threshold) * self.snn_cfg.threshold

    def state_tensors(self):
        state = super().state_tensors()
        del state["akwta.mu"]
        return state

    def load_state(self, tensors):
        tensors = dict(tensors)
        tensors.setdefault("akwta.mu", self.akwta.mu)
        super().load_state(tensors)

    def input_raster(self, img, timesteps=None, seed=0):
        """Bernoulli spike raster ``(T, B, 2, H, W)`` fed to the retina."""
        return bernoulli_encode(np.asarray(img, dtype=self.dtype),
                                timesteps or self.snn_cfg.timesteps, self.snn_cfg.rate_scale,
                                seed)

    def forward(self, img, timesteps=None, seed=0, record=False, raster=None):
        """Returns ``(kc_spikes (T, B, 1024), kc_rate (B, 1024))``.

        ``raster`` replaces the seeded input encoding (it must come from
        :meth:`input_raster` on the same images).  With ``record=True`` a third
        item maps stage names to per-step spike arrays for inspection.
        """
        self.check_input(img)
        if raster is None:
            raster = self.input_raster(img, timesteps, seed)
        elif raster.shape[1:] != np.shape(img):
            raise ValueError(f"raster shape {raster.shape} does not match images "
                             f"{np.shape(img)}")
        T = raster.shape[0]
        pops = {name: self._lif() for name in ("retina", "lamina", "medulla", "lobula")}
        kc_pop = self._lif()
        thr = self.kc_threshold()
        kc_spikes = []
        rec = {name: [] for name in ("retina", "lamina", "medulla", "lobula", "vpn", "kc")}
        for t in range(T):
            c = self.retina.normalize(self.retina.conv(raster[t]))
            s, _ = lif_step(pops["retina"], ops.concat([c, -c], axis=1))
            if record:
                rec["retina"].append(s.data)
            s, _ = lif_step(pops["lamina"], self.lamina.normalize(self.lamina.conv(s)))
            if record:
                rec["lamina"].append(s.data)
            s, _ = lif_step(pops["medulla"],
                            self.medulla.normalize(self.medulla.conv(achromatic_concat(s))))
            if record:
                rec["medulla"].append(s.data)
            s, _ = lif_step(pops["lobula"], self.lobula.normalize(self.lobula.conv(s)))
            vpn = vpn_split_concat(s)
            if record:
                rec["lobula"].append(s.data)
                rec["vpn"].append(vpn.data)
            k, _ = lif_step(kc_pop, self.sparse_linear(vpn), threshold=thr)
            if record:
                rec["kc"].append(k.data)
            kc_spikes.append(k)
        spikes = ops.stack(kc_spikes, axis=0)
        rate = ops.mean(spikes, axis=0)
        if record:
            return spikes, rate, {k: np.array(v) for k, v in rec.items()}
        return spikes, rate

    __call__ = forward

    def encode(self, images, batch_size=16, seed=0, timesteps=None):
        """Time-averaged KC rate codes (N, 1024)."""
        images = np.asarray(images, dtype=self.dtype)
        out = []
        with no_grad():
            for n, i in enumerate(range(0, len(images), batch_size)):
                _, rate = self.forward(images[i:i + batch_size], timesteps=timesteps,
                                       seed=(seed, n))
                out.append(rate.data)
        return np.concatenate(out) if out else np.zeros((0, self.cfg.kc_dim), self.dtype)

    def stage_outputs(self, img, timesteps=None, seed=0):
        with no_grad():
            _, rate, rec = self.forward(img, timesteps=timesteps, seed=seed, record=True)
        out = {k: v.mean(axis=0) for k, v in rec.items()}
        out["kc"] = rate.data
        return out
