"""Small tanh MLPs with hand-written backward passes.

``BranchedPolicyNet``: shared feature layer ``h0 = tanh(W0 x + b0)``, then per
mode ``tanh(W2_i tanh(W1_i h0 + b1_i) + b2_i)`` giving (throttle, steer).

``HighLevelNet``: a policy MLP (two hidden layers -> n logits) and a separate
value MLP (two hidden layers -> scalar) on the same input.

Parameters and gradients are plain ``dict[str, ndarray]`` keyed by name; a
gradient dict with the same keys and shapes is the "tape".
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .artifacts import read_artifact, write_artifact

WEIGHTS_MAGIC = b"MSNETW01"
WEIGHTS_FORMAT = "modeswitch.weights/1"


class ShapeMismatch(ValueError):
    pass


def _uniform(rng, fan_in, shape):
    lim = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-lim, lim, size=shape)


def shape_signature(params: dict) -> str:
    text = ";".join(f"{k}:{'x'.join(map(str, v.shape))}" for k, v in sorted(params.items()))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def zeros_like(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


class _Net:
    kind = "net"
    params: dict

    def arch(self) -> dict:
        raise NotImplementedError

    def copy(self):
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.params = {k: v.copy() for k, v in self.params.items()}
        return new

    def save(self, path, meta: dict | None = None) -> None:
        header = {"format": WEIGHTS_FORMAT, "kind": self.kind, "arch": self.arch(),
                  "shape_hash": shape_signature(self.params)}
        if meta:
            header["meta"] = meta
        write_artifact(path, WEIGHTS_MAGIC, header, {k: self.params[k] for k in sorted(self.params)})

    @classmethod
    def load(cls, path, expect_shape_hash: str | None = None):
        hdr, arrays = read_artifact(path, WEIGHTS_MAGIC)
        if hdr.get("format") != WEIGHTS_FORMAT or hdr.get("kind") != cls.kind:
            raise ShapeMismatch(f"{path}: not a {cls.kind} weight file")
        net = cls(**hdr["arch"], seed=0)
        if set(arrays) != set(net.params):
            raise ShapeMismatch(f"{path}: parameter names differ from the architecture")
        for k, v in arrays.items():
            if v.shape != net.params[k].shape:
                raise ShapeMismatch(f"{path}: {k} has shape {v.shape}, expected {net.params[k].shape}")
        sig = shape_signature(arrays)
        if sig != hdr.get("shape_hash") or (expect_shape_hash is not None and sig != expect_shape_hash):
            raise ShapeMismatch(f"{path}: shape hash {sig} does not match")
        net.params = {k: v.astype(np.float64) for k, v in arrays.items()}
        net.meta = hdr.get("meta", {})
        return net


class BranchedPolicyNet(_Net):
    kind = "branched-policy"

    def __init__(self, in_dim: int, n_branches: int = 2, feature_width: int = 64, branch_width: int = 64,
                 seed: int = 0):
        if n_branches < 1:
            raise ValueError("need at least one branch")
        self.in_dim, self.n_branches = int(in_dim), int(n_branches)
        self.feature_width, self.branch_width = int(feature_width), int(branch_width)
        rng = np.random.default_rng(seed)
        F, B = self.feature_width, self.branch_width
        p = {"W0": _uniform(rng, in_dim, (F, in_dim)), "b0": _uniform(rng, in_dim, (F,))}
        for i in range(1, n_branches + 1):
            p[f"W1_{i}"] = _uniform(rng, F, (B, F))
            p[f"b1_{i}"] = _uniform(rng, F, (B,))
            p[f"W2_{i}"] = _uniform(rng, B, (2, B))
            p[f"b2_{i}"] = _uniform(rng, B, (2,))
        self.params = p
        self.meta: dict = {}

    def arch(self) -> dict:
        return {"in_dim": self.in_dim, "n_branches": self.n_branches, "feature_width": self.feature_width,
                "branch_width": self.branch_width}

    def _check_mode(self, mode: int) -> None:
        if not 1 <= int(mode) <= self.n_branches:
            raise ValueError(f"mode {mode} outside 1..{self.n_branches}")

    def forward_low(self, x: np.ndarray, mode: int) -> tuple[float, float]:
        """Single observation vector -> (throttle, steer) from branch ``mode``."""
        self._check_mode(mode)
        p = self.params
        out = kernels.branch_forward(np.ascontiguousarray(x, dtype=np.float64), p["W0"], p["b0"],
                                     p[f"W1_{mode}"], p[f"b1_{mode}"], p[f"W2_{mode}"], p[f"b2_{mode}"])
        return float(out[0]), float(out[1])

    def forward_batch(self, X: np.ndarray, modes: np.ndarray, cache: bool = False):
        p = self.params
        modes = np.asarray(modes)
        h0 = np.tanh(X @ p["W0"].T + p["b0"])
        out = np.zeros((X.shape[0], 2))
        caches = {}
        for i in np.unique(modes):
            i = int(i)
            self._check_mode(i)
            idx = np.nonzero(modes == i)[0]
            h1 = np.tanh(h0[idx] @ p[f"W1_{i}"].T + p[f"b1_{i}"])
            y = np.tanh(h1 @ p[f"W2_{i}"].T + p[f"b2_{i}"])
            out[idx] = y
            caches[i] = (idx, h1, y)
        if cache:
            return out, (h0, caches)
        return out

    def loss_and_grad(self, X: np.ndarray, A: np.ndarray, modes: np.ndarray, weights=None):
        """L1 imitation loss and its gradient with respect to every parameter.

        The loss is ``sum_k w_k * ||a_k - pi(x_k)||_1`` with ``w_k = 1/K`` by
        default. The subgradient of ``|r|`` at ``r = 0`` is taken as 0.
        """
        K = X.shape[0]
        if K == 0:
            raise ValueError("empty batch")
        w = np.full(K, 1.0 / K) if weights is None else np.asarray(weights, dtype=np.float64)
        out, (h0, caches) = self.forward_batch(X, modes, cache=True)
        resid = out - A
        loss = float(np.sum(w[:, None] * np.abs(resid)))
        p = self.params
        g = zeros_like(p)
        dh0 = np.zeros_like(h0)
        for i, (idx, h1, y) in caches.items():
            dy = np.sign(resid[idx]) * w[idx, None]
            dz2 = dy * (1.0 - y * y)
            g[f"W2_{i}"] = dz2.T @ h1
            g[f"b2_{i}"] = dz2.sum(axis=0)
            dz1 = (dz2 @ p[f"W2_{i}"]) * (1.0 - h1 * h1)
            g[f"W1_{i}"] = dz1.T @ h0[idx]
            g[f"b1_{i}"] = dz1.sum(axis=0)
            dh0[idx] += dz1 @ p[f"W1_{i}"]
        dz0 = dh0 * (1.0 - h0 * h0)
        g["W0"] = dz0.T @ X
        g["b0"] = dz0.sum(axis=0)
        return loss, g


def il_loss(net: BranchedPolicyNet, X, A, modes) -> float:
    """Mean over samples of the L1 distance between target and predicted action."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    out = net.forward_batch(X, np.asarray(modes))
    return float(np.mean(np.sum(np.abs(np.asarray(A) - out), axis=1)))


def il_loss_balanced(net: BranchedPolicyNet, X, A, modes) -> float:
    """Per-mode mean L1 losses averaged uniformly over the modes present."""
    modes = np.asarray(modes)
    vals = [il_loss(net, X[modes == i], A[modes == i], modes[modes == i]) for i in np.unique(modes)]
    return float(np.mean(vals))


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


class HighLevelNet(_Net):
    kind = "high-level"

    def __init__(self, in_dim: int, n_modes: int = 2, width1: int = 64, width2: int = 64, seed: int = 0):
        self.in_dim, self.n_modes = int(in_dim), int(n_modes)
        self.width1, self.width2 = int(width1), int(width2)
        rng = np.random.default_rng(seed)
        H1, H2 = self.width1, self.width2
        p = {}
        for head, out in (("pi", n_modes), ("v", 1)):
            p[f"{head}_W0"] = _uniform(rng, in_dim, (H1, in_dim))
            p[f"{head}_b0"] = _uniform(rng, in_dim, (H1,))
            p[f"{head}_W1"] = _uniform(rng, H1, (H2, H1))
            p[f"{head}_b1"] = _uniform(rng, H1, (H2,))
            p[f"{head}_W2"] = _uniform(rng, H2, (out, H2))
            p[f"{head}_b2"] = np.zeros(out)
        # small final policy layer: near-uniform initial mode distribution
        p["pi_W2"] *= 0.01
        self.params = p
        self.meta = {}

    def arch(self) -> dict:
        return {"in_dim": self.in_dim, "n_modes": self.n_modes, "width1": self.width1, "width2": self.width2}

    def _mlp(self, head: str, X):
        p = self.params
        h0 = np.tanh(X @ p[f"{head}_W0"].T + p[f"{head}_b0"])
        h1 = np.tanh(h0 @ p[f"{head}_W1"].T + p[f"{head}_b1"])
        return h1 @ p[f"{head}_W2"].T + p[f"{head}_b2"], (h0, h1)

    def _mlp_backward(self, head: str, X, cache, dout, g):
        p = self.params
        h0, h1 = cache
        g[f"{head}_W2"] = dout.T @ h1
        g[f"{head}_b2"] = dout.sum(axis=0)
        dz1 = (dout @ p[f"{head}_W2"]) * (1.0 - h1 * h1)
        g[f"{head}_W1"] = dz1.T @ h0
        g[f"{head}_b1"] = dz1.sum(axis=0)
        dz0 = (dz1 @ p[f"{head}_W1"]) * (1.0 - h0 * h0)
        g[f"{head}_W0"] = dz0.T @ X
        g[f"{head}_b0"] = dz0.sum(axis=0)

    def logits(self, X) -> np.ndarray:
        return self._mlp("pi", np.atleast_2d(X))[0]

    def value(self, X) -> np.ndarray:
        return self._mlp("v", np.atleast_2d(X))[0][:, 0]

    def probs(self, X) -> np.ndarray:
        return softmax(self.logits(X))

    def act(self, x: np.ndarray, rng: np.random.Generator | None = None, greedy: bool = False):
        """Returns (mode in 1..n, log-probability, value) for one observation vector."""
        X = x[None, :]
        lp = log_softmax(self.logits(X))[0]
        v = float(self.value(X)[0])
        if greedy or rng is None:
            a = int(np.argmax(lp))
        else:
            a = int(rng.choice(self.n_modes, p=np.exp(lp)))
        return a + 1, float(lp[a]), v


@dataclass
class PpoLossParts:
    total: float
    surrogate: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float


def ppo_loss_and_grad(net: HighLevelNet, X, actions, old_logp, adv, returns, clip_eps: float,
                      value_coef: float, entropy_coef: float):
    """Loss = -mean(min(rho A, clip(rho) A)) + c_v mean((V - R)^2) - c_e mean(H).

    ``actions`` are 0-based mode indices. Returns (PpoLossParts, grads).
    """
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    if N == 0:
        raise ValueError("empty batch")
    actions = np.asarray(actions, dtype=np.int64)
    z, cpi = net._mlp("pi", X)
    vout, cv = net._mlp("v", X)
    lp_all = log_softmax(z)
    pi = np.exp(lp_all)
    lp = lp_all[np.arange(N), actions]
    ratio = np.exp(lp - old_logp)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    s1, s2 = ratio * adv, clipped * adv
    surr = np.minimum(s1, s2)
    ent = -np.sum(pi * lp_all, axis=1)
    v = vout[:, 0]
    vl = np.mean((v - returns) ** 2)
    total = -np.mean(surr) + value_coef * vl - entropy_coef * np.mean(ent)
    # d surr / d rho: A where the unclipped term is the active minimum, else 0
    active = s1 <= s2
    dsurr_dratio = np.where(active, adv, 0.0)
    onehot = np.zeros_like(pi)
    onehot[np.arange(N), actions] = 1.0
    dlp_dz = onehot - pi
    dz = -(dsurr_dratio * ratio)[:, None] * dlp_dz / N
    dent_dz = -pi * (lp_all + ent[:, None])
    dz -= entropy_coef * dent_dz / N
    dv = (2.0 * value_coef * (v - returns) / N)[:, None]
    g = zeros_like(net.params)
    net._mlp_backward("pi", X, cpi, dz, g)
    net._mlp_backward("v", X, cv, dv, g)
    parts = PpoLossParts(float(total), float(np.mean(surr)), float(vl), float(np.mean(ent)),
                         float(np.mean(np.abs(ratio - 1.0) > clip_eps)), float(np.mean(old_logp - lp)))
    return parts, g


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, max_grad_norm: float | None = None) -> None:
    """In-place bias-corrected Adam update of ``params``."""
    if set(grads) != set(params):
        raise ShapeMismatch("gradient names differ from parameter names")
    for k in params:
        if grads[k].shape != params[k].shape:
            raise ShapeMismatch(f"gradient for {k} has shape {grads[k].shape}, expected {params[k].shape}")
    if max_grad_norm is not None:
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > max_grad_norm:
            grads = {k: g * (max_grad_norm / norm) for k, g in grads.items()}
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k in sorted(params):
        g = grads[k]
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[k] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
