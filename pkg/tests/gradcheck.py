"""Central finite-difference oracle shared by the net tests and the acceptance suite."""

import numpy as np

from modeswitch.nets import BranchedPolicyNet, HighLevelNet, ppo_loss_and_grad

EPS = 1e-5
CLIP = 0.2


def finite_difference(f, params, eps=EPS):
    out = {}
    for k, v in params.items():
        g = np.zeros_like(v)
        for i in np.ndindex(v.shape):
            old = v[i]
            v[i] = old + eps
            fp = f()
            v[i] = old - eps
            fm = f()
            v[i] = old
            g[i] = (fp - fm) / (2 * eps)
        out[k] = g
    return out


def max_rel_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from dominating."""
    worst = 0.0
    for k in analytic:
        a, n = analytic[k], numeric[k]
        den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / den)))
    return worst


def il_case(seed, in_dim=5, width=4):
    """A small branched net with targets outside [-1, 1] so no residual sits at the L1 kink."""
    rng = np.random.default_rng(seed)
    net = BranchedPolicyNet(in_dim, 2, width, width, seed=seed)
    X = rng.normal(size=(8, in_dim))
    A = rng.choice([-1.0, 1.0], size=(8, 2)) * rng.uniform(1.1, 2.0, size=(8, 2))
    modes = rng.integers(1, 3, 8)
    modes[:2] = (1, 2)
    return net, (X, A, modes)


def ppo_case(seed, in_dim=5, width=4):
    """A small high-level net at a point where no ratio lies on a clip boundary."""
    rng = np.random.default_rng(seed)
    net = HighLevelNet(in_dim, 2, width, width, seed=seed)
    net.params["pi_W2"] *= 100.0  # move off the near-uniform initialisation
    X = rng.normal(size=(8, in_dim))
    acts = rng.integers(0, 2, 8)
    adv, ret = rng.normal(size=8), rng.normal(size=8)
    z = net.logits(X)
    lp = z[np.arange(8), acts] - np.log(np.exp(z).sum(axis=1))
    # old log-probs chosen so every ratio is well inside or well outside the clip range
    shift = rng.choice([-0.5, -0.1, 0.1, 0.5], size=8)
    return net, (X, acts, lp + shift, adv, ret)


def il_error(seed):
    net, (X, A, modes) = il_case(seed)
    _, g = net.loss_and_grad(X, A, modes)
    return max_rel_error(g, finite_difference(lambda: net.loss_and_grad(X, A, modes)[0], net.params))


def ppo_error(seed):
    net, args = ppo_case(seed)

    def f():
        return ppo_loss_and_grad(net, *args, CLIP, 0.5, 0.01)[0].total
    _, g = ppo_loss_and_grad(net, *args, CLIP, 0.5, 0.01)
    return max_rel_error(g, finite_difference(f, net.params))
