"""
Independent reference implementations used as test oracles.

Nothing here calls into the code under test except to obtain the function
being checked; every expected value is computed a second, simpler way.
"""

from __future__ import annotations

import math

import numpy as np

from ganticket import numcore as nc
from ganticket.models import (
    DiscConfig,
    GenConfig,
    bind,
    discriminator_forward,
    generator_forward,
    init_params,
)

FD_STEP = 1e-5
GRAD_RTOL = 1e-4


# ------------------------------------------------------ finite differences

def central_diff(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``; ``x`` is perturbed in place and restored."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a|| + ||b||, 1e-5)``, the usual gradient-check ratio.

    The floor keeps analytically zero gradients (biases in front of a norm
    layer) from turning round-off into a relative error of 1.
    """
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-5))


def _away_from(x, points, margin):
    # push samples off kinks so finite differences stay on one side
    for p in points:
        close = np.abs(x - p) < margin
        x = np.where(close, p + np.sign(x - p + 1e-300) * margin * 2, x)
    return x


def primitive_cases():
    """``name -> builder(rng) -> (loss_fn(leaves), leaves)`` for every differentiable primitive."""
    def unary(op, lo=-2.0, hi=2.0, kinks=()):
        def build(rng):
            x = _away_from(rng.uniform(lo, hi, (3, 4)), kinks, 1e-3)
            w = rng.standard_normal((3, 4))
            return (lambda t: nc.sum(nc.mul(op(t[0]), w))), [x]
        return build

    def binary(op, b_shape=(3, 4), positive_b=False):
        def build(rng):
            a = rng.standard_normal((3, 4))
            b = rng.standard_normal(b_shape)
            if positive_b:
                b = np.abs(b) + 0.5
            w = rng.standard_normal((3, 4))
            return (lambda t: nc.sum(nc.mul(op(t[0], t[1]), w))), [a, b]
        return build

    def matmul(rng):
        a, b, w = rng.standard_normal((3, 5)), rng.standard_normal((5, 2)), rng.standard_normal((3, 2))
        return (lambda t: nc.sum(nc.mul(nc.matmul(t[0], t[1]), w))), [a, b]

    def linear(rng):
        x, W, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 5)), rng.standard_normal(5)
        w = rng.standard_normal((4, 5))
        return (lambda t: nc.sum(nc.mul(nc.linear(t[0], t[1], t[2]), w))), [x, W, b]

    def spectral(rng):
        W = rng.standard_normal((5, 4))
        U, _, Vt = np.linalg.svd(W)
        u, v = U[:, 0] + 0.1 * rng.standard_normal(5), Vt[0] + 0.1 * rng.standard_normal(4)
        c = rng.standard_normal((5, 4))
        return (lambda t: nc.sum(nc.mul(nc.spectral_scale(t[0], u, v), c))), [W]

    def reduce(op, axis):
        def build(rng):
            x, w = rng.standard_normal((3, 4)), rng.standard_normal(4 if axis == 0 else 1)
            return (lambda t: nc.sum(nc.mul(op(t[0], axis=axis), w))), [x]
        return build

    def l1(rng):
        x = _away_from(rng.standard_normal((3, 4)), (0.0,), 1e-3)
        return (lambda t: nc.l1_norm(t[0])), [x]

    def norm(use_stats):
        def build(rng):
            x = rng.standard_normal((6, 4)) * 2 + 1
            g, b, w = rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal((6, 4))
            stats = (rng.standard_normal(4), rng.uniform(0.5, 2.0, 4)) if use_stats else None
            return (lambda t: nc.sum(nc.mul(nc.scaled_norm(t[0], t[1], t[2], stats=stats)[0], w))), [x, g, b]
        return build

    def clip(rng):
        x = _away_from(rng.uniform(-2, 2, (3, 4)), (-1.0, 1.0), 1e-3)
        w = rng.standard_normal((3, 4))
        return (lambda t: nc.sum(nc.mul(nc.clip(t[0], -1.0, 1.0), w))), [x]

    return {
        "add": binary(nc.add),
        "add_broadcast": binary(nc.add, (4,)),
        "sub": binary(nc.sub, (1, 4)),
        "mul": binary(nc.mul),
        "mul_broadcast": binary(nc.mul, (3, 1)),
        "div": binary(nc.div, positive_b=True),
        "matmul": matmul,
        "linear": linear,
        "spectral_scale": spectral,
        "neg": unary(nc.neg),
        "square": unary(nc.square),
        "relu": unary(nc.relu, kinks=(0.0,)),
        "tanh": unary(nc.tanh),
        "sigmoid": unary(nc.sigmoid, -6, 6),
        "softplus": unary(nc.softplus, -6, 6),
        "log": unary(nc.log, 0.2, 3.0),
        "clip": clip,
        "sum": reduce(nc.sum, None),
        "sum_axis0": reduce(nc.sum, 0),
        "mean": reduce(nc.mean, None),
        "mean_axis0": reduce(nc.mean, 0),
        "l1_norm": l1,
        "scaled_norm": norm(False),
        "scaled_norm_stats": norm(True),
    }


def check_case(build, seed: int) -> float:
    """Largest relative error between autodiff and central differences over the case's inputs."""
    rng = np.random.default_rng(seed)
    fn, arrays = build(rng)
    leaves = [nc.Tensor(a, requires_grad=True) for a in arrays]
    nc.backward(fn(leaves))
    worst = 0.0
    for leaf, arr in zip(leaves, arrays):
        with nc.no_grad():
            num = central_diff(lambda: fn([nc.Tensor(a) for a in arrays]).item(), arr)
        worst = max(worst, rel_error(leaf.grad, num))
    return worst


def gan_loss_case(seed: int, norm_d: bool = False, attempts: int = 5) -> float:
    """Gradient check of a full hinge GAN loss over every G and D parameter of 3-hidden-layer nets.

    The discriminator uses zero power iterations with ``u, v`` set to the
    singular vectors, so they stay constants, which is what the analytic
    gradient assumes. Finite differences are meaningless on a ReLU or hinge
    kink; a draw where two step sizes disagree is redrawn.
    """
    rng = np.random.default_rng(seed)
    gc = GenConfig(latent_dim=3, hidden=(5, 4, 6))
    dc = DiscConfig(hidden=(4, 5, 3), power_iters=0, norm=norm_d)
    g, d = init_params(gc, seed), init_params(dc, seed + 1)
    for ps in (g, d):
        # zero-initialised biases put pre-activations exactly on the ReLU kink
        for name, arr in ps.params.items():
            if not name.endswith(".weight"):
                arr += 0.3 * rng.standard_normal(arr.shape)
    for name in d.weight_names:
        U, _, Vt = np.linalg.svd(d.params[name])
        layer = name[: -len(".weight")]
        d.buffers[f"{layer}.u"], d.buffers[f"{layer}.v"] = U[:, 0], Vt[0]

    for _ in range(attempts):
        z, real = rng.standard_normal((6, 3)), rng.standard_normal((6, 2))

        def loss(gl, dl):
            fake = generator_forward(g, z, leaves=gl)
            d_real = discriminator_forward(d, real, leaves=dl)
            d_fake = discriminator_forward(d, fake, leaves=dl)
            d_loss = nc.add(nc.mean(nc.relu(nc.sub(1.0, d_real))), nc.mean(nc.relu(nc.add(1.0, d_fake))))
            # weight the generator term so it does not cancel the fake half of the hinge
            return nc.sub(d_loss, nc.mul(nc.mean(d_fake), 0.3))

        def value():
            with nc.no_grad():
                return loss(bind(g, requires_grad=False), bind(d, requires_grad=False)).item()

        gl, dl = bind(g), bind(d)
        nc.backward(loss(gl, dl))
        worst, kink = 0.0, False
        for ps, leaves in ((g, gl), (d, dl)):
            for name, leaf in leaves.items():
                num = central_diff(value, ps.params[name])
                if rel_error(num, central_diff(value, ps.params[name], FD_STEP / 4)) > GRAD_RTOL:
                    kink = True
                    break
                worst = max(worst, rel_error(leaf.grad, num))
            if kink:
                break
        if not kink:
            return worst
    raise RuntimeError(f"seed {seed}: every draw landed on a kink")


# -------------------------------------------------------------------- Adam

def reference_adam(p0, grad_fn, steps, lr=2e-4, b1=0.5, b2=0.999, eps=1e-8, mask=None):
    """Element-by-element Adam written with Python floats."""
    p = [float(x) for x in np.ravel(p0)]
    keep = [1.0] * len(p) if mask is None else [float(x) for x in np.ravel(mask)]
    m, v = [0.0] * len(p), [0.0] * len(p)
    out = []
    for t in range(1, steps + 1):
        g = [float(x) for x in np.ravel(grad_fn(np.array(p).reshape(np.shape(p0))))]
        for i in range(len(p)):
            if keep[i] == 0.0:
                continue
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            mhat = m[i] / (1 - b1**t)
            vhat = v[i] / (1 - b2**t)
            p[i] -= lr * mhat / (math.sqrt(vhat) + eps)
        out.append(np.array(p).reshape(np.shape(p0)))
    return out


# ------------------------------------------------------------- other math

def mac_count(config, hidden_kept, batch: int = 1) -> int:
    """Count multiply-accumulates by running a pruned forward pass with explicit loops."""
    rng = np.random.default_rng(0)
    dims = [config.in_dim, *hidden_kept, config.out_dim]
    x = rng.standard_normal((batch, dims[0])).tolist()
    count = 0
    for din, dout in zip(dims[:-1], dims[1:]):
        w = rng.standard_normal((din, dout)).tolist()
        y = []
        for row in x:
            acc = [0.0] * dout
            for j in range(dout):
                for i in range(din):
                    acc[j] += row[i] * w[i][j]
                    count += 1
            y.append([max(a, 0.0) for a in acc])
        x = y
    return count // batch


def frechet_oracle(mu_a, cov_a, mu_b, cov_b) -> float:
    """d^2 with the square root of cov_a @ cov_b taken from its (real, non-negative) eigenvalue roots."""
    prod = np.asarray(cov_a) @ np.asarray(cov_b)
    lam = np.linalg.eigvals(prod)
    root_trace = float(np.sum(np.sqrt(np.clip(lam.real, 0.0, None))))
    diff = np.asarray(mu_a) - np.asarray(mu_b)
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * root_trace)


def prox_grid(x: float, lam: float, half_width: float = 4.0, n: int = 400_001) -> float:
    """argmin_y 0.5 (y - x)^2 + lam |y| by dense grid search, refined once around the best cell."""
    ys = np.linspace(x - half_width, x + half_width, n)
    obj = 0.5 * (ys - x) ** 2 + lam * np.abs(ys)
    i = int(np.argmin(obj))
    step = ys[1] - ys[0]
    fine = np.linspace(ys[i] - step, ys[i] + step, 20_001)
    fobj = 0.5 * (fine - x) ** 2 + lam * np.abs(fine)
    return float(fine[int(np.argmin(fobj))])


def scalar_ista_steps(gamma: float, eta: float, rho: float, limit: int = 10_000) -> int:
    """Steps until ``g <- soft(g - eta sgn g, rho eta)`` first reaches exactly 0.

    The subgradient step halts at the kink: a sign flip lands on 0.
    """
    for k in range(1, limit + 1):
        s = (gamma > 0) - (gamma < 0)
        y = gamma - eta * s
        if y * s < 0:
            y = 0.0
        gamma = (1 if y > 0 else -1 if y < 0 else 0) * max(abs(y) - rho * eta, 0.0)
        if gamma == 0.0:
            return k
    return -1


# Two-sided 95% Student-t quantiles from a printed statistical table.
T_TABLE_975 = {1: 12.706, 2: 4.303, 3: 3.182, 4: 2.776, 5: 2.571, 9: 2.262}
