"""Self-checks behind the ``oracle`` command.

Each check compares the vectorized implementation with an independent one
(scalar loops, central finite differences, brute-force penalty sums) and
reports pass/fail.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import AttentionGate, attend, attend_backward
from .global_net import deviation_w, modified_reward
from .numerics import Mlp, backward, forward, init_mlp

FD_STEP = 1e-6
REL_TOL = 1e-4
ABS_TOL = 1e-7


@dataclass
class OracleResult:
    name: str
    passed: bool
    cases: int
    worst: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.cases} cases, worst error {self.worst:.3g} {self.detail}".rstrip()


def loop_forward(net: Mlp, x) -> list[float]:
    """Scalar-loop forward pass sharing nothing with the vectorized one but the parameter layout."""
    p = [float(v) for v in net.params]
    h = [float(v) for v in x]
    pos = 0
    sizes = net.layer_sizes
    for li in range(len(sizes) - 1):
        n_in, n_out = sizes[li], sizes[li + 1]
        w = p[pos:pos + n_in * n_out]
        pos += n_in * n_out
        b = p[pos:pos + n_out]
        pos += n_out
        z = [sum(w[o * n_in + i] * h[i] for i in range(n_in)) + b[o] for o in range(n_out)]
        if li < len(sizes) - 2:
            h = [math.tanh(v) if net.hidden_activation == "tanh" else max(v, 0.0) for v in z]
        elif net.output_activation == "tanh_scaled":
            h = [net.output_bound * math.tanh(v) for v in z]
        else:
            h = z
    return h


def central_difference(fn, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = out.reshape(-1)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = step
        e = e.reshape(x.shape)
        flat[i] = (fn(x + e) - fn(x - e)) / (2 * step)
    return out


def grad_error(analytic, numeric, rel=REL_TOL, abs_tol=ABS_TOL) -> tuple[bool, float]:
    """Mixed test: relative error where |numeric| > abs_tol, absolute otherwise."""
    analytic = np.asarray(analytic).ravel()
    numeric = np.asarray(numeric).ravel()
    diff = np.abs(analytic - numeric)
    big = np.abs(numeric) > abs_tol
    ok_rel = diff[big] <= rel * np.abs(numeric[big])
    ok_abs = diff[~big] <= abs_tol
    worst = max([0.0, *(diff[big] / np.abs(numeric[big])), *(diff[~big] / abs_tol * rel)])
    return bool(ok_rel.all() and ok_abs.all()), float(worst)


def random_net(rng: np.random.Generator, max_width: int = 4, max_layers: int = 3) -> Mlp:
    n_layers = int(rng.integers(1, max_layers + 1))
    sizes = [int(rng.integers(1, max_width + 1)) for _ in range(n_layers + 1)]
    # tanh only: relu kinks make finite differences ill-posed at a measure-zero set we could hit
    out_act = "tanh_scaled" if rng.random() < 0.5 else "identity"
    return init_mlp(sizes, rng, "tanh", out_act, float(rng.uniform(0.5, 2.0)))


def check_mlp_gradients(n_cases: int = 100, seed: int = 0) -> OracleResult:
    rng = np.random.default_rng(seed)
    worst, passed = 0.0, True
    for _ in range(n_cases):
        net = random_net(rng)
        x = rng.normal(size=net.n_in)
        g = rng.normal(size=net.n_out)
        rep = backward(net, x, g)
        num_p = central_difference(lambda p: float(np.dot(forward(net.with_params(p), x), g)), net.params)
        num_x = central_difference(lambda v: float(np.dot(forward(net, v), g)), x)
        ok1, w1 = grad_error(rep.param_grads, num_p)
        ok2, w2 = grad_error(rep.input_grads, num_x)
        passed &= ok1 and ok2
        worst = max(worst, w1, w2)
    return OracleResult("mlp backward vs central differences", passed, n_cases, worst)


def check_mlp_forward(n_cases: int = 100, seed: int = 1) -> OracleResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        net = random_net(rng)
        x = rng.normal(size=net.n_in)
        worst = max(worst, float(np.max(np.abs(forward(net, x) - np.array(loop_forward(net, x))))))
    return OracleResult("mlp forward vs scalar loops", worst <= 1e-12, n_cases, worst)


def check_attention_gradients(n_cases: int = 100, seed: int = 2) -> OracleResult:
    rng = np.random.default_rng(seed)
    worst, passed = 0.0, True
    for _ in range(n_cases):
        n = int(rng.integers(1, 6))
        d = int(rng.integers(1, 5))
        g = rng.normal(size=n)
        x = rng.normal(size=(n, d))
        f = rng.normal(size=n)
        gy = rng.normal(size=d)
        grads = attend_backward(AttentionGate(g), x, f, gy)

        def loss(gv, xv, fv):
            return float(attend(AttentionGate(gv), xv, fv).fused @ gy)

        checks = [
            (grads.gate_grads, central_difference(lambda v: loss(v, x, f), g)),
            (grads.feature_grads, central_difference(lambda v: loss(g, v, f), x)),
            (grads.signal_grads, central_difference(lambda v: loss(g, x, v), f)),
        ]
        for analytic, numeric in checks:
            ok, w = grad_error(analytic, numeric)
            passed &= ok
            worst = max(worst, w)
    return OracleResult("attention backward vs central differences", passed, n_cases, worst)


def brute_force_deviation(actions: list[list[float]], w: int) -> float:
    n = len(actions)
    dim = len(actions[0])
    total = 0.0
    for i in range(dim):
        others = 0.0
        for v in range(n):
            if v != w:
                others += actions[v][i]
        diff = actions[w][i] - others / (n - 1)
        total += diff * diff
    return total


def brute_force_modified_reward(r: float, actions, gamma_r: float) -> float:
    n = len(actions)
    return r - gamma_r * sum(brute_force_deviation(actions, w) for w in range(n)) / n


def check_penalty(n_cases: int = 1000, seed: int = 3) -> OracleResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    exact = True
    for _ in range(n_cases):
        n = int(rng.integers(2, 7))
        dim = int(rng.integers(1, 6))
        a = rng.uniform(-1, 1, size=(n, dim))
        r = float(rng.normal())
        gamma_r = float(rng.uniform(0, 1))
        rows = a.tolist()
        for w in range(n):
            worst = max(worst, abs(deviation_w(a, w) - brute_force_deviation(rows, w)))
        worst = max(worst, abs(modified_reward(r, a, gamma_r) - brute_force_modified_reward(r, rows, gamma_r)))
        same = np.repeat(a[:1], n, axis=0)
        exact &= modified_reward(r, same, gamma_r) == r
    return OracleResult("deviation penalty vs brute force", worst <= 1e-12 and exact, n_cases, worst,
                        "" if exact else "(identical actions did not give r exactly)")


def run_all() -> list[OracleResult]:
    return [check_mlp_forward(), check_mlp_gradients(), check_attention_gradients(), check_penalty()]
