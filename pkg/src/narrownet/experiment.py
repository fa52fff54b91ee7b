"""Desk-scale regression rate study with the prescribed architecture sizing.

Networks are trained by mini-batch Adam on squared loss from He-style
initialization, with a best-of-restarts rule standing in for the empirical
risk minimizer; backpropagation for the dense ReLU stack is implemented
here. Trend checks are deliberately band tests: gradient training only
approximates the ERM the theory speaks about, so train losses are reported
alongside the rates.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .targets import TargetFunction, make_target

RULE_OPTIMAL = "optimal"       # H ~ n^(d/(4 beta + 2 d)), L ~ log2 n
RULE_SUBOPTIMAL = "suboptimal" # H ~ n^(d/(2 (beta + d))) * log2(n)^2


class TrainingDivergedError(RuntimeError):
    pass


def size_architecture(rule: str, n: int, d: int, beta: int,
                      c_h: float = 1.0, c_l: float = 1.0) -> tuple:
    """(width H, depth L) under the optimal or suboptimal sizing rule."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if rule == RULE_OPTIMAL:
        exponent = d / (4.0 * beta + 2.0 * d)
        log_power = 0
    elif rule == RULE_SUBOPTIMAL:
        exponent = d / (2.0 * (beta + d))
        log_power = 2
    else:
        raise ValueError(f"unknown sizing rule {rule!r}")
    h = max(4, round(c_h * n ** exponent * math.log2(n) ** log_power))
    l = max(2, round(c_l * math.log2(n)))
    return int(h), int(l)


def gen_data(target: TargetFunction, n: int, noise_sd: float, clamp_m: float,
             seed: int) -> tuple:
    """n pairs (x_i, y_i), y = f(x) + truncated Gaussian noise, |y| <= M."""
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-1.0, 1.0, size=(n, target.dim))
    f = target.evaluate_batch(xs)
    if np.any(np.abs(f) > clamp_m):
        raise ValueError("target values exceed M; boundedness assumption broken")
    noise = np.zeros(n)
    if noise_sd > 0.0:
        cap = clamp_m - np.abs(f)
        noise = rng.normal(0.0, noise_sd, size=n)
        bad = np.abs(noise) > cap
        while np.any(bad):  # truncation by resampling, still seeded
            noise[bad] = rng.normal(0.0, noise_sd, size=int(bad.sum()))
            bad = np.abs(noise) > cap
    return xs, f + noise


# ---------------------------------------------------------------------------
# dense MLP with hand-rolled backprop
# ---------------------------------------------------------------------------


def init_params(d: int, h: int, l: int, rng, bias_scale: float = 0.0) -> list:
    """He-style initialization for layer sizes d -> h (x l) -> 1.

    bias_scale > 0 gives random biases; used by the gradient check so no
    pre-activation sits exactly on the ReLU kink (dead units with zero
    biases land there structurally and break finite differences).
    """
    sizes = [d] + [h] * l + [1]
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        b = bias_scale * rng.normal(size=fan_out) if bias_scale else np.zeros(fan_out)
        params.append([w, b])
    return params


def looks_linear_init(d: int, h: int, l: int, rng, noise: float = 0.1) -> list:
    """Mirrored-pair initialization: the network is linear at start.

    Unit pairs realize v = relu(v) - relu(-v), so signals pass through every
    depth unattenuated and no unit starts dead. Plain He initialization
    collapses the narrow deep architectures the sizing rule prescribes
    (width 4, depth ~ log n); this is the same identity-passing identity the
    constructive networks use, applied at initialization.
    """
    pairs = h // 2
    params = []
    w = np.zeros((h, d))
    for p in range(pairs):
        k = p % d
        w[2 * p, k] = 1.0
        w[2 * p + 1, k] = -1.0
    w = w + noise * rng.normal(size=w.shape) / math.sqrt(d)
    params.append([w, np.zeros(h)])
    for _ in range(l - 1):
        w = np.zeros((h, h))
        for q in range(pairs):
            w[2 * q, 2 * q] = 1.0
            w[2 * q, 2 * q + 1] = -1.0
            w[2 * q + 1, 2 * q] = -1.0
            w[2 * q + 1, 2 * q + 1] = 1.0
        w = w + noise * rng.normal(size=w.shape) / math.sqrt(h)
        params.append([w, np.zeros(h)])
    params.append([noise * rng.normal(size=(1, h)) / math.sqrt(h), np.zeros(1)])
    return params


def forward(params, xs):
    """Returns (prediction, per-layer pre-activations) for backprop."""
    h = xs
    pre = []
    for i, (w, b) in enumerate(params):
        z = h @ w.T + b
        pre.append((h, z))
        h = np.maximum(z, 0.0) if i < len(params) - 1 else z
    return h[:, 0], pre


def loss_and_grads(params, xs, ys):
    """Mean squared error and its gradients for every weight and bias."""
    preds, pre = forward(params, xs)
    n = xs.shape[0]
    resid = preds - ys
    loss = float(np.mean(resid ** 2))
    grads = [None] * len(params)
    delta = (2.0 / n) * resid[:, None]
    for i in reversed(range(len(params))):
        w, _ = params[i]
        h_in, z = pre[i]
        if i < len(params) - 1:
            delta = delta * (z > 0.0)
        grads[i] = [delta.T @ h_in, delta.sum(axis=0)]
        if i > 0:
            delta = delta @ w
    return loss, grads


def predict(params, xs, clamp_m: float):
    """Network output truncated to [-2M, 2M] (the estimator's sup constraint)."""
    preds, _ = forward(params, np.atleast_2d(xs))
    return np.clip(preds, -2.0 * clamp_m, 2.0 * clamp_m)


@dataclass(frozen=True)
class TrainerConfig:
    steps: int = 3000
    steps_per_sample: float = 1.0   # extra steps per training point
    batch_size: int = 128
    learning_rate: float = 0.01
    restarts: int = 3
    decay_at: float = 0.7      # fraction of steps after which lr is cut
    decay_factor: float = 0.1

    def total_steps(self, n: int) -> int:
        return self.steps + int(round(self.steps_per_sample * n))


@dataclass
class TrainedNet:
    params: list
    clamp_m: float
    train_mse: float
    restarts_used: int

    def __call__(self, xs):
        return predict(self.params, xs, self.clamp_m)


def _adam_run(xs, ys, h, l, trainer, rng, lr):
    params = looks_linear_init(xs.shape[1], h, l, rng)
    m = [[np.zeros_like(w), np.zeros_like(b)] for w, b in params]
    v = [[np.zeros_like(w), np.zeros_like(b)] for w, b in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    n = xs.shape[0]
    batch = min(trainer.batch_size, n)
    total = trainer.total_steps(n)
    cut = int(trainer.decay_at * total)
    for step in range(1, total + 1):
        idx = rng.integers(0, n, size=batch)
        loss, grads = loss_and_grads(params, xs[idx], ys[idx])
        if not math.isfinite(loss):
            return None, math.inf
        rate = lr * (trainer.decay_factor if step > cut else 1.0)
        for i in range(len(params)):
            for j in range(2):
                g = grads[i][j]
                m[i][j] = b1 * m[i][j] + (1 - b1) * g
                v[i][j] = b2 * v[i][j] + (1 - b2) * g * g
                mhat = m[i][j] / (1 - b1 ** step)
                vhat = v[i][j] / (1 - b2 ** step)
                params[i][j] = params[i][j] - rate * mhat / (np.sqrt(vhat) + eps)
    final_loss, _ = loss_and_grads(params, xs, ys)
    if not math.isfinite(final_loss):
        return None, math.inf
    return params, final_loss


def train(xs, ys, h: int, l: int, trainer: TrainerConfig, clamp_m: float,
          seed: int) -> TrainedNet:
    """Best-of-restarts Adam training; NaN runs retry with halved rates."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    rng = np.random.default_rng(seed)
    best = None
    best_loss = math.inf
    used = 0
    for restart in range(max(1, trainer.restarts)):
        lr = trainer.learning_rate
        params = None
        for attempt in range(4):
            with np.errstate(all="ignore"):  # overflow is caught by the NaN gate
                params, loss = _adam_run(xs, ys, h, l, trainer, rng, lr)
            if params is not None:
                break
            lr *= 0.5
        if params is None:
            raise TrainingDivergedError(
                f"training diverged after 3 halvings (restart {restart})"
            )
        used += 1
        if loss < best_loss:
            best, best_loss = params, loss
    return TrainedNet(params=best, clamp_m=clamp_m, train_mse=best_loss,
                      restarts_used=used)


GRAD_CHECK_FLOOR = 1e-6  # gradients below this sit under the FD noise floor
                         # (~1e-12 absolute for central differences at h=1e-6)


def gradient_check(d: int, h: int, l: int, n_weights: int = 20,
                   seed: int = 0, batch: int = 32) -> float:
    """Max relative error between backprop and central finite differences.

    Relative error uses an absolute denominator floor so that coordinates
    whose true gradient is smaller than the finite-difference resolution do
    not register spurious failures; any sign or scale bug on a meaningful
    gradient still trips the gate.
    """
    rng = np.random.default_rng(seed)
    params = init_params(d, h, l, rng, bias_scale=0.1)
    xs = rng.uniform(-1.0, 1.0, size=(batch, d))
    ys = rng.uniform(-0.5, 0.5, size=batch)
    _, grads = loss_and_grads(params, xs, ys)
    worst = 0.0
    step = 1e-6
    for _ in range(n_weights):
        i = int(rng.integers(0, len(params)))
        j = int(rng.integers(0, 2))
        arr = params[i][j]
        idx = tuple(int(rng.integers(0, s)) for s in arr.shape)
        orig = arr[idx]
        arr[idx] = orig + step
        up, _ = loss_and_grads(params, xs, ys)
        arr[idx] = orig - step
        down, _ = loss_and_grads(params, xs, ys)
        arr[idx] = orig
        numeric = (up - down) / (2.0 * step)
        analytic = grads[i][j][idx]
        denom = max(abs(numeric), abs(analytic), GRAD_CHECK_FLOOR)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


# ---------------------------------------------------------------------------
# rate study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    d: int = 1
    beta: int = 2
    target_name: str = "sin_scaled"
    noise_sd: float = 0.1
    n_grid: tuple = (512, 1024, 2048, 4096, 8192)
    sizing_rule: str = RULE_OPTIMAL
    clamp_m: float = 1.0
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    n_seeds: int = 5
    n_test: int = 100_000
    seed: int = 0

    def __post_init__(self):
        grid = tuple(self.n_grid)
        if len(grid) < 4 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("n_grid must be strictly increasing with >= 4 entries")
        object.__setattr__(self, "n_grid", grid)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        if "trainer" in doc:
            doc["trainer"] = TrainerConfig(**doc["trainer"])
        if "n_grid" in doc:
            doc["n_grid"] = tuple(int(v) for v in doc["n_grid"])
        return cls(**doc)


@dataclass
class RateResult:
    config: ExperimentConfig
    cells: list                 # dicts: rule, n, seed, H, L, train_mse, test_mse
    median_mse: dict            # n -> median test mse over seeds
    slope: float
    slope_half_width: float
    architectures: dict         # n -> (H, L) under the configured rule

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["rule", "d", "beta", "n", "seed", "H", "L",
                         "train_mse", "test_mse"])
        for cell in self.cells:
            writer.writerow([cell["rule"], self.config.d, self.config.beta,
                             cell["n"], cell["seed"], cell["H"], cell["L"],
                             f"{cell['train_mse']:.8g}", f"{cell['test_mse']:.8g}"])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "rule": self.config.sizing_rule,
            "d": self.config.d,
            "beta": self.config.beta,
            "noise_sd": self.config.noise_sd,
            "slope": self.slope,
            "slope_half_width": self.slope_half_width,
            "theoretical_slope": -2.0 * self.config.beta / (2.0 * self.config.beta + self.config.d),
            "median_mse": {str(n): v for n, v in self.median_mse.items()},
            "architectures": {str(n): list(v) for n, v in self.architectures.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def to_gnuplot(self) -> str:
        """Plain `n median_mse` rows, plottable with gnuplot's default styles."""
        lines = ["# n median_test_mse"]
        for n in self.config.n_grid:
            lines.append(f"{n} {self.median_mse[n]:.8g}")
        return "\n".join(lines) + "\n"


def _mix_seed(*parts) -> int:
    # deterministic across processes, unlike hash() on strings
    out = 0
    for p in parts:
        out = (out * 1_000_003 + int(p)) % (2 ** 32)
    return out


def _run_cell(args):
    config, n, seed = args
    target = make_target(config.target_name, config.d, config.beta)
    h, l = size_architecture(config.sizing_rule, n, config.d, config.beta)
    xs, ys = gen_data(target, n, config.noise_sd, config.clamp_m,
                      seed=_mix_seed(config.seed, n, seed, 1))
    net = train(xs, ys, h, l, config.trainer, config.clamp_m,
                seed=_mix_seed(config.seed, n, seed, 2))
    rng = np.random.default_rng(_mix_seed(config.seed, n, seed, 3))
    test_x = rng.uniform(-1.0, 1.0, size=(config.n_test, config.d))
    resid = net(test_x) - target.evaluate_batch(test_x)
    return {
        "rule": config.sizing_rule, "n": n, "seed": seed, "H": h, "L": l,
        "train_mse": net.train_mse, "test_mse": float(np.mean(resid ** 2)),
    }


def _worker_count() -> int:
    raw = os.environ.get("NARROWNET_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_rate_study(config: ExperimentConfig) -> RateResult:
    """Train across the n-grid and seeds, then fit the log-log MSE slope."""
    jobs = [(config, n, seed)
            for n in config.n_grid for seed in range(config.n_seeds)]
    workers = _worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_run_cell, jobs))
    else:
        cells = [_run_cell(job) for job in jobs]
    cells.sort(key=lambda c: (c["n"], c["seed"]))
    median_mse = {}
    for n in config.n_grid:
        vals = [c["test_mse"] for c in cells if c["n"] == n]
        median_mse[n] = float(np.median(vals))
    log_n = np.log(np.array(config.n_grid, dtype=float))
    slope = float(np.polyfit(log_n, np.log([median_mse[n] for n in config.n_grid]), 1)[0])
    per_seed = []
    for seed in range(config.n_seeds):
        ys = [math.log(next(c["test_mse"] for c in cells
                            if c["n"] == n and c["seed"] == seed))
              for n in config.n_grid]
        per_seed.append(float(np.polyfit(log_n, ys, 1)[0]))
    half_width = (max(per_seed) - min(per_seed)) / 2.0 if len(per_seed) > 1 else 0.0
    archs = {n: size_architecture(config.sizing_rule, n, config.d, config.beta)
             for n in config.n_grid}
    return RateResult(config=config, cells=cells, median_mse=median_mse,
                      slope=slope, slope_half_width=half_width,
                      architectures=archs)
