"""L1-loss training with AdamW, plus the finite-difference gradient checker.

Training runs in normalized space (min-max per channel, stats from the
training split only), selects the best checkpoint by validation L1, and
reports test metrics after denormalizing predictions back to actual value
ranges.
"""

from __future__ import annotations

import json
import math
import queue
import threading
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from . import ops
from .data import ChannelStats, TrafficDataset, WindowSample, make_windows, minmax_denormalize, \
    minmax_normalize, split, stats_from_windows
from .metrics import MetricsReport, compute_metrics
from .model import DDCN, ModelConfig
from .numerics import (
    KinkProbe,
    NumericalError,
    Param,
    ShapeError,
    Tape,
    Tensor,
    add_flops,
    backward,
    mul,
    probe_kink,
    probing_active,
    record,
    reduce_sum,
    save_checkpoint,
)

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "RunRecord",
    "l1_loss",
    "AdamW",
    "iter_batches",
    "prefetch_batches",
    "eval_l1",
    "eval_metrics",
    "train_loop",
    "GradCheckResult",
    "GradCheckReport",
    "gradcheck_ops",
    "gradcheck_model",
    "max_relative_error",
    "finite_difference",
]


@dataclass
class TrainConfig:
    """Optimization hyperparameters. Defaults follow the training protocol
    (batch 16, AdamW, L1 loss, 100 epochs); learning rate and weight decay
    are conventional optimizer settings, configurable and logged."""

    batch_size: int = 16
    epochs: int = 100
    learning_rate: float = 1e-3
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    patience: int | None = None

    def validate(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        # lr == 0 is allowed as an explicit null optimizer (useful for tests).
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {b}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {unknown}")
        return cls(**data).validate()


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference; gradient is sign(pred - target)/n.

    The subgradient at exact ties is 0 (ties are measure-zero under
    continuous data and this keeps updates finite).
    """
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"l1_loss: shapes differ: {pred.data.shape} vs {target.data.shape}"
        )
    diff = pred.data - target.data
    if probing_active():
        probe_kink("l1_tie", float(np.abs(diff).min()))
    out = Tensor._wrap(np.array([np.abs(diff).mean()], dtype=pred.data.dtype))
    add_flops(2 * diff.size)
    n = diff.size

    def vjp(g):
        gp = g[0] * np.sign(diff) / pred.data.dtype.type(n)
        return (gp, -gp)

    record((pred, target), out, vjp)
    return out


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay: p *= (1 - lr*wd) before the
    bias-corrected moment update. With wd = 0 this is plain Adam."""

    def __init__(self, params: Iterable[Param], learning_rate=1e-3, weight_decay=1e-2,
                 beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = [p for p in params if p.trainable]
        self.learning_rate = float(learning_rate)
        self.weight_decay = float(weight_decay)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = 0

    @classmethod
    def from_config(cls, params, cfg: TrainConfig) -> "AdamW":
        return cls(params, cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.epsilon)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self._t += 1
        bc1 = 1.0 - self.beta1 ** self._t
        bc2 = 1.0 - self.beta2 ** self._t
        lr = self.learning_rate
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if self.weight_decay != 0.0:
                p.data *= p.data.dtype.type(1.0 - lr * self.weight_decay)
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)).astype(p.data.dtype)


# ---------------------------------------------------------------------------
# Batching and evaluation
# ---------------------------------------------------------------------------


def iter_batches(
    windows: Sequence[WindowSample],
    stats: ChannelStats,
    batch_size: int,
    order: np.ndarray | None = None,
    dtype=np.float32,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield normalized (inputs, targets) batches in deterministic order."""
    idx = np.arange(len(windows)) if order is None else order
    for start in range(0, len(idx), batch_size):
        chunk = idx[start : start + batch_size]
        xb = np.stack([minmax_normalize(windows[i].input, stats) for i in chunk])
        yb = np.stack([minmax_normalize(windows[i].target, stats) for i in chunk])
        yield xb.astype(dtype), yb.astype(dtype)


def prefetch_batches(batches: Iterable, depth: int = 2) -> Iterator:
    """Stage batches on a worker thread through a bounded queue, preserving order."""
    q: queue.Queue = queue.Queue(maxsize=depth)
    sentinel = object()

    def worker():
        for item in batches:
            q.put(item)
        q.put(sentinel)

    thread = threading.Thread(target=worker, daemon=True)
    thread.start()
    while True:
        item = q.get()
        if item is sentinel:
            break
        yield item
    thread.join()


def eval_l1(model: DDCN, windows: Sequence[WindowSample], stats: ChannelStats,
            batch_size: int) -> float:
    """Mean absolute error over all elements, in normalized space."""
    total = 0.0
    count = 0
    for xb, yb in iter_batches(windows, stats, batch_size, dtype=model.dtype):
        pred = model.predict(xb)
        total += float(np.abs(pred - yb).sum())
        count += pred.size
    return total / count


def eval_metrics(model: DDCN, windows: Sequence[WindowSample], stats: ChannelStats,
                 batch_size: int, mask_threshold: float = 1e-6) -> MetricsReport:
    """Denormalize predictions and score them against raw targets."""
    preds = []
    actuals = []
    for start in range(0, len(windows), batch_size):
        chunk = windows[start : start + batch_size]
        xb = np.stack([minmax_normalize(s.input, stats) for s in chunk]).astype(model.dtype)
        pred = model.predict(xb)
        preds.append(minmax_denormalize(pred, stats))
        actuals.append(np.stack([s.target for s in chunk]))
    return compute_metrics(np.concatenate(preds), np.concatenate(actuals), mask_threshold)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_l1: float
    val_l1: float
    wall_time_s: float


@dataclass
class RunRecord:
    """Per-epoch curves plus the best-validation checkpoint and final metrics."""

    epochs: list
    best_epoch: int
    best_val_l1: float
    final: dict
    checkpoint_path: str | None = None

    def write_jsonl(self, path):
        with open(path, "w") as f:
            for rec in self.epochs:
                f.write(json.dumps(asdict(rec)) + "\n")

    def summary(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "best_val_l1": self.best_val_l1,
            "epochs_run": len(self.epochs),
            "checkpoint": self.checkpoint_path,
            "final": self.final,
        }

    def write_summary(self, path):
        with open(path, "w") as f:
            json.dump(self.summary(), f, indent=2)


def _first_nonfinite_param(model: DDCN) -> str:
    for name, p in model.named_params():
        if not np.isfinite(p.data).all():
            return f"{name} (value)"
    for name, p in model.named_params():
        if p.grad is not None and not np.isfinite(p.grad).all():
            return f"{name} (grad)"
    return "none (all parameter values and gradients finite)"


def _split_report(model, windows, stats, batch_size, mask_threshold):
    return {
        "l1_normalized": eval_l1(model, windows, stats, batch_size),
        "metrics": eval_metrics(model, windows, stats, batch_size, mask_threshold).to_dict(),
    }


def train_loop(
    model: DDCN,
    dataset: TrafficDataset,
    cfg: TrainConfig,
    out_dir=None,
    ratios=(7, 1, 2),
    mask_threshold: float = 1e-6,
    prefetch: bool = False,
    log: Callable[[str], None] | None = None,
) -> RunRecord:
    """Train on chronological splits, checkpoint the best validation epoch,
    and evaluate every split with the restored best parameters.

    Raises NumericalError naming the first offending parameter if the loss
    goes non-finite.
    """
    cfg.validate()
    windows = make_windows(dataset, model.config.input_steps)
    parts = split(windows, ratios)
    stats = stats_from_windows(parts.train)
    dataset.stats = stats

    opt = AdamW.from_config(model.params(), cfg)
    rng = np.random.default_rng(cfg.seed)
    records: list[EpochRecord] = []
    best_val = math.inf
    best_state = None
    best_epoch = -1

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(parts.train))
        batches = iter_batches(parts.train, stats, cfg.batch_size, order, model.dtype)
        if prefetch:
            batches = prefetch_batches(batches)
        total = 0.0
        seen = 0
        for batch_idx, (xb, yb) in enumerate(batches):
            with Tape() as tape:
                pred = model.forward(Tensor(xb))
                loss = l1_loss(pred, Tensor(yb))
            lv = loss.item()
            if not math.isfinite(lv):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} batch {batch_idx}; "
                    f"first offending parameter: {_first_nonfinite_param(model)}"
                )
            opt.zero_grad()
            backward(loss, tape)
            opt.step()
            total += lv * xb.shape[0]
            seen += xb.shape[0]
        train_l1 = total / seen
        val_l1 = eval_l1(model, parts.val, stats, cfg.batch_size)
        records.append(EpochRecord(epoch, train_l1, val_l1, time.perf_counter() - t0))
        if log:
            log(f"epoch {epoch}: train_l1={train_l1:.6f} val_l1={val_l1:.6f}")
        if val_l1 < best_val:
            best_val = val_l1
            best_state = model.state()
            best_epoch = epoch
        if cfg.patience is not None and epoch - best_epoch >= cfg.patience:
            break

    if best_state is None:
        # Zero-epoch run: the initial parameters are the checkpoint.
        best_state = model.state()
        best_val = eval_l1(model, parts.val, stats, cfg.batch_size)
        best_epoch = -1
    model.load_state(best_state)

    final = {
        name: _split_report(model, part, stats, cfg.batch_size, mask_threshold)
        for name, part in zip(("train", "val", "test"), parts)
    }

    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = str(out_dir / "best.ckpt")
        save_checkpoint(checkpoint_path, dict(model.named_params()))
    run = RunRecord(records, best_epoch, best_val, final, checkpoint_path)
    if out_dir is not None:
        run.write_jsonl(out_dir / "record.jsonl")
        run.write_summary(out_dir / "summary.json")
    return run


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

FD_STEP = 1e-4
# Conditioning margins for rejection-sampling gradcheck instances: bilinear
# sampling coordinates must sit at least COORD_MARGIN from any lattice line,
# and L1 residuals at least TIE_MARGIN from zero, so a +-h parameter
# perturbation cannot cross a kink.
COORD_MARGIN = 2e-3
TIE_MARGIN = 2e-2


def finite_difference(f: Callable[[], float], arrays: Sequence[np.ndarray],
                      h: float = FD_STEP) -> list[np.ndarray]:
    """Central finite differences of scalar f with respect to each array,
    perturbing elements in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    """Max |a - f| normalized by the larger of the two gradient inf-norms
    (floored at 1e-6 so identically-zero gradients compare cleanly)."""
    denom = max(float(np.abs(analytic).max()), float(np.abs(fd).max()), 1e-6)
    return float(np.abs(analytic - fd).max() / denom)


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


@dataclass
class GradCheckReport:
    results: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        out = []
        for r in self.results:
            status = "pass" if r.passed else "FAIL"
            out.append(f"{status}  {r.name:<42s} max_rel_err={r.max_rel_err:.3e} tol={r.tolerance:g}")
        return out


class _GradCase:
    def __init__(self, run: Callable[[], Tensor], checks: list):
        self.run = run
        self.checks = checks  # list of (label, Tensor)


def _case_conditioned(case: _GradCase) -> bool:
    with KinkProbe() as probe:
        case.run()
    if probe.margins.get("bilinear_coord", math.inf) < COORD_MARGIN:
        return False
    if probe.margins.get("l1_tie", math.inf) < TIE_MARGIN:
        return False
    return True


def _check_case(case: _GradCase, h: float) -> dict[str, float]:
    for _, tensor in case.checks:
        tensor.grad = np.zeros_like(tensor.data) if isinstance(tensor, Param) else None
    with Tape() as tape:
        loss = case.run()
    backward(loss, tape)
    analytic = {
        label: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
        for label, t in case.checks
    }
    fd = finite_difference(lambda: case.run().item(), [t.data for _, t in case.checks], h)
    return {
        label: max_relative_error(analytic[label], g)
        for (label, _), g in zip(case.checks, fd)
    }


def _run_cases(name: str, builder, instances: int, seed: int, tol: float,
               h: float = FD_STEP) -> list[GradCheckResult]:
    worst: dict[str, float] = {}
    accepted = 0
    attempt = seed
    limit = seed + 400 * instances
    while accepted < instances:
        if attempt >= limit:
            raise RuntimeError(f"could not build {instances} conditioned instances for {name}")
        case = builder(attempt)
        attempt += 1
        if not _case_conditioned(case):
            continue
        for label, err in _check_case(case, h).items():
            key = f"{name}.{label}"
            worst[key] = max(worst.get(key, 0.0), err)
        accepted += 1
    return [GradCheckResult(key, err, tol) for key, err in sorted(worst.items())]


def _projection_loss(out: Tensor, rng: np.random.Generator) -> Tensor:
    proj = Tensor(rng.uniform(-1.0, 1.0, out.shape), dtype=out.dtype)
    return reduce_sum(mul(out, proj))


# Case builders (all float64). Each returns a fresh instance per seed.


def _case_pointwise(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-2, 2, (2, 3, 4, 4)), dtype=np.float64)
    w = Tensor(rng.uniform(-1, 1, (5, 3)), dtype=np.float64)
    b = Tensor(rng.uniform(-1, 1, (5,)), dtype=np.float64)
    run = lambda: _projection_loss(ops.pointwise_conv(x, w, b), np.random.default_rng(seed + 7))
    return _GradCase(run, [("x", x), ("w", w), ("b", b)])


def _case_standard_conv(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-2, 2, (2, 3, 5, 5)), dtype=np.float64)
    w = Tensor(rng.uniform(-1, 1, (4, 3, 3, 3)), dtype=np.float64)
    b = Tensor(rng.uniform(-1, 1, (4,)), dtype=np.float64)
    run = lambda: _projection_loss(ops.standard_conv(x, w, b), np.random.default_rng(seed + 7))
    return _GradCase(run, [("x", x), ("w", w), ("b", b)])


def _case_standard_conv3d(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-2, 2, (1, 2, 3, 4, 4)), dtype=np.float64)
    w = Tensor(rng.uniform(-1, 1, (3, 2, 3, 3, 3)), dtype=np.float64)
    b = Tensor(rng.uniform(-1, 1, (3,)), dtype=np.float64)
    run = lambda: _projection_loss(ops.standard_conv(x, w, b), np.random.default_rng(seed + 7))
    return _GradCase(run, [("x", x), ("w", w), ("b", b)])


def _case_shared_conv(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-2, 2, (2, 3, 4, 4)), dtype=np.float64)
    w = Tensor(rng.uniform(-1, 1, (3, 3)), dtype=np.float64)
    b = Tensor(rng.uniform(-1, 1, (1,)), dtype=np.float64)
    run = lambda: _projection_loss(ops.shared_conv(x, w, b), np.random.default_rng(seed + 7))
    return _GradCase(run, [("x", x), ("w", w), ("b", b)])


def _case_bilinear(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-2, 2, (1, 2, 5, 5)), dtype=np.float64)
    r = Tensor([rng.integers(0, 4) + rng.uniform(0.15, 0.85)], dtype=np.float64)
    q = Tensor([rng.integers(0, 4) + rng.uniform(0.15, 0.85)], dtype=np.float64)
    run = lambda: _projection_loss(
        ops.bilinear_sample(x, 0, 1, r, q), np.random.default_rng(seed + 7)
    )
    return _GradCase(run, [("x", x), ("r", r), ("q", q)])


def _case_ddc_forward(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-2, 2, (1, 2, 4, 4)), dtype=np.float64)
    offsets = Tensor(rng.uniform(-1.0, 1.0, (1, 18, 4, 4)), dtype=np.float64)
    kernels = Tensor(rng.uniform(-1.0, 1.0, (1, 1, 9, 4, 4)), dtype=np.float64)
    run = lambda: _projection_loss(
        ops.ddc_forward(x, offsets, kernels, 3), np.random.default_rng(seed + 7)
    )
    return _GradCase(run, [("x", x), ("offsets", offsets), ("kernels", kernels)])


def _case_ddc_layer(seed):
    rng = np.random.default_rng(seed)
    layer = ops.DDCLayer(2, kernel_size=3, groups=1, rng=rng, dtype=np.float64)
    # Gradcheck randomizes every parameter, including the zero-initialized
    # offset branch, so the deformable path is actually exercised.
    for _, p in layer.named_params():
        p.data[...] = rng.uniform(-0.5, 0.5, p.data.shape)
    layer.offset_conv.weight.data *= 0.5
    x = Tensor(rng.uniform(-2, 2, (1, 2, 4, 4)), dtype=np.float64)
    run = lambda: _projection_loss(layer.forward(x), np.random.default_rng(seed + 7))
    checks = [("x", x)] + list(layer.named_params())
    return _GradCase(run, checks)


def _case_involution3d(seed):
    rng = np.random.default_rng(seed)
    layer = ops.Involution3D(4, kernel_size=3, groups=2, reduction=2, rng=rng, dtype=np.float64)
    for _, p in layer.named_params():
        p.data[...] = rng.uniform(-0.5, 0.5, p.data.shape)
    x = Tensor(rng.uniform(-2, 2, (1, 4, 3, 3, 3)), dtype=np.float64)
    run = lambda: _projection_loss(layer.forward(x), np.random.default_rng(seed + 7))
    checks = [("x", x)] + list(layer.named_params())
    return _GradCase(run, checks)


def _case_gelu(seed):
    rng = np.random.default_rng(seed)
    from .numerics import gelu as gelu_op

    x = Tensor(rng.uniform(-2, 2, (3, 5)), dtype=np.float64)
    run = lambda: _projection_loss(gelu_op(x), np.random.default_rng(seed + 7))
    return _GradCase(run, [("x", x)])


def _case_l1(seed):
    rng = np.random.default_rng(seed)
    pred = Tensor(rng.uniform(-2, 2, (2, 3, 4)), dtype=np.float64)
    target = Tensor(rng.uniform(-2, 2, (2, 3, 4)), dtype=np.float64)
    run = lambda: l1_loss(pred, target)
    return _GradCase(run, [("pred", pred), ("target", target)])


def _case_patch_embed(seed):
    rng = np.random.default_rng(seed)
    layer = ops.PatchEmbed(2, 2, 3, rng=rng, dtype=np.float64)
    x = Tensor(rng.uniform(-2, 2, (1, 2, 2, 4, 4)), dtype=np.float64)
    run = lambda: _projection_loss(layer.forward(x), np.random.default_rng(seed + 7))
    return _GradCase(run, [("x", x)] + list(layer.named_params()))


def _case_patch_back(seed):
    rng = np.random.default_rng(seed)
    layer = ops.PatchBack(2, 4, 2, 1, rng=rng, dtype=np.float64)
    x = Tensor(rng.uniform(-2, 2, (1, 2, 4, 2, 2)), dtype=np.float64)
    run = lambda: _projection_loss(layer.forward(x), np.random.default_rng(seed + 7))
    return _GradCase(run, [("x", x)] + list(layer.named_params()))


def tiny_model_config() -> ModelConfig:
    """Smallest full architecture used by the end-to-end gradient check."""
    return ModelConfig(
        in_channels=1, input_steps=2, patch_size=2, embed_dim=4, depth=1,
        ddc_kernel=3, involution_kernel=3, groups=1, reduction=4, ffn_expansion=2,
    )


def build_gradcheck_model(seed: int, config: ModelConfig | None = None) -> DDCN:
    """Tiny float64 model with every parameter randomized.

    The offset branch is deliberately non-zero (scaled down) so deformable
    sampling happens at generic fractional coordinates.
    """
    cfg = config or tiny_model_config()
    model = DDCN(cfg, grid_size=(4, 4), dtype=np.float64, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for name, p in model.named_params():
        p.data[...] = rng.uniform(-0.6, 0.6, p.data.shape)
        if "offset_conv" in name:
            p.data *= 0.25
    return model


def _case_model(seed):
    model = build_gradcheck_model(seed)
    rng = np.random.default_rng(seed + 2)
    cfg = model.config
    x = Tensor(
        rng.uniform(-1, 1, (1, cfg.input_steps, cfg.in_channels) + model.grid_size),
        dtype=np.float64,
    )
    y = Tensor(
        rng.uniform(-1, 1, (1, cfg.in_channels) + model.grid_size), dtype=np.float64
    )
    run = lambda: l1_loss(model.forward(x), y)
    checks = [("input", x)] + list(model.named_params())
    return _GradCase(run, checks)


_OP_CASES = {
    "pointwise_conv": (_case_pointwise, 1e-6),
    "standard_conv": (_case_standard_conv, 1e-6),
    "standard_conv3d": (_case_standard_conv3d, 1e-6),
    "shared_conv": (_case_shared_conv, 1e-6),
    "bilinear_sample": (_case_bilinear, 1e-4),
    "ddc_forward": (_case_ddc_forward, 1e-4),
    "ddc_layer": (_case_ddc_layer, 1e-4),
    "involution3d": (_case_involution3d, 1e-4),
    "patch_embed": (_case_patch_embed, 1e-6),
    "patch_back": (_case_patch_back, 1e-6),
    "gelu": (_case_gelu, 1e-4),
    "l1_loss": (_case_l1, 1e-4),
}


def gradcheck_ops(tol: float | None = None, instances: int = 20, seed: int = 0,
                  names: Sequence[str] | None = None) -> GradCheckReport:
    """Analytic-vs-finite-difference check for every operator, aggregated
    over ``instances`` well-conditioned random instances each."""
    results = []
    for name, (builder, default_tol) in _OP_CASES.items():
        if names is not None and name not in names:
            continue
        results.extend(_run_cases(name, builder, instances, seed, tol or default_tol))
    return GradCheckReport(results)


def gradcheck_model(tol: float = 1e-4, instances: int = 1, seed: int = 0) -> GradCheckReport:
    """End-to-end gradient check of the tiny DDCN under L1 loss."""
    results = _run_cases("ddcn", _case_model, instances, seed, tol)
    return GradCheckReport(results)
