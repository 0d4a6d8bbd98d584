"""Training, gate-only transfer, semantic memory, rollout, and metrics.

Foundation training optimizes every parameter jointly over a shuffled union
of all tasks' samples. Transfer freezes the backbone and fine-tunes only the
gate networks and label encoder; the resulting gate snapshot is stored in a
per-label memory pool, so reactivating an old label reproduces its
predictions bit-for-bit.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import NumericsError
from .optim import Adam, step_lr_schedule


# ---------------------------------------------------------------------------
# metrics

def relative_l2(u, u_star):
    """Frobenius-norm error ratio ||u - u*|| / ||u|| (u is the reference)."""
    u = np.asarray(u, dtype=np.float64)
    u_star = np.asarray(u_star, dtype=np.float64)
    if u.shape != u_star.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {u_star.shape}")
    denom = np.linalg.norm(u)
    if denom == 0.0:
        raise ValueError("zero ground-truth norm")
    return float(np.linalg.norm(u - u_star) / denom)


def accuracy_metric(u, u_star):
    """1 minus the relative L2 error."""
    return 1.0 - relative_l2(u, u_star)


def cosine_similarity(x, y):
    """Frobenius inner product over Frobenius norms."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError("operands must have equal shapes")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise ValueError("zero-norm operand")
    return float(np.dot(x, y) / (nx * ny))


# ---------------------------------------------------------------------------
# configuration containers

@dataclass
class TrainConfig:
    epochs: int = 50
    batch: int = 20
    lr: float = 1e-3
    weight_decay: float = 1e-6
    step_size: int = 20
    gamma: float = 0.5
    seed: int = 0
    phase: str = "foundation"
    clip_norm: float = 0.0      # 0 disables clipping

    def __post_init__(self):
        if self.phase not in ("foundation", "transfer"):
            raise ValueError("phase must be foundation or transfer")


@dataclass
class RolloutSpec:
    window: int = 10
    horizon: int = 30
    stride: int = 1

    def __post_init__(self):
        if self.window < 1 or self.horizon < 1:
            raise ValueError("window and horizon must be >= 1")


# ---------------------------------------------------------------------------
# semantic memory

class SemanticMemory:
    """Ordered pool of frozen gate-parameter snapshots keyed by task label."""

    def __init__(self):
        self._pool = {}

    def labels(self):
        return list(self._pool)

    def __contains__(self, label):
        return label in self._pool

    def snapshot(self, model):
        """Deep, read-only copy of the model's current gate parameters."""
        snap = {}
        for name, p in model.gate_parameters():
            arr = p.data.copy()
            arr.setflags(write=False)
            snap[name] = arr
        return snap

    def store(self, label, snapshot, overwrite=False):
        if label in self._pool and not overwrite:
            raise KeyError(f"label {label} already stored; pass overwrite=True to replace")
        self._pool[label] = dict(snapshot)

    def store_from_model(self, label, model, overwrite=False):
        self.store(label, self.snapshot(model), overwrite=overwrite)

    def get(self, label):
        if label not in self._pool:
            raise KeyError(f"no gate snapshot stored for label {label}")
        return self._pool[label]


def activate_task(model, memory, label):
    """Load the stored gate parameters for `label`; backbone untouched."""
    snap = memory.get(label)  # raises before any mutation
    for name, p in model.gate_parameters():
        p.data = snap[name].copy()
    return model


# ---------------------------------------------------------------------------
# loss

def relative_l2_loss(pred, target):
    """Mean over the batch of per-sample relative L2 on the graph.

    Returns (loss tensor, per-sample numpy losses).
    """
    tgt = np.asarray(target, dtype=pred.dtype)[..., None]
    diff = pred - T.Tensor(tgt)
    axes = tuple(range(1, pred.ndim))
    num = T.sqrt(T.tsum(diff * diff, axis=axes))
    denom = np.sqrt((tgt.astype(np.float64) ** 2).sum(axis=axes))
    denom = np.maximum(denom, np.finfo(np.float64).tiny)
    inv = T.Tensor((1.0 / denom).astype(pred.dtype))
    per_sample = num * inv
    return T.tmean(per_sample), per_sample.data.copy()


# ---------------------------------------------------------------------------
# training loops

def _batches(order, batch):
    for i in range(0, len(order), batch):
        yield order[i:i + batch]


def _assemble(tasks, entries):
    """Stack (task, sample, position) entries into one training batch."""
    first = tasks[entries[0][0]]
    xs = np.empty((len(entries),) + first.grid_shape() + (first.window,),
                  dtype=np.float32)
    ys = np.empty((len(entries),) + first.grid_shape(), dtype=np.float32)
    labels = np.empty(len(entries), dtype=np.int64)
    for row, (ti, si, pos) in enumerate(entries):
        xs[row], ys[row] = tasks[ti].pair(si, pos)
        labels[row] = tasks[ti].label
    return xs, ys, labels


def _run_epochs(model, tasks, cfg, opt, params, log, phase):
    rng = np.random.default_rng(cfg.seed)
    losses = []
    for epoch in range(cfg.epochs):
        lr = step_lr_schedule(epoch, cfg.lr, cfg.step_size, cfg.gamma)
        opt.lr = lr
        entries = [(ti, si) for ti, task in enumerate(tasks) for si in range(task.n)]
        perm = rng.permutation(len(entries))
        draws = rng.random(len(entries))
        order = [entries[i] + (int(draws[i] * tasks[entries[i][0]].horizon),)
                 for i in perm]
        t_start = time.perf_counter()
        task_sums = {t.label: [0.0, 0] for t in tasks}
        total, count = 0.0, 0
        for chunk in _batches(order, cfg.batch):
            xs, ys, labels = _assemble(tasks, chunk)
            opt.zero_grad()
            pred = model.forward(xs, labels)
            loss, per_sample = relative_l2_loss(pred, ys)
            if not np.isfinite(loss.data):
                raise NumericsError(
                    f"non-finite loss at epoch {epoch}, phase {phase}, "
                    f"labels {sorted(set(labels.tolist()))}")
            loss.backward()
            if phase == "transfer":
                for name, p in model.theta_parameters():
                    if p.grad is not None:
                        raise AssertionError(f"gradient reached frozen parameter {name}")
            opt.step()
            for lab, ls in zip(labels, per_sample):
                acc = task_sums[int(lab)]
                acc[0] += float(ls)
                acc[1] += 1
            total += float(per_sample.sum())
            count += len(per_sample)
        wall_ms = (time.perf_counter() - t_start) * 1e3
        epoch_loss = total / max(count, 1)
        losses.append(epoch_loss)
        if log is not None:
            for task in tasks:
                s, c = task_sums[task.label]
                mean = s / c if c else float("nan")
                log.write(f"{epoch},{phase},{task.label},{mean:.6e},{lr:.6e},{wall_ms:.1f}\n")
            log.flush()
    return losses


def train_foundation(model, tasks, cfg, memory=None, log=None):
    """Joint training over all tasks; gates are snapshotted per label at the end."""
    if not tasks:
        raise ValueError("foundation training needs at least one task")
    shapes = {t.grid_shape() + (t.window,) for t in tasks}
    if len(shapes) != 1:
        raise ValueError("all foundation tasks must share grid shape and window")
    model.set_phase("foundation")
    opt = Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay,
               clip_norm=cfg.clip_norm or None)
    losses = _run_epochs(model, tasks, cfg, opt, model.parameters(), log, "foundation")
    if memory is not None:
        for task in tasks:
            memory.store_from_model(task.label, model, overwrite=True)
    return losses


def combinatorial_transfer(model, memory, new_task, cfg, log=None, overwrite=False):
    """Gate-only fine-tuning on one new task; backbone stays bit-identical.

    Returns the stored gate snapshot. A fresh optimizer state is used for
    every transfer phase.
    """
    if new_task.label in memory and not overwrite:
        raise KeyError(f"label {new_task.label} already in memory; "
                       "pass overwrite=True to redo the transfer")
    model.set_phase("transfer")
    gate_params = [p for _, p in model.gate_parameters()]
    opt = Adam(gate_params, lr=cfg.lr, weight_decay=cfg.weight_decay,
               clip_norm=cfg.clip_norm or None)
    losses = _run_epochs(model, [new_task], cfg, opt, gate_params, log, "transfer")
    snap = memory.snapshot(model)
    memory.store(new_task.label, snap, overwrite=overwrite)
    model.set_phase("foundation")
    return snap, losses


def trainable_parameter_count(model, phase):
    """Number of scalar parameters that receive updates in the given phase."""
    if phase == "transfer":
        return sum(p.size for _, p in model.gate_parameters())
    return sum(p.size for _, p in model.named_parameters())


# ---------------------------------------------------------------------------
# rollout and evaluation

def rollout(model, label, window, spec):
    """Autoregressive forecast: slide a w-frame window one step at a time.

    `model` needs a predict_frame(window, label) -> frame method.
    """
    window = np.asarray(window)
    if window.shape[0] != spec.window:
        raise ValueError(f"window has {window.shape[0]} frames, expected {spec.window}")
    frames = []
    cur = window
    for _ in range(spec.horizon):
        nxt = model.predict_frame(cur, label)
        if nxt.shape != window.shape[1:]:
            raise ValueError(f"predicted frame shape {nxt.shape} != grid {window.shape[1:]}")
        frames.append(nxt)
        cur = np.concatenate([cur[spec.stride:], np.asarray(frames[-spec.stride:])], axis=0)
    return np.asarray(frames)


def one_step_accuracy(model, task):
    """Teacher-forced accuracy of the first forecast frame per test sample."""
    accs = np.empty(task.n)
    with T.no_grad():
        pred = model.forward(task.inputs, np.full(task.n, task.label)).data[..., 0]
    for i in range(task.n):
        accs[i] = accuracy_metric(task.outputs[i, 0], pred[i])
    return accs


def rollout_accuracy(model, task, spec=None):
    """Accuracy per (sample, step) under free-running rollout."""
    if spec is None:
        spec = RolloutSpec(window=task.window, horizon=task.horizon)
    acc = np.empty((task.n, spec.horizon))
    for i in range(task.n):
        window = np.moveaxis(task.inputs[i], -1, 0)
        pred = rollout(model, task.label, window, spec)
        for t in range(spec.horizon):
            acc[i, t] = accuracy_metric(task.outputs[i, t], pred[t])
    return acc


def accuracy_summary(acc):
    """Per-step mean and 95% confidence band over the sample axis."""
    n = acc.shape[0]
    mean = acc.mean(axis=0)
    sd = acc.std(axis=0, ddof=1) if n > 1 else np.zeros(acc.shape[1])
    half = 1.96 * sd / np.sqrt(n)
    return mean, mean - half, mean + half


def write_metrics_csv(path, rows):
    """CSV with columns task,step,mean_acc,ci95_low,ci95_high."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("task,step,mean_acc,ci95_low,ci95_high\n")
        for task, step, mean, lo, hi in rows:
            fh.write(f"{task},{step},{mean:.8f},{lo:.8f},{hi:.8f}\n")


def write_similarity_csv(path, labels, matrix):
    """Square cosine-similarity matrix with a label header row/column."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("task," + ",".join(str(l) for l in labels) + "\n")
        for lab, row in zip(labels, matrix):
            fh.write(str(lab) + "," + ",".join(f"{v:.8f}" for v in row) + "\n")
