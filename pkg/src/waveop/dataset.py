"""Dataset assembly and the on-disk container format.

A task dataset holds N trajectories split into a w-frame input window
(stacked as trailing channels) and a T-frame forecast target. Sample i is
generated from a seed derived by splitmix64 from (base_seed, i), so
regeneration is bit-reproducible and order-independent.

Container layout: a directory with a UTF-8 `manifest` plus raw little-endian
row-major float32 blobs `inputs.bin`, `outputs.bin`, `grid.bin`. The loader
also ingests externally produced datasets written in the same layout.
"""

import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from . import grf as grf_mod
from . import solvers as sol
from .errors import ConfigError, NumericsError

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x):
    """One splitmix64 mixing round."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def sample_seed(base_seed, index):
    """Seed for sample `index` in the stream rooted at base_seed."""
    return splitmix64((base_seed + (index + 1) * _GOLDEN) & _MASK)


@dataclass
class TaskDataset:
    label: int
    family: str
    grid: np.ndarray            # coordinates, (d,) or (2, d, d)
    inputs: np.ndarray          # (N, *grid, window) float32
    outputs: np.ndarray         # (N, horizon, *grid) float32
    pde: sol.PdeSpec
    grf: grf_mod.GrfSpec
    base_seed: int
    sample_seeds: np.ndarray    # (N,) uint64

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def window(self):
        return self.inputs.shape[-1]

    @property
    def horizon(self):
        return self.outputs.shape[1]

    @property
    def rank(self):
        return self.pde.rank

    def grid_shape(self):
        return self.inputs.shape[1:-1]

    def trajectory(self, i):
        """Full (window + horizon, *grid) record stack for sample i."""
        first = np.moveaxis(self.inputs[i], -1, 0)
        return np.concatenate([first, self.outputs[i]], axis=0)

    def pair(self, i, position):
        """Sliding-window training pair: (window channels, next frame)."""
        if not 0 <= position < self.horizon:
            raise IndexError(f"window position {position} outside 0..{self.horizon - 1}")
        traj = self.trajectory(i)
        w = self.window
        chans = np.moveaxis(traj[position:position + w], 0, -1)
        return chans, traj[position + w]

    def subset(self, lo, hi):
        """View-like slice of the sample axis (provenance retained)."""
        return TaskDataset(self.label, self.family, self.grid,
                           self.inputs[lo:hi], self.outputs[lo:hi],
                           self.pde, self.grf, self.base_seed,
                           self.sample_seeds[lo:hi])


def _initial_condition(task_grf, pde, rng):
    field = grf_mod.sample_grf(task_grf, rng)
    return field


def build_dataset(pde, grf_spec, n_samples, base_seed, label=0, window=10):
    """Generate N solver trajectories and split each into (window, targets)."""
    if pde.frames <= window:
        raise ValueError(f"frames={pde.frames} must exceed window={window}")
    horizon = pde.frames - window
    seeds = np.array([sample_seed(base_seed, i) for i in range(n_samples)],
                     dtype=np.uint64)
    shape = pde.shape()
    inputs = np.empty((n_samples,) + shape + (window,), dtype=np.float32)
    outputs = np.empty((n_samples, horizon) + shape, dtype=np.float32)
    for i in range(n_samples):
        rng = np.random.default_rng(int(seeds[i]))
        u0 = _initial_condition(grf_spec, pde, rng)
        try:
            traj = sol.solve(pde, u0)
        except NumericsError as exc:
            raise type(exc)(f"sample {i}: {exc}") from exc
        inputs[i] = np.moveaxis(traj[:window], 0, -1).astype(np.float32)
        outputs[i] = traj[window:].astype(np.float32)
    if pde.rank == 1:
        if pde.bc == "reflective":
            coords = np.linspace(0.0, pde.domain, pde.grid)
        else:
            coords = np.arange(pde.grid) * (pde.domain / pde.grid)
        grid = coords.astype(np.float32)
    else:
        ax = np.arange(pde.grid) * (pde.domain / pde.grid)
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        grid = np.stack([xx, yy]).astype(np.float32)
    return TaskDataset(label, pde.family, grid, inputs, outputs, pde,
                       grf_spec, base_seed, seeds)


# ---------------------------------------------------------------------------
# container serialization

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _spec_lines(prefix, spec):
    return [f"{prefix}.{f.name} = {_fmt(getattr(spec, f.name))}"
            for f in dataclasses.fields(spec)]


def save_dataset(ds, path):
    """Write the manifest plus inputs/outputs/grid blobs under `path`."""
    os.makedirs(path, exist_ok=True)
    lines = [
        "format = waveop-dataset-v1",
        f"label = {ds.label}",
        f"family = {ds.family}",
        f"n = {ds.n}",
        f"window = {ds.window}",
        f"horizon = {ds.horizon}",
        f"rank = {ds.rank}",
        f"grid_points = {ds.pde.grid}",
        "dtype = float32",
        f"base_seed = {ds.base_seed}",
        "sample_seeds = " + ",".join(str(int(s)) for s in ds.sample_seeds),
    ]
    lines += _spec_lines("pde", ds.pde)
    lines += _spec_lines("grf", ds.grf)
    with open(os.path.join(path, "manifest"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    for name, arr in (("inputs.bin", ds.inputs), ("outputs.bin", ds.outputs),
                      ("grid.bin", ds.grid)):
        with open(os.path.join(path, name), "wb") as fh:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _parse_manifest(text):
    kv = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"manifest line {ln}: expected key = value")
        key, _, val = line.partition("=")
        kv[key.strip()] = val.strip()
    return kv


def _coerce_field(ftype, raw):
    if ftype is int:
        return int(raw)
    if ftype is float:
        return float(raw)
    if ftype is bool:
        return raw == "true"
    return raw


def _spec_from(kv, prefix, cls):
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}.{f.name}"
        if key in kv:
            kwargs[f.name] = _coerce_field(f.type if isinstance(f.type, type) else
                                           {"int": int, "float": float, "bool": bool,
                                            "str": str}[f.type], kv[key])
    return cls(**kwargs)


def load_dataset(path):
    """Read a dataset container (also accepts externally produced ones)."""
    with open(os.path.join(path, "manifest"), "r", encoding="utf-8") as fh:
        kv = _parse_manifest(fh.read())
    if kv.get("format") != "waveop-dataset-v1":
        raise ConfigError(f"{path}: unknown dataset format {kv.get('format')!r}")
    n = int(kv["n"])
    window = int(kv["window"])
    horizon = int(kv["horizon"])
    rank = int(kv["rank"])
    g = int(kv["grid_points"])
    shape = (g,) * rank
    pde = _spec_from(kv, "pde", sol.PdeSpec)
    grf_spec = _spec_from(kv, "grf", grf_mod.GrfSpec)
    seeds = (np.array([int(s) for s in kv["sample_seeds"].split(",") if s], dtype=np.uint64)
             if kv.get("sample_seeds") else np.empty(0, dtype=np.uint64))

    def blob(name, count):
        raw = np.fromfile(os.path.join(path, name), dtype="<f4")
        if raw.size != count:
            raise ConfigError(f"{path}/{name}: expected {count} values, found {raw.size}")
        return raw

    inputs = blob("inputs.bin", n * int(np.prod(shape)) * window).reshape(
        (n,) + shape + (window,))
    outputs = blob("outputs.bin", n * horizon * int(np.prod(shape))).reshape(
        (n, horizon) + shape)
    grid_count = g if rank == 1 else 2 * g * g
    grid = blob("grid.bin", grid_count)
    grid = grid if rank == 1 else grid.reshape(2, g, g)
    return TaskDataset(int(kv["label"]), kv["family"], grid, inputs, outputs,
                       pde, grf_spec, int(kv["base_seed"]), seeds)
