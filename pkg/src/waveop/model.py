"""Operator network built from gated ensembles of local wavelet experts.

Input functions plus grid coordinates are lifted to a wide channel space,
pushed through a stack of expert blocks, and projected back to the solution
channels. Each block runs several wavelet-domain kernel integrals (one per
Daubechies basis), mixes them per channel with probabilities emitted by a
label-conditioned gate, adds a pointwise skip path, and applies mish.

The expert path is resolution-flexible; the gate's dense stack pins the grid
size, so the assembled model only accepts the configured resolution.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from . import wavelet as wl


class ShapeError(ValueError):
    """Input does not match the configured grid/channel layout."""


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults follow the reference setup."""

    rank: int = 1
    grid: tuple = (256,)
    in_channels: int = 10          # input function channels (window frames)
    out_channels: int = 1
    blocks: int = 4                # h
    experts: int = 10              # experts per block
    width: int = 64                # lifted channel count
    levels: int = 4                # wavelet compression depth
    bases: tuple = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10)
    gate_mode: str = "per_channel"  # or "broadcast"
    max_tasks: int = 6
    gate_hidden: tuple = (512, 256, 128, 64, 32)
    gate_hidden_2d: tuple = (128, 64)
    gate_conv_channels: int = 64
    gate_pool: int = 2
    proj_hidden: int = 128
    dtype: str = "float32"

    def __post_init__(self):
        self.grid = tuple(int(g) for g in self.grid)
        self.bases = tuple(int(b) for b in self.bases)
        if self.rank not in (1, 2):
            raise ValueError("rank must be 1 or 2")
        if len(self.grid) != self.rank:
            raise ValueError("grid extents must match rank")
        if self.blocks < 1 or self.experts < 1:
            raise ValueError("blocks and experts must be >= 1")
        if len(self.bases) != self.experts:
            raise ValueError("need exactly one wavelet basis per expert")
        if len(set(self.bases)) != len(self.bases):
            raise ValueError("expert bases must be distinct")
        if self.gate_mode not in ("per_channel", "broadcast"):
            raise ValueError("gate_mode must be per_channel or broadcast")
        for n in self.bases:
            if n < 1 or n > 10:
                raise ValueError("bases must be db1..db10")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def coeff_shape(self, basis_order):
        return tuple(wl.coeff_length(g, self.levels, basis_order) for g in self.grid)


def _uniform_affine(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _param(data):
    return T.Tensor(data, requires_grad=True)


class Dense:
    """Affine layer acting on the trailing axis."""

    def __init__(self, rng, n_in, n_out, dtype):
        self.w = _param(_uniform_affine(rng, n_in, (n_in, n_out), dtype))
        self.b = _param(_uniform_affine(rng, n_in, (n_out,), dtype))

    def __call__(self, x):
        return T.channel_mix(x, self.w, self.b)

    def params(self, prefix):
        return [(prefix + ".w", self.w), (prefix + ".b", self.b)]


class LabelEncoder:
    """Three affine layers (no nonlinearity) over a one-hot task label."""

    def __init__(self, rng, max_tasks, dtype):
        self.max_tasks = max_tasks
        self.layers = [Dense(rng, max_tasks, max_tasks, dtype) for _ in range(3)]

    def encode(self, labels, dtype):
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        if labels.min() < 0 or labels.max() >= self.max_tasks:
            raise ValueError(f"task label out of range 0..{self.max_tasks - 1}")
        onehot = np.zeros((len(labels), self.max_tasks), dtype=dtype)
        onehot[np.arange(len(labels)), labels] = 1.0
        out = T.Tensor(onehot)
        for layer in self.layers:
            out = layer(out)
        return out

    def params(self, prefix):
        out = []
        for i, layer in enumerate(self.layers):
            out += layer.params(f"{prefix}.l{i}")
        return out


class GateNet:
    """Label- and input-conditioned network emitting per-expert logits.

    1D: dense stack over [spatial summary, label code]. 2D: conv stack over
    the spatial summary, pooled, then the dense stack. The head is d_e wide in
    broadcast mode and d_e*width wide in per-channel mode.
    """

    def __init__(self, rng, cfg):
        self.cfg = cfg
        dtype = cfg.np_dtype
        head = cfg.experts if cfg.gate_mode == "broadcast" else cfg.experts * cfg.width
        self.convs = []
        if cfg.rank == 1:
            n_in = cfg.grid[0] + cfg.max_tasks
            widths = list(cfg.gate_hidden)
        else:
            c = cfg.gate_conv_channels
            shapes = [(5, 5, 1, c), (5, 5, c, c), (5, 5, c, c)]
            strides = (2, 1, 1)
            h = cfg.grid[0]
            w = cfg.grid[1]
            for (kh, kw, ci, co), s in zip(shapes, strides):
                wt = _param(_uniform_affine(rng, kh * kw * ci, (kh, kw, ci, co), dtype))
                bt = _param(_uniform_affine(rng, kh * kw * ci, (co,), dtype))
                self.convs.append((wt, bt, s))
                h = (h - kh) // s + 1
                w = (w - kw) // s + 1
            if h < cfg.gate_pool or w < cfg.gate_pool or h % cfg.gate_pool or w % cfg.gate_pool:
                raise ValueError(f"grid {cfg.grid} leaves conv output {(h, w)} "
                                 f"not divisible by pool {cfg.gate_pool}")
            self.pool_hw = (cfg.gate_pool, cfg.gate_pool)
            n_in = cfg.gate_pool * cfg.gate_pool * c + cfg.max_tasks
            widths = list(cfg.gate_hidden_2d)
        self.dense = []
        for n_out in widths:
            self.dense.append(Dense(rng, n_in, n_out, dtype))
            n_in = n_out
        self.head = Dense(rng, n_in, head, dtype)

    def logits(self, v, label_code):
        """Raw gate outputs shaped (batch, experts, width) before softmax."""
        cfg = self.cfg
        summary = T.tmean(v, axis=-1)  # collapse channels: one value per grid point
        if cfg.rank == 1:
            feat = summary
        else:
            x = T.reshape(summary, summary.shape + (1,))
            for wt, bt, s in self.convs:
                x = T.mish(T.conv2d(x, wt, bt, s))
            x = T.avgpool2d(x, self.pool_hw)
            feat = T.reshape(x, (x.shape[0], -1))
        h = T.concat([feat, label_code], axis=-1)
        for layer in self.dense:
            h = T.mish(layer(h))
        out = self.head(h)
        b = out.shape[0]
        if cfg.gate_mode == "broadcast":
            out = T.reshape(out, (b, cfg.experts, 1))
            out = T.expand_last(out, cfg.width)
        else:
            out = T.reshape(out, (b, cfg.experts, cfg.width))
        return out

    def probabilities(self, v, label_code):
        """Softmax across the expert axis; every channel column sums to 1."""
        return T.softmax(self.logits(v, label_code), axis=1)

    def params(self, prefix):
        out = []
        for i, (wt, bt, _) in enumerate(self.convs):
            out += [(f"{prefix}.conv{i}.w", wt), (f"{prefix}.conv{i}.b", bt)]
        for i, layer in enumerate(self.dense):
            out += layer.params(f"{prefix}.dense{i}")
        out += self.head.params(f"{prefix}.head")
        return out


class WaveletExpert:
    """One kernel-integral path under a fixed Daubechies basis.

    The input is decomposed to the deepest level, the approximation band and
    the level-s detail band(s) are contracted over input channels with learned
    kernels, finer detail bands are dropped, and the result is transformed
    back. Synthesis is the exact adjoint of analysis, so the hand-written
    backward rule is a transpose plus two einsum contractions.
    """

    def __init__(self, rng, cfg, basis_order):
        self.cfg = cfg
        self.fb = wl.daubechies_filters(basis_order)
        self.levels = cfg.levels
        dtype = cfg.np_dtype
        cs = cfg.coeff_shape(basis_order)
        kshape = cs + (cfg.width, cfg.width)
        scale = 1.0 / (cfg.width * cfg.width)
        n_detail = 1 if cfg.rank == 1 else 3
        self.k_approx = _param((rng.uniform(0, 1, size=kshape) * scale).astype(dtype))
        self.k_detail = [_param((rng.uniform(0, 1, size=kshape) * scale).astype(dtype))
                         for _ in range(n_detail)]

    def _contract(self, kernel, band):
        if self.cfg.rank == 1:
            return np.einsum("mio,bmi->bmo", kernel, band, optimize=True)
        return np.einsum("mnio,bmni->bmno", kernel, band, optimize=True)

    def _contract_t(self, kernel, gband):
        if self.cfg.rank == 1:
            return np.einsum("mio,bmo->bmi", kernel, gband, optimize=True)
        return np.einsum("mnio,bmno->bmni", kernel, gband, optimize=True)

    def _kernel_grad(self, band, gband):
        if self.cfg.rank == 1:
            return np.einsum("bmi,bmo->mio", band, gband, optimize=True)
        return np.einsum("bmni,bmno->mnio", band, gband, optimize=True)

    def _effective_levels(self, spatial):
        """Level count for this input; dyadic rescaling reuses the kernels.

        A signal 2^j times longer than the configured grid is decomposed j
        levels deeper, which leaves the deepest band length (and hence the
        kernel shape) unchanged.
        """
        cfg = self.cfg
        if spatial == cfg.grid:
            return self.levels
        ratios = {d / g for d, g in zip(spatial, cfg.grid)}
        if len(ratios) != 1:
            raise ShapeError(f"grid {spatial} is not a dyadic rescale of {cfg.grid}")
        j = np.log2(ratios.pop())
        if abs(j - round(j)) > 1e-12 or self.levels + round(j) < 1:
            raise ShapeError(f"grid {spatial} is not a dyadic rescale of {cfg.grid}")
        return self.levels + int(round(j))

    def apply(self, v):
        """Kernel integral of v (batch, *grid, width); output has v's shape."""
        cfg = self.cfg
        axes = tuple(range(1, 1 + cfg.rank))
        fb = self.fb
        s = self._effective_levels(v.shape[1:1 + cfg.rank])
        coeffs = wl.dwt_multilevel(v.data, fb, s, axes=axes)
        det_s = coeffs.details[-1]
        bands = (det_s,) if cfg.rank == 1 else det_s
        for k, band in zip([self.k_approx] + self.k_detail, (coeffs.approx,) + tuple(bands)):
            if k.shape[:-2] != band.shape[1:-1]:
                raise ShapeError(f"kernel {k.shape} incompatible with band {band.shape}")

        new_approx = self._contract(self.k_approx.data, coeffs.approx)
        new_details = [self._contract(k.data, b) for k, b in zip(self.k_detail, bands)]
        out_coeffs = wl.zeros_like_coeffs(coeffs)
        out_coeffs.approx = new_approx
        out_coeffs.details[-1] = new_details[0] if cfg.rank == 1 else tuple(new_details)
        data = wl.idwt_multilevel(out_coeffs)

        expert = self
        kd = self.k_detail

        def bw(g):
            gc = wl.dwt_multilevel(g, fb, s, axes=axes)  # adjoint of synthesis
            g_det = gc.details[-1]
            gbands = (g_det,) if cfg.rank == 1 else g_det
            T._accum(expert.k_approx, expert._kernel_grad(coeffs.approx, gc.approx))
            for k, b, gb in zip(kd, bands, gbands):
                T._accum(k, expert._kernel_grad(b, gb))
            if v.requires_grad:
                back = wl.zeros_like_coeffs(coeffs)
                back.approx = expert._contract_t(expert.k_approx.data, gc.approx)
                gv_details = [expert._contract_t(k.data, gb) for k, gb in zip(kd, gbands)]
                back.details[-1] = gv_details[0] if cfg.rank == 1 else tuple(gv_details)
                T._accum(v, wl.idwt_multilevel(back))  # adjoint of analysis

        return T.make_op(data, (v, self.k_approx, *kd), bw, "wavelet_expert")

    def params(self, prefix):
        out = [(f"{prefix}.k_approx", self.k_approx)]
        for i, k in enumerate(self.k_detail):
            out.append((f"{prefix}.k_detail{i}", k))
        return out


class ExpertBlock:
    """Gated sum of wavelet experts plus a pointwise skip path, then mish."""

    def __init__(self, rng, cfg):
        self.cfg = cfg
        self.experts = [WaveletExpert(rng, cfg, n) for n in cfg.bases]
        self.skip = Dense(rng, cfg.width, cfg.width, cfg.np_dtype)
        self.gate = GateNet(rng, cfg)

    def forward(self, v, label_code):
        beta = self.gate.probabilities(v, label_code)  # (b, experts, width)
        mix = None
        for e, expert in enumerate(self.experts):
            scaled = T.scale_channels(expert.apply(v), T.index_axis(beta, 1, e))
            mix = scaled if mix is None else mix + scaled
        return T.mish(mix + self.skip(v))

    def params(self, prefix):
        out = []
        for e, expert in enumerate(self.experts):
            out += expert.params(f"{prefix}.expert{e}")
        out += self.skip.params(f"{prefix}.skip")
        out += self.gate.params(f"{prefix}.gate")
        return out


class GatedWaveletOperator:
    """Full model: lift, expert blocks with gates, projection head."""

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        dtype = cfg.np_dtype
        self.lift = Dense(rng, cfg.in_channels + cfg.rank, cfg.width, dtype)
        self.blocks = [ExpertBlock(rng, cfg) for _ in range(cfg.blocks)]
        self.encoder = LabelEncoder(rng, cfg.max_tasks, dtype)
        self.proj1 = Dense(rng, cfg.width, cfg.proj_hidden, dtype)
        self.proj2 = Dense(rng, cfg.proj_hidden, cfg.out_channels, dtype)
        self._coords = self._build_coords()

    def _build_coords(self):
        cfg = self.cfg
        axes = [np.arange(g, dtype=cfg.np_dtype) / g for g in cfg.grid]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)  # (*grid, rank)

    def forward(self, a, labels):
        """Map (batch, *grid, in_channels) plus task labels to solutions."""
        if not isinstance(a, T.Tensor):
            a = T.Tensor(np.asarray(a, dtype=self.cfg.np_dtype))
        cfg = self.cfg
        expect = cfg.grid + (cfg.in_channels,)
        if a.shape[1:] != expect:
            raise ShapeError(f"input shape {a.shape[1:]} != configured {expect}")
        b = a.shape[0]
        coords = np.broadcast_to(self._coords, (b,) + self._coords.shape)
        x = T.concat([a, T.Tensor(np.ascontiguousarray(coords, dtype=a.dtype))], axis=-1)
        v = self.lift(x)
        label_code = self.encoder.encode(labels, cfg.np_dtype)
        for block in self.blocks:
            v = block.forward(v, label_code)
        return self.proj2(T.mish(self.proj1(v)))

    def predict_frame(self, window, label):
        """One forecast frame from a (w, *grid) window; no graph is built."""
        chans = np.moveaxis(np.asarray(window, dtype=self.cfg.np_dtype), 0, -1)
        with T.no_grad():
            out = self.forward(chans[None], np.array([label]))
        return out.data[0, ..., 0]

    # parameter groups -----------------------------------------------------
    def named_parameters(self):
        out = self.lift.params("lift")
        for j, block in enumerate(self.blocks):
            out += block.params(f"block{j}")
        out += self.encoder.params("encoder")
        out += self.proj1.params("proj1")
        out += self.proj2.params("proj2")
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def gate_parameters(self):
        """θ_β: every per-block gate network plus the shared label encoder."""
        out = []
        for j, block in enumerate(self.blocks):
            out += block.gate.params(f"block{j}.gate")
        out += self.encoder.params("encoder")
        return out

    def theta_parameters(self):
        """Backbone parameters frozen during combinatorial transfer."""
        gate_ids = {id(p) for _, p in self.gate_parameters()}
        return [(n, p) for n, p in self.named_parameters() if id(p) not in gate_ids]

    def set_phase(self, phase):
        """'foundation' trains everything; 'transfer' trains gates only."""
        if phase not in ("foundation", "transfer"):
            raise ValueError("phase must be foundation or transfer")
        frozen = phase == "transfer"
        for _, p in self.theta_parameters():
            p.requires_grad = not frozen
            p.grad = None
        for _, p in self.gate_parameters():
            p.requires_grad = True
            p.grad = None
