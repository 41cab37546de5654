"""Denoiser and regression network architectures.

Six architectures share one calling convention ``net(tau, x, y)``:

- ``dn``       denoiser f(Y) + g(X_tau, Y) + m(g, tau); f is the
               MLPStateMapper state embedding.
- ``dn_lin``   same with f replaced by a fully connected map.
- ``fc``       feed-forward ReLU regressor on Y with sparsity and
               weight clamping; ignores (tau, x).
- ``fc_plus``  fc deepened until its parameter count exceeds dn's,
               without the constraints.
- ``fc_plus_conv``        fc backbone + convolutional module, total
                          parameter count matched to dn within 1%.
- ``fc_plus_conv_mlpsm``  the fully connected layers replaced by the
                          MLPStateMapper.

The convolutional path treats the D state coordinates as the width axis
with circular padding; its first layer has a full-width kernel and D
output channels, which is where the quadratic 2 D^2 parameter scaling
comes from.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor, concat, conv1d, cos, elu, relu, reshape, sin

ARCH_KINDS = ("dn", "dn_lin", "fc", "fc_plus", "fc_plus_conv", "fc_plus_conv_mlpsm")


class ArchError(Exception):
    pass


@dataclass(frozen=True)
class ArchSpec:
    kind: str
    dim: int
    width_scale: float = 1.0
    n_fourier: int = 8
    time_embed_dim: int = 32
    conv_kernel: int = 5
    fc_depth: int = 4
    fc_width: int = 128
    clamp_bound: float = 5.0
    prune_fraction: float = 0.2
    prune_every: int = 50

    def __post_init__(self):
        if self.kind not in ARCH_KINDS:
            raise ArchError(f"unknown architecture kind {self.kind!r}")
        if self.dim < 1:
            raise ArchError("dim must be >= 1")
        if self.width_scale <= 0:
            raise ArchError("width_scale must be positive")
        if self.time_embed_dim % 2 != 0:
            raise ArchError("time_embed_dim must be even")

    # derived widths (width_scale shrinks everything at desk scale)
    @property
    def mapper_hidden(self) -> int:
        return max(int(round(64 * self.width_scale)), int(round(4 * self.dim * self.width_scale)), 4)

    @property
    def conv_channels(self) -> int:
        return max(int(round(16 * self.width_scale)), 2)

    @property
    def time_hidden(self) -> int:
        return max(int(round(64 * self.width_scale)), 4)

    @property
    def fc_hidden(self) -> int:
        return max(int(round(self.fc_width * self.width_scale)), 4)


# -- parameter initialisation --------------------------------------------------


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class _Registry:
    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ArchError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t


class Linear:
    def __init__(self, reg: _Registry, prefix: str, n_in: int, n_out: int,
                 rng: np.random.Generator, zero_init: bool = False):
        if zero_init:
            w = np.zeros((n_in, n_out))
        else:
            w = _glorot(rng, n_in, n_out, (n_in, n_out))
        self.w = reg.add(f"{prefix}.w", w)
        self.b = reg.add(f"{prefix}.b", np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return (x @ self.w) + self.b


class Conv1dLayer:
    def __init__(self, reg: _Registry, prefix: str, c_in: int, c_out: int, kernel: int,
                 rng: np.random.Generator, padding="circular", zero_init: bool = False):
        if zero_init:
            w = np.zeros((c_out, c_in, kernel))
        else:
            w = _glorot(rng, c_in * kernel, c_out * kernel, (c_out, c_in, kernel))
        self.w = reg.add(f"{prefix}.w", w)
        self.b = reg.add(f"{prefix}.b", np.zeros(c_out))
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(x, self.w, self.b, stride=1, padding=self.padding)


class MLPStateMapper:
    """State embedding combining polynomial, learned, and gated Fourier features.

    Pathways on y: elementwise (y, y^2, y^3); a linear-ELU block; and
    sin/cos features at learnable frequencies, scaled by a learnable
    scalar gate (init 0.1). Concatenated features pass through a
    two-layer fully connected head to R^D.
    """

    def __init__(self, reg: _Registry, prefix: str, dim: int, hidden: int,
                 n_fourier: int, rng: np.random.Generator):
        self.dim = dim
        self.n_fourier = n_fourier
        self.omega = reg.add(f"{prefix}.omega", np.pi * 2.0 ** np.arange(n_fourier, dtype=np.float64))
        self.gate = reg.add(f"{prefix}.gate", np.array(0.1))
        self.block = Linear(reg, f"{prefix}.block", dim, hidden, rng)
        feat_dim = 3 * dim + hidden + 2 * n_fourier * dim
        self.head1 = Linear(reg, f"{prefix}.head1", feat_dim, hidden, rng)
        self.head2 = Linear(reg, f"{prefix}.head2", hidden, dim, rng)

    def __call__(self, y: Tensor) -> Tensor:
        n = y.data.shape[0]
        poly = concat([y, y**2, y**3], axis=1)
        block = elu(self.block(y))
        angles = reshape(y, (n, self.dim, 1)) * self.omega
        sin_f = reshape(sin(angles), (n, self.dim * self.n_fourier))
        cos_f = reshape(cos(angles), (n, self.dim * self.n_fourier))
        fourier = concat([sin_f, cos_f], axis=1) * self.gate
        feats = concat([poly, block, fourier], axis=1)
        return self.head2(elu(self.head1(feats)))


class ConvModule:
    """Conv stack over the D-width axis with circular padding.

    Channels in_ch -> D -> C -> 1 through three conv layers (the first
    has a full-width kernel), then one convolutional residual layer.
    Output weights (last conv and residual conv) start at zero.
    """

    def __init__(self, reg: _Registry, prefix: str, dim: int, in_channels: int,
                 channels: int, kernel: int, rng: np.random.Generator):
        self.dim = dim
        self.in_channels = in_channels
        k = min(kernel, dim)
        self.conv1 = Conv1dLayer(reg, f"{prefix}.conv1", in_channels, dim, dim, rng)
        self.conv2 = Conv1dLayer(reg, f"{prefix}.conv2", dim, channels, k, rng)
        self.conv3 = Conv1dLayer(reg, f"{prefix}.conv3", channels, 1, k, rng, zero_init=True)
        self.conv_res = Conv1dLayer(reg, f"{prefix}.res", 1, 1, k, rng, zero_init=True)

    def __call__(self, channels: list[Tensor]) -> Tensor:
        n = channels[0].data.shape[0]
        stacked = concat([reshape(t, (n, 1, self.dim)) for t in channels], axis=1)
        h = elu(self.conv1(stacked))
        h = elu(self.conv2(h))
        h = self.conv3(h)
        h = h + self.conv_res(elu(h))
        return reshape(h, (n, self.dim))


class TimeEmbed:
    """Fixed sinusoidal embedding of the diffusion time.

    Frequencies span 1..256 geometrically; tau lives on [0, 1], so higher
    frequencies add nothing the head cannot interpolate.
    """

    def __init__(self, dim: int):
        self.freqs = np.exp(np.linspace(0.0, np.log(256.0), dim // 2))

    def __call__(self, tau: Tensor) -> Tensor:
        angles = tau * self.freqs
        return concat([sin(angles), cos(angles)], axis=1)


class TimeHead:
    """m(g, tau): fully connected residual head conditioning on tau."""

    def __init__(self, reg: _Registry, prefix: str, dim: int, embed_dim: int,
                 hidden: int, rng: np.random.Generator):
        self.embed = TimeEmbed(embed_dim)
        self.lin1 = Linear(reg, f"{prefix}.lin1", dim + embed_dim, hidden, rng)
        self.lin2 = Linear(reg, f"{prefix}.lin2", hidden, dim, rng, zero_init=True)

    def __call__(self, g: Tensor, tau: Tensor) -> Tensor:
        h = concat([g, self.embed(tau)], axis=1)
        return self.lin2(elu(self.lin1(h)))


class DenoiserNet:
    """dn / dn_lin: output f(Y) + g(X_tau, Y) + m(g, tau)."""

    conditional = True

    def __init__(self, spec: ArchSpec, rng: np.random.Generator):
        self.spec = spec
        reg = _Registry()
        d = spec.dim
        if spec.kind == "dn":
            self.f = MLPStateMapper(reg, "f", d, spec.mapper_hidden, spec.n_fourier, rng)
        else:
            self.f = Linear(reg, "f", d, d, rng)
        self.g = ConvModule(reg, "g", d, 2, spec.conv_channels, spec.conv_kernel, rng)
        self.m = TimeHead(reg, "m", d, spec.time_embed_dim, spec.time_hidden, rng)
        self.params = reg.params

    def heads(self, tau: Tensor, x: Tensor, y: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        f_out = self.f(y)
        g_out = self.g([x, y])
        m_out = self.m(g_out, tau)
        return f_out, g_out, m_out

    def __call__(self, tau: Tensor, x: Tensor, y: Tensor) -> Tensor:
        f_out, g_out, m_out = self.heads(tau, x, y)
        return f_out + g_out + m_out

    def post_step(self):
        pass

    def on_epoch_end(self, epoch: int):
        pass

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())


class RegressionNet:
    """fc family: maps Y to a drift-scale regression output, ignoring (tau, x)."""

    conditional = False

    def __init__(self, spec: ArchSpec, rng: np.random.Generator,
                 hidden_widths: list[int], use_conv: bool, use_mapper: bool,
                 constrained: bool):
        self.spec = spec
        reg = _Registry()
        d = spec.dim
        self.mapper = None
        self.layers: list[Linear] = []
        if use_mapper:
            self.mapper = MLPStateMapper(reg, "fc.mapper", d, spec.mapper_hidden,
                                         spec.n_fourier, rng)
        else:
            sizes = [d] + list(hidden_widths) + [d]
            for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
                self.layers.append(Linear(reg, f"fc.l{i}", n_in, n_out, rng))
        self.conv = None
        if use_conv:
            self.conv = ConvModule(reg, "conv", d, 1, spec.conv_channels,
                                   spec.conv_kernel, rng)
        self.constrained = constrained
        self.params = reg.params
        self._weight_names = [k for k in self.params if k.endswith(".w") and k.startswith("fc.l")]
        self._masks = {k: np.ones_like(self.params[k].data, dtype=bool)
                       for k in self._weight_names}

    def _backbone(self, y: Tensor) -> Tensor:
        if self.mapper is not None:
            return self.mapper(y)
        h = y
        for layer in self.layers[:-1]:
            h = relu(layer(h))
        return self.layers[-1](h)

    def __call__(self, tau, x, y: Tensor) -> Tensor:
        out = self._backbone(y)
        if self.conv is not None:
            out = out + self.conv([y])
        return out

    def post_step(self):
        if not self.constrained:
            return
        bound = self.spec.clamp_bound
        for name in self._weight_names:
            data = self.params[name].data
            np.clip(data, -bound, bound, out=data)
            data *= self._masks[name]

    def on_epoch_end(self, epoch: int):
        if not self.constrained:
            return
        if (epoch + 1) % self.spec.prune_every != 0:
            return
        for name in self._weight_names:
            data = self.params[name].data
            mask = self._masks[name]
            active = np.flatnonzero(mask.ravel())
            k = int(np.floor(self.spec.prune_fraction * active.size))
            if k < 1:
                continue
            mags = np.abs(data.ravel()[active])
            drop = active[np.argpartition(mags, k - 1)[:k]]
            flat = mask.ravel()
            flat[drop] = False
            data.ravel()[drop] = 0.0

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())


# -- closed-form parameter counts (used by the matching searches) -------------


def _count_linear(n_in: int, n_out: int) -> int:
    return n_in * n_out + n_out


def _count_mapper(spec: ArchSpec) -> int:
    d, h, f = spec.dim, spec.mapper_hidden, spec.n_fourier
    feat = 3 * d + h + 2 * f * d
    return f + 1 + _count_linear(d, h) + _count_linear(feat, h) + _count_linear(h, d)


def _count_conv(spec: ArchSpec, in_channels: int) -> int:
    d, c = spec.dim, spec.conv_channels
    k = min(spec.conv_kernel, d)
    return (in_channels * d * d + d) + (d * c * k + c) + (c * k + 1) + (k + 1)


def _count_time_head(spec: ArchSpec) -> int:
    d, e, h = spec.dim, spec.time_embed_dim, spec.time_hidden
    return _count_linear(d + e, h) + _count_linear(h, d)


def _count_backbone(dim: int, widths: list[int]) -> int:
    sizes = [dim] + list(widths) + [dim]
    return sum(_count_linear(a, b) for a, b in zip(sizes[:-1], sizes[1:]))


def count_dn(spec: ArchSpec) -> int:
    base = _count_conv(spec, 2) + _count_time_head(spec)
    if spec.kind == "dn_lin":
        return base + _count_linear(spec.dim, spec.dim)
    return base + _count_mapper(spec)


def _fc_plus_widths(spec: ArchSpec) -> list[int]:
    """Deepen fc (width fixed) until the count exceeds dn's."""
    dn = count_dn(replace(spec, kind="dn"))
    w = spec.fc_hidden
    depth = spec.fc_depth
    while _count_backbone(spec.dim, [w] * depth) <= dn:
        depth += 1
    return [w] * depth


def _fc_plus_conv_widths(spec: ArchSpec) -> list[int]:
    """Backbone widths such that backbone + conv matches dn within 1%."""
    dn = count_dn(replace(spec, kind="dn"))
    target = dn - _count_conv(spec, 1)
    if target <= 0:
        raise ArchError("conv module alone exceeds the dn parameter count")
    d, depth = spec.dim, spec.fc_depth
    lo, hi = 1, 2
    while _count_backbone(d, [hi] * depth) < target:
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _count_backbone(d, [mid] * depth) < target:
            lo = mid
        else:
            hi = mid
    w = min((lo, hi), key=lambda v: abs(_count_backbone(d, [v] * depth) - target))
    # fine-tune the last hidden width; count is linear in it
    best = None
    for h in range(1, max(4 * w, 16)):
        widths = [w] * (depth - 1) + [h]
        diff = abs(_count_backbone(d, widths) - target)
        if best is None or diff < best[0]:
            best = (diff, widths)
    widths = best[1]
    total = _count_backbone(d, widths) + _count_conv(spec, 1)
    if abs(total - dn) / dn >= 0.01:
        raise ArchError(
            f"could not match dn parameter count within 1% (got {total} vs {dn})"
        )
    return widths


def expected_param_count(spec: ArchSpec) -> int:
    """Closed-form count for any architecture (matches built networks)."""
    kind = spec.kind
    if kind in ("dn", "dn_lin"):
        return count_dn(spec)
    if kind == "fc":
        return _count_backbone(spec.dim, [spec.fc_hidden] * spec.fc_depth)
    if kind == "fc_plus":
        return _count_backbone(spec.dim, _fc_plus_widths(spec))
    if kind == "fc_plus_conv":
        return _count_backbone(spec.dim, _fc_plus_conv_widths(spec)) + _count_conv(spec, 1)
    if kind == "fc_plus_conv_mlpsm":
        return _count_mapper(spec) + _count_conv(spec, 1)
    raise ArchError(kind)


def build(spec: ArchSpec, seed: int = 0):
    """Construct a network with deterministic initial parameters."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(0x6E65, seed)))
    kind = spec.kind
    if kind in ("dn", "dn_lin"):
        return DenoiserNet(spec, rng)
    if kind == "fc":
        return RegressionNet(spec, rng, [spec.fc_hidden] * spec.fc_depth,
                             use_conv=False, use_mapper=False, constrained=True)
    if kind == "fc_plus":
        return RegressionNet(spec, rng, _fc_plus_widths(spec),
                             use_conv=False, use_mapper=False, constrained=False)
    if kind == "fc_plus_conv":
        return RegressionNet(spec, rng, _fc_plus_conv_widths(spec),
                             use_conv=True, use_mapper=False, constrained=False)
    if kind == "fc_plus_conv_mlpsm":
        return RegressionNet(spec, rng, [], use_conv=True, use_mapper=True,
                             constrained=False)
    raise ArchError(kind)


def param_count(net) -> int:
    return net.param_count()


def set_params(net, values: dict[str, np.ndarray]) -> None:
    """Load a parameter dict (e.g. from a checkpoint) into a built net."""
    missing = set(net.params) - set(values)
    extra = set(values) - set(net.params)
    if missing or extra:
        raise ArchError(f"parameter mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
    for name, tensor in net.params.items():
        arr = np.asarray(values[name], dtype=np.float64)
        if arr.shape != tensor.data.shape:
            raise ArchError(f"shape mismatch for {name!r}")
        tensor.data = arr.copy()


def get_params(net) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in net.params.items()}
