"""Torch modules built from resolved layer tables."""

from __future__ import annotations

import torch
from torch import nn

from .spec import ArchSpec, ArchSpecError, Step, infer_shapes

LEAKY_SLOPE = 0.2


def _activation(name: str) -> nn.Module:
    return {
        "relu": nn.ReLU,
        "leaky_relu": lambda: nn.LeakyReLU(LEAKY_SLOPE),
        "tanh": nn.Tanh,
        "sigmoid": nn.Sigmoid,
        "linear": nn.Identity,
    }[name]()


def _norm(name: str, channels: int) -> nn.Module:
    if name == "batch":
        return nn.BatchNorm2d(channels)
    if name == "instance":
        return nn.InstanceNorm2d(channels, affine=True)
    return nn.Identity()


class ResidualBlock(nn.Module):
    """``repeats`` 3x3 convs with a shortcut; activation after the addition.

    The shortcut is the identity when channel counts agree and a 1x1
    projection otherwise.
    """

    def __init__(self, in_ch: int, out_ch: int, repeats: int, kernel: int, dilation: int,
                 activation: str, norm: str):
        super().__init__()
        pad = dilation * (kernel - 1) // 2
        layers = []
        ch = in_ch
        for i in range(repeats):
            layers.append(nn.Conv2d(ch, out_ch, kernel, padding=pad, dilation=dilation))
            layers.append(_norm(norm, out_ch))
            if i < repeats - 1:
                layers.append(_activation(activation))
            ch = out_ch
        self.body = nn.Sequential(*layers)
        self.shortcut = nn.Identity() if in_ch == out_ch else nn.Conv2d(in_ch, out_ch, 1)
        self.act = _activation(activation)

    def forward(self, x):
        return self.act(self.body(x) + self.shortcut(x))


class FullyConnected(nn.Module):
    def __init__(self, in_features: int, out_shape: tuple):
        super().__init__()
        self.out_shape = out_shape
        self.linear = nn.Linear(in_features, out_shape[0] * out_shape[1] * out_shape[2])

    def forward(self, x):
        return self.linear(x.flatten(1)).view(-1, *self.out_shape)


def _layer(step: Step) -> nn.Module:
    row = step.row
    in_ch, out_ch = step.in_shape[0], step.out_shape[0]
    if row.kind == "dense":
        core = (FullyConnected(step.in_shape[0], step.out_shape) if step.fully_connected
                else nn.Conv2d(in_ch, out_ch, 1))
    elif row.kind == "conv":
        core = nn.Conv2d(in_ch, out_ch, row.kernel, stride=2 if row.scale == -2 else 1,
                         padding=step.padding, dilation=row.dilation)
    elif row.kind == "tconv":
        core = nn.ConvTranspose2d(in_ch, out_ch, row.kernel, stride=row.scale,
                                  padding=step.padding, output_padding=step.output_padding,
                                  dilation=row.dilation)
    elif row.kind == "res":
        return ResidualBlock(in_ch, out_ch, row.repeats, row.kernel, row.dilation,
                             row.activation, row.norm)
    else:
        raise ArchSpecError(f"{row.label}: cannot build {row.kind!r}")
    return nn.Sequential(core, _norm(row.norm, out_ch), _activation(row.activation))


class SpecNet(nn.Module):
    """Executes a resolved layer table.

    ``forward`` takes the named inputs (``x``, ``y``, ``z``); inputs that the
    table does not use are ignored. When ``raw_output`` is set, the final
    activation is dropped (useful for identity constructions in tests).
    """

    def __init__(self, spec: ArchSpec, steps: list, raw_output: bool = False):
        super().__init__()
        self.spec_name = spec.name
        self.steps = steps
        self.layers = nn.ModuleList()
        self._layer_index = []
        for i, step in enumerate(steps):
            if step.row.is_input:
                self._layer_index.append(None)
                continue
            self._layer_index.append(len(self.layers))
            self.layers.append(_layer(step))
        if raw_output:
            last = self.layers[-1]
            last[-1] = nn.Identity()
        self.out_shape = steps[-1].out_shape

    def forward(self, **inputs):
        pending: list = []
        taps: dict = {}
        for step, li in zip(self.steps, self._layer_index):
            row = step.row
            if li is None:
                t = inputs[row.kind[len("input_"):]]
                pending.append(t)
                for tok in row.skip:
                    if tok[0] == "^":
                        taps[tok[1:]] = t
                continue
            for tok in row.skip:
                if tok[0] == "<":
                    pending.append(taps[tok[1:]])
            if step.fully_connected:
                h = torch.cat([t.flatten(1) for t in pending], dim=1)
            else:
                h = pending[0] if len(pending) == 1 else torch.cat(pending, dim=1)
            out = self.layers[li](h)
            pending = [out]
            for tok in row.skip:
                if tok[0] == ">":
                    pending.append(taps[tok[1:]])
                elif tok[0] == "^":
                    taps[tok[1:]] = out
        return pending[0]


class Generator(nn.Module):
    """``G(conditioning, z)`` with conditioning ``(B, c+1, n, p)`` (values + mask)."""

    def __init__(self, spec: ArchSpec, image_shape: tuple, latent, raw_output: bool = False):
        super().__init__()
        self.spec = spec
        self.image_shape = tuple(image_shape)
        self.latent = latent
        steps = infer_shapes(spec, image_channels=image_shape[2])
        self.net = SpecNet(spec, steps, raw_output=raw_output)

    def forward(self, cond, z=None):
        return self.net(y=cond, z=z)


class Discriminator(nn.Module):
    """``D(x[, map values])`` returning probabilities of shape ``(B, 1, gh, gw)``.

    ``x`` carries ``pack * c`` channels. For a conditional discriminator the
    dense constraint values (``c`` channels) are wired in at the ``input_y``
    row.
    """

    def __init__(self, spec: ArchSpec, image_shape: tuple, conditional: bool = False,
                 pack: int = 1):
        super().__init__()
        if pack not in (1, 2):
            raise ValueError(f"pack must be 1 or 2, got {pack}")
        self.spec = spec
        self.image_shape = tuple(image_shape)
        self.conditional = conditional
        self.pack = pack
        steps = infer_shapes(spec, image_channels=image_shape[2], pack=pack,
                             conditional=conditional)
        self.net = SpecNet(spec, steps)
        x_steps = [s for s in steps if s.row.kind == "input_x"]
        self.in_channels = sum(s.out_shape[0] for s in steps if s.row.is_input)
        self.x_channels = x_steps[0].out_shape[0]

    def forward(self, x, cond=None):
        if self.conditional and cond is None:
            raise ValueError("conditional discriminator needs the constraint values")
        if x.shape[1] != self.x_channels:
            raise ValueError(f"discriminator expects {self.x_channels} image channels, "
                             f"got {x.shape[1]}")
        return self.net(x=x, y=cond)
