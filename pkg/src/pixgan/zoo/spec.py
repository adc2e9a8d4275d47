"""Plain-text layer tables describing generators and discriminators.

One row per layer, whitespace-separated columns::

    kind  units  kernel  scale  dil  act  norm  skip  shape

``kind`` is one of ``input_x``, ``input_y``, ``input_z``, ``dense``, ``conv``,
``tconv``, ``res``. ``scale`` is ``x1``, ``x2`` or ``x1/2``. ``shape`` is the
spatial output size (``28x28``) or ``1`` for a scalar head. ``-`` marks an
empty cell. The ``skip`` column links rows: ``^id`` taps the row's output,
``<id`` concatenates the tapped tensor onto the row's input and ``>id`` onto
its output. Header lines ``name ...`` and ``role ...`` precede the rows;
``#`` starts a comment.

Shape inference lives here so that a table can be validated without torch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

INPUT_KINDS = ("input_x", "input_y", "input_z")
LAYER_KINDS = ("dense", "conv", "tconv", "res")
ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid", "linear")
NORMS = ("batch", "instance", "none")
SCALES = {"x1": 1, "x2": 2, "x1/2": -2}


class ArchSpecError(ValueError):
    """A layer table that does not parse or whose shapes do not chain."""


@dataclass(frozen=True)
class LayerRow:
    kind: str
    units: int | None = None
    repeats: int = 1
    kernel: int | None = None
    scale: int = 1
    dilation: int = 1
    activation: str = "linear"
    norm: str = "none"
    skip: tuple = ()
    shape: tuple = ()
    line: int = 0

    @property
    def label(self) -> str:
        return f"row {self.line} ({self.kind})"

    @property
    def is_input(self) -> bool:
        return self.kind in INPUT_KINDS


@dataclass
class ArchSpec:
    name: str
    role: str
    layers: list
    comments: list = field(default_factory=list)
    text: str = ""  # raw spec text, kept so checkpoints can embed it verbatim

    @property
    def latent_injection(self):
        """``(row index, (channels, h, w))`` where z enters, or None."""
        for i, row in enumerate(self.layers):
            if row.kind == "input_z":
                return i, (row.units or 1, *row.shape)
        return None

    @property
    def latent_shape(self):
        inj = self.latent_injection
        return None if inj is None else inj[1]

    @property
    def output_shape(self) -> tuple:
        return self.layers[-1].shape

    def validate(self, **kwargs) -> list:
        return infer_shapes(self, **kwargs)


@dataclass(frozen=True)
class Step:
    """One resolved layer with inferred input/output shapes (channels, h, w)."""

    row: LayerRow
    in_shape: tuple
    out_shape: tuple
    padding: int = 0
    output_padding: int = 0
    fully_connected: bool = False
    sources: tuple = ()  # names concatenated to form the input, in order


def _cell(tok: str):
    return None if tok == "-" else tok


def _parse_shape(tok: str, label: str) -> tuple:
    if tok == "1":
        return (1, 1)
    try:
        h, w = tok.lower().split("x")
        return (int(h), int(w))
    except ValueError:
        raise ArchSpecError(f"{label}: bad shape {tok!r}") from None


def parse_spec(text: str, name: str | None = None) -> ArchSpec:
    spec_name, role, rows, comments = name, None, [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line, _, comment = raw.partition("#")
        if comment.strip() and not line.strip():
            comments.append(comment.strip())
        toks = line.split()
        if not toks:
            continue
        if toks[0] == "name":
            spec_name = toks[1]
            continue
        if toks[0] == "role":
            role = toks[1]
            continue
        if toks[0] == "kind":
            continue
        if len(toks) != 9:
            raise ArchSpecError(f"row {lineno}: expected 9 columns, got {len(toks)}")
        kind, units, kernel, scale, dil, act, norm, skip, shape = toks
        label = f"row {lineno} ({kind})"
        if kind not in INPUT_KINDS + LAYER_KINDS:
            raise ArchSpecError(f"{label}: unknown layer kind {kind!r}")
        repeats = 1
        if _cell(units) is not None and "x" in units:
            rep, units = units.split("x")
            repeats = int(rep)
        act = _cell(act) or "linear"
        norm = _cell(norm) or "none"
        if act not in ACTIVATIONS:
            raise ArchSpecError(f"{label}: unknown activation {act!r}")
        if norm not in NORMS:
            raise ArchSpecError(f"{label}: unknown normalization {norm!r}")
        if _cell(scale) is not None and scale not in SCALES:
            raise ArchSpecError(f"{label}: unknown scaling {scale!r}")
        rows.append(LayerRow(
            kind=kind,
            units=None if _cell(units) is None else int(units),
            repeats=repeats,
            kernel=None if _cell(kernel) is None else int(kernel),
            scale=SCALES.get(scale, 1),
            dilation=int(_cell(dil) or 1),
            activation=act,
            norm=norm,
            skip=tuple(t for t in (_cell(skip) or "").split(",") if t),
            shape=_parse_shape(shape, label),
            line=lineno,
        ))
    if spec_name is None or role not in ("generator", "discriminator"):
        raise ArchSpecError("spec needs 'name' and 'role generator|discriminator' headers")
    if not rows:
        raise ArchSpecError(f"{spec_name}: no layer rows")
    return ArchSpec(spec_name, role, rows, comments, text)


def _check_skips(spec: ArchSpec):
    seen: dict = {}
    for row in spec.layers:
        for tok in row.skip:
            if tok[0] not in "^<>" or len(tok) < 2:
                raise ArchSpecError(f"{row.label}: bad skip token {tok!r}")
            seen.setdefault(tok[1:], []).append(tok[0])
    for sid, marks in seen.items():
        if len(marks) != 2 or marks[0] != "^" or marks[1] not in "<>":
            raise ArchSpecError(
                f"{spec.name}: skip link {sid!r} must appear exactly twice, source (^) first"
            )


def infer_shapes(spec: ArchSpec, image_channels: int = 1, pack: int = 1,
                 conditional: bool = False) -> list:
    """Resolve every layer row to a :class:`Step`, checking the declared shapes.

    For generators ``input_y`` carries ``image_channels + 1`` channels (values
    and mask); for discriminators ``input_x`` carries ``pack * image_channels``
    and ``input_y`` (only when ``conditional``) carries ``image_channels``.
    """
    _check_skips(spec)
    rows = spec.layers
    final = rows[-1]
    if final.is_input:
        raise ArchSpecError(f"{spec.name}: last row must be a layer")
    want = "tanh" if spec.role == "generator" else "sigmoid"
    if final.activation != want:
        raise ArchSpecError(
            f"{spec.name}: final {spec.role} activation must be {want}, got {final.activation}"
        )

    pending: list = []  # (source name, (c, h, w))
    taps: dict = {}
    steps: list = []
    for idx, row in enumerate(rows):
        if row.is_input:
            if row.kind == "input_x":
                ch = pack * image_channels
            elif row.kind == "input_y":
                if spec.role == "discriminator" and not conditional:
                    continue
                ch = image_channels + (1 if spec.role == "generator" else 0)
            else:
                ch = row.units or 1
            shp = (ch, *row.shape)
            pending.append((row.kind, shp))
            for tok in row.skip:
                if tok[0] == "^":
                    taps[tok[1:]] = shp
            steps.append(Step(row, shp, shp, sources=(row.kind,)))
            continue

        for tok in row.skip:
            if tok[0] == "<":
                pending.append((f"skip:{tok[1:]}", taps[tok[1:]]))
        if not pending:
            raise ArchSpecError(f"{row.label}: layer has no input")

        spatial = {s[1:] for _, s in pending}
        fc = row.kind == "dense" and spatial != {row.shape}
        if fc:
            in_shape = (sum(math.prod(s) for _, s in pending), 1, 1)
        else:
            if len(spatial) != 1:
                raise ArchSpecError(
                    f"{row.label}: cannot concatenate inputs of spatial shapes {sorted(spatial)}"
                )
            in_shape = (sum(s[0] for _, s in pending), *spatial.pop())
        sources = tuple(name for name, _ in pending)

        h, w = in_shape[1:]
        pad = opad = 0
        if row.kind == "dense":
            if fc:
                if row.units % math.prod(row.shape):
                    raise ArchSpecError(
                        f"{row.label}: {row.units} units do not reshape to {row.shape}"
                    )
                out = (row.units // math.prod(row.shape), *row.shape)
            else:
                out = (row.units, h, w)
        else:
            k, d = row.kernel, row.dilation
            if k is None or k % 2 == 0:
                raise ArchSpecError(f"{row.label}: kernel must be odd, got {k}")
            pad = d * (k - 1) // 2
            if row.kind == "tconv":
                if row.scale not in (1, 2):
                    raise ArchSpecError(f"{row.label}: transposed conv scaling must be x1 or x2")
                s = row.scale
                opad = s - 1
                oh, ow = ((n - 1) * s - 2 * pad + d * (k - 1) + opad + 1 for n in (h, w))
            else:
                s = 2 if row.scale == -2 else 1
                if row.scale == 2:
                    raise ArchSpecError(f"{row.label}: conv cannot upscale")
                if row.kind == "res" and s != 1:
                    raise ArchSpecError(f"{row.label}: residual blocks keep resolution")
                oh, ow = ((n + 2 * pad - d * (k - 1) - 1) // s + 1 for n in (h, w))
            out = (row.units, oh, ow)
        if out[1:] != row.shape:
            raise ArchSpecError(
                f"{spec.name} {row.label}: computed output {out[1]}x{out[2]} "
                f"but table says {row.shape[0]}x{row.shape[1]}"
            )
        steps.append(Step(row, in_shape, out, pad, opad, fc, sources))
        pending = [("features", out)]
        for tok in row.skip:
            if tok[0] == ">":
                tshape = taps[tok[1:]]
                if tshape[1:] != out[1:]:
                    raise ArchSpecError(f"{row.label}: skip {tok[1:]} has spatial "
                                        f"{tshape[1:]} but output is {out[1:]}")
                pending.append((f"skip:{tok[1:]}", tshape))
            elif tok[0] == "^":
                taps[tok[1:]] = out
        if pending[1:]:
            out = (sum(s[0] for _, s in pending), *out[1:])
    if len(pending) != 1:
        raise ArchSpecError(f"{spec.name}: trailing inputs are never consumed")
    return steps


def receptive_field(spec: ArchSpec) -> tuple:
    """Theoretical receptive field ``(rows, cols)`` of a purely convolutional spec.

    Uses ``r += (k - 1) * d * j`` and ``j *= s``; a ×2 transposed convolution
    counts as stride 1/2. Input rows are ignored.
    """
    r, j = 1.0, 1.0
    for row in spec.layers:
        if row.is_input:
            continue
        if row.kind not in ("conv", "tconv"):
            raise ArchSpecError(f"{row.label}: receptive field undefined for {row.kind!r}")
        r += (row.kernel - 1) * row.dilation * j
        if row.kind == "conv" and row.scale == -2:
            j *= 2
        elif row.kind == "tconv" and row.scale == 2:
            j /= 2
    rf = int(math.ceil(r))
    return rf, rf


def load_spec(name_or_path) -> ArchSpec:
    """Load a spec by catalog name (``dcgan-fashion-g``) or by file path."""
    path = Path(str(name_or_path))
    if path.suffix == ".arch" and path.exists():
        return parse_spec(path.read_text())
    catalog = resources.files("pixgan") / "catalog"
    target = catalog / f"{name_or_path}.arch"
    if not target.is_file():
        raise KeyError(f"no architecture spec named {name_or_path!r}; "
                       f"known: {', '.join(catalog_names())}")
    return parse_spec(target.read_text(), name=str(name_or_path))


def catalog_names() -> list:
    catalog = resources.files("pixgan") / "catalog"
    return sorted(p.name[:-5] for p in catalog.iterdir() if p.name.endswith(".arch"))
