"""Toy differentiable generators with exact Jacobians.

A generator is a stack of affine layers, each followed by ``identity`` or
``tanh``.  Outputs of image-like generators are flattened row-major grids.
"""

from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .numkernel import format_real, parse_matrix

ACTIVATIONS = ("identity", "tanh")
KINDS = ("linear", "mlp", "blocky")
FD_STEP = 1e-4
ATTR_GAIN = 0.3
ATTR_SCALE = 0.3
TEXTURE_SCALE = 0.5


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=float)
        b = np.asarray(self.bias, dtype=float).reshape(-1)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError("bias length must match weight rows")
        if self.activation not in ACTIVATIONS:
            raise ValueError("unknown activation %r" % self.activation)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    def pre(self, x):
        return self.weight @ x + self.bias

    def act(self, a):
        return np.tanh(a) if self.activation == "tanh" else a

    def dact(self, a):
        if self.activation == "tanh":
            return 1.0 - np.tanh(a) ** 2
        return np.ones_like(a)


@dataclass(frozen=True, eq=False)
class Generator:
    kind: str
    layers: tuple
    intrinsic_dim: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError("unknown generator kind %r" % self.kind)
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a generator needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise ValueError("layer shapes do not compose")
        object.__setattr__(self, "layers", layers)
        widths = [layers[0].weight.shape[1]] + [l.weight.shape[0] for l in layers]
        if not 1 <= self.intrinsic_dim <= min(widths):
            raise ValueError("intrinsic_dim must lie in [1, narrowest width]")

    @property
    def d_z(self):
        return self.layers[0].weight.shape[1]

    @property
    def d_x(self):
        return self.layers[-1].weight.shape[0]

    @property
    def grid(self):
        """Side length when the output is a square image, else ``None``."""
        side = int(round(np.sqrt(self.d_x)))
        return side if side * side == self.d_x else None

    def shapes(self):
        return [(l.weight.shape[0], l.weight.shape[1], l.activation) for l in self.layers]


def _latent(g, z):
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape != (g.d_z,):
        raise ValueError("latent code has length %d, generator expects %d" % (z.size, g.d_z))
    if not np.all(np.isfinite(z)):
        raise ValueError("latent code must be finite")
    return z


def forward(g, z):
    x = _latent(g, z)
    for layer in g.layers:
        x = layer.act(layer.pre(x))
    return x


def _pre_activations(g, z):
    x = _latent(g, z)
    pres = []
    for layer in g.layers:
        a = layer.pre(x)
        pres.append(a)
        x = layer.act(a)
    return pres


def jacobian(g, z):
    """Exact d_x x d_z Jacobian by the chain rule."""
    j = np.eye(g.d_z)
    for layer, a in zip(g.layers, _pre_activations(g, z)):
        j = layer.dact(a)[:, None] * (layer.weight @ j)
    return j


def layer_jacobians(g, z):
    """Jacobians of the output with respect to every layer input.

    Entry ``k`` differentiates the sub-network made of layers ``k..end`` at
    the input it sees when the generator is evaluated at ``z``; entry 0 is the
    full Jacobian.
    """
    pres = _pre_activations(g, z)
    j = np.eye(g.d_x)
    out = []
    for layer, a in zip(reversed(g.layers), reversed(pres)):
        j = j @ (layer.dact(a)[:, None] * layer.weight)
        out.append(j)
    return out[::-1]


def prefix_jacobians(g, z):
    """Jacobians of each layer's output with respect to the latent code."""
    j = np.eye(g.d_z)
    out = []
    for layer, a in zip(g.layers, _pre_activations(g, z)):
        j = layer.dact(a)[:, None] * (layer.weight @ j)
        out.append(j)
    return out


def jacobian_fd(g, z, step=FD_STEP):
    """Central differences with per-coordinate step ``step * max(1, |z_k|)``."""
    if not step > 0:
        raise ValueError("step must be positive")
    z = _latent(g, z)
    cols = []
    for k in range(g.d_z):
        h = step * max(1.0, abs(z[k]))
        zp = z.copy()
        zm = z.copy()
        zp[k] += h
        zm[k] -= h
        cols.append((forward(g, zp) - forward(g, zm)) / (2.0 * h))
    return np.stack(cols, axis=1)


# -- constructors -------------------------------------------------------------


def make_linear(d_z, d_x, seed=0, identity=False):
    """Affine map ``W z`` with zero bias; ``identity=True`` requires d_z == d_x."""
    if d_z < 1 or d_x < 1:
        raise ValueError("dimensions must be positive")
    if identity:
        if d_z != d_x:
            raise ValueError("identity initialization needs d_z == d_x")
        w = np.eye(d_z)
    else:
        w = np.random.default_rng(seed).standard_normal((d_x, d_z)) / np.sqrt(d_z)
    return Generator("linear", (Layer(w, np.zeros(d_x)),), min(d_z, d_x))


def make_mlp(d_z, widths, seed=0, output_activation="identity", bias_scale=0.1, gain=1.0):
    """tanh hidden layers of the given widths; the last width is d_x.

    ``intrinsic_dim`` is the narrowest width including d_z.
    """
    widths = [int(w) for w in widths]
    if d_z < 1 or not widths or min(widths) < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    layers = []
    fan_in = d_z
    for i, width in enumerate(widths):
        last = i == len(widths) - 1
        w = gain * rng.standard_normal((width, fan_in)) / np.sqrt(fan_in)
        b = bias_scale * rng.standard_normal(width)
        layers.append(Layer(w, b, output_activation if last else "tanh"))
        fan_in = width
    return Generator("mlp", tuple(layers), min([d_z] + widths))


def image_coords(grid):
    idx = np.arange(grid * grid)
    return idx // grid, idx % grid


def half_masks(grid):
    """Row-major pixel indices of the left and right half-images."""
    _, cols = image_coords(grid)
    left = np.flatnonzero(cols < grid // 2)
    right = np.flatnonzero(cols >= grid // 2)
    return left, right


def make_blocky(d_z=32, grid=16, block_split=16, coupling=0.0, seed=0, n_attr=3, texture_gain=0.2):
    """Two-block image generator.

    Latent coordinates ``[0, block_split)`` drive the left half-image and
    ``[block_split, d_z)`` the right half through one tanh layer with exactly
    ``d_z`` units.  Per half there are ``n_attr`` attribute units reading
    orthonormal rows dense over their block's latents, with smooth, mutually
    orthogonal footprints that cover the whole half and gains decaying by
    ``ATTR_GAIN``.  Every other latent coordinate owns one texture unit with a
    local footprint (a contiguous run of the half's pixels) kept orthogonal to
    the attribute footprints.  A region Gram is therefore a dense low-rank
    attribute part plus a diagonal texture part.

    ``coupling`` adds to each attribute unit a random mix of the other block's
    attribute rows at half the within-block scale, so attributes entangle
    across halves; 0 is exactly separable.
    """
    if not 0 < block_split < d_z:
        raise ValueError("block_split must satisfy 0 < block_split < d_z")
    if grid < 2:
        raise ValueError("grid must be at least 2")
    if not 0.0 <= coupling <= 1.0:
        raise ValueError("coupling must lie in [0, 1]")
    if n_attr < 1:
        raise ValueError("n_attr must be positive")
    rng = np.random.default_rng(seed)
    d_x = grid * grid
    rows, cols = image_coords(grid)
    halves = half_masks(grid)
    latents = (np.arange(0, block_split), np.arange(block_split, d_z))
    attr_rows = []
    for lat in latents:
        k = min(n_attr, len(lat))
        attr_rows.append(ATTR_SCALE * np.linalg.qr(rng.standard_normal((len(lat), k)))[0].T)

    w1 = np.zeros((d_z, d_z))
    w2 = np.zeros((d_x, d_z))
    unit = 0
    for b, (lat, pix) in enumerate(zip(latents, halves)):
        other = latents[1 - b]
        own_rows, other_rows = attr_rows[b], attr_rows[1 - b]
        k = len(own_rows)
        n_tex = len(lat) - k
        if n_tex and len(pix) < n_tex * (k + 1):
            raise ValueError("grid too small for %d texture units per half" % n_tex)
        fields = np.empty((len(pix), k))
        for a in range(k):
            fy, fx = rng.uniform(0.0, 1.0, size=2)
            phase = rng.uniform(0.0, 2 * np.pi)
            fields[:, a] = 1.0 + 0.5 * np.cos(2 * np.pi * (fy * rows[pix] + fx * cols[pix]) / grid + phase)
        feet = np.linalg.qr(fields)[0] * np.sqrt(len(pix))
        feet *= np.where(feet.sum(axis=0) < 0, -1.0, 1.0) * ATTR_GAIN ** np.arange(k)
        mix = rng.standard_normal((k, len(other_rows))) / np.sqrt(len(other_rows))
        for a in range(k):
            w1[unit, lat] = own_rows[a]
            w1[unit, other] = coupling * 0.5 * (mix[a] @ other_rows)
            w2[pix, unit] = feet[:, a]
            unit += 1
        for t, run in enumerate(np.array_split(np.arange(len(pix)), n_tex) if n_tex else []):
            w1[unit, lat[k + t]] = TEXTURE_SCALE
            pattern = rng.standard_normal(len(run))
            local = feet[run]
            pattern -= local @ np.linalg.lstsq(local, pattern, rcond=None)[0]
            pattern *= texture_gain * np.sqrt(len(run)) / np.linalg.norm(pattern)
            w2[pix[run], unit] = pattern
            unit += 1
    base = 0.5 * (rows / max(grid - 1, 1)) - 0.25
    b1 = 0.1 * rng.standard_normal(d_z)
    layers = (Layer(w1, b1, "tanh"), Layer(w2, base, "identity"))
    return Generator("blocky", layers, d_z)


def default_zoo(seed=0):
    """Named generators used by the verification suite."""
    return {
        "linear-square": make_linear(8, 8, seed=seed),
        "linear-wide": make_linear(8, 24, seed=seed + 1),
        "mlp-bottleneck": make_mlp(32, [8, 256], seed=seed + 2),
        "mlp-tanh": make_mlp(16, [16, 64], seed=seed + 3, gain=0.5),
        "mlp-single": make_mlp(8, [12], seed=seed + 4, output_activation="tanh", gain=0.5),
        "blocky-c0": make_blocky(coupling=0.0, seed=seed + 5),
        "blocky-c005": make_blocky(coupling=0.05, seed=seed + 6),
    }


# -- text format -------------------------------------------------------------


def dumps(g):
    """Header ``kind d_z d_x intrinsic_dim n_layers``; per layer
    ``rows cols activation``, the weight rows, then one bias row."""
    out = ["%s %d %d %d %d" % (g.kind, g.d_z, g.d_x, g.intrinsic_dim, len(g.layers))]
    for layer in g.layers:
        rows, cols = layer.weight.shape
        out.append("%d %d %s" % (rows, cols, layer.activation))
        out.extend(" ".join(format_real(x) for x in row) for row in layer.weight)
        out.append(" ".join(format_real(x) for x in layer.bias))
    return "\n".join(out) + "\n"


def loads(text):
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise FormatError("missing generator header", line=1)
    head = lines[0].split()
    if len(head) != 5:
        raise FormatError("header must be 'kind d_z d_x intrinsic_dim n_layers'", line=1)
    kind = head[0]
    try:
        d_z, d_x, intrinsic, n_layers = (int(t) for t in head[1:])
    except ValueError:
        raise FormatError("non-integer field in header", line=1)
    if kind not in KINDS:
        raise FormatError("unknown generator kind %r" % kind, line=1)
    layers = []
    pos = 1
    for k in range(n_layers):
        what = "layer %d" % (k + 1)
        if pos >= len(lines):
            raise FormatError("missing %s header" % what, line=pos + 1)
        parts = lines[pos].split()
        if len(parts) != 3:
            raise FormatError("%s header must be 'rows cols activation'" % what, line=pos + 1)
        act = parts[2]
        if act not in ACTIVATIONS:
            raise FormatError("unknown activation %r" % act, line=pos + 1)
        weight, pos = parse_matrix(lines, pos, what=what, extra_fields=1)
        if pos >= len(lines):
            raise FormatError("missing %s bias row" % what, line=pos + 1)
        try:
            bias = np.array([float(t) for t in lines[pos].split()])
        except ValueError as exc:
            raise FormatError("%s bias: %s" % (what, exc), line=pos + 1)
        if bias.shape != (weight.shape[0],) or not np.all(np.isfinite(bias)):
            raise FormatError("%s bias must have %d finite values" % (what, weight.shape[0]), line=pos + 1)
        layers.append(Layer(weight, bias, act))
        pos += 1
    if any(line.strip() for line in lines[pos:]):
        raise FormatError("trailing content after last layer", line=pos + 1)
    try:
        g = Generator(kind, tuple(layers), intrinsic)
    except ValueError as exc:
        raise FormatError(str(exc))
    if (g.d_z, g.d_x) != (d_z, d_x):
        raise FormatError("header dimensions %dx%d disagree with layers %dx%d" % (d_z, d_x, g.d_z, g.d_x), line=1)
    return g


def save(g, path):
    with open(path, "w") as fh:
        fh.write(dumps(g))


def load(path):
    with open(path) as fh:
        return loads(fh.read())
