"""Dense feed-forward networks and trial-function wrappers."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import HyperDual, Node, Tape
from .errors import ConfigError, UsageError

CHECKPOINT_MAGIC = b"SWRPINN\x01"
_ACTIVATION_CODES = {"tanh": 0, "sigmoid": 1}


@dataclass(frozen=True)
class NetworkArchitecture:
    input_dim: int
    layer_widths: tuple[int, ...]
    activation: str = "tanh"
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if not self.layer_widths:
            raise ConfigError("at least one hidden layer is required")
        if any(w < 1 for w in self.layer_widths):
            raise ConfigError(f"layer widths must be >= 1, got {self.layer_widths}")
        if self.activation not in ad.ACTIVATIONS:
            raise ConfigError(f"unsupported activation {self.activation!r}; use one of {sorted(ad.ACTIVATIONS)}")
        if self.output_dim != 1:
            raise ConfigError("only scalar-output networks are supported")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.layer_widths, self.output_dim)

    @property
    def n_params(self) -> int:
        s = self.sizes
        return sum((s[r] + 1) * s[r + 1] for r in range(len(s) - 1))

    def blocks(self) -> list[tuple[int, int, int]]:
        """``(offset, fan_in, fan_out)`` per layer; bias is the last row of each block."""
        out, offset = [], 0
        s = self.sizes
        for r in range(len(s) - 1):
            out.append((offset, s[r], s[r + 1]))
            offset += (s[r] + 1) * s[r + 1]
        return out

    def index(self, layer: int, row: int, col: int) -> int:
        """Flat index of weight ``(row, col)`` of ``layer``; ``row == fan_in`` is the bias."""
        offset, fan_in, fan_out = self.blocks()[layer]
        if not (0 <= row <= fan_in and 0 <= col < fan_out):
            raise UsageError(f"index ({layer}, {row}, {col}) out of range")
        return offset + row * fan_out + col


@dataclass
class NetworkParams:
    """Flat weight vector; ``w`` is a plain array or a tape variable."""

    arch: NetworkArchitecture
    w: np.ndarray | Node
    seed: int | None = None

    def __post_init__(self):
        if np.size(ad.value_of(self.w)) != self.arch.n_params:
            raise UsageError(f"expected {self.arch.n_params} parameters, got {np.size(ad.value_of(self.w))}")

    def on(self, tape: Tape) -> "NetworkParams":
        """Copy whose weights are recorded on ``tape``."""
        return NetworkParams(self.arch, tape.variable(ad.value_of(self.w)), self.seed)

    def frozen(self) -> "NetworkParams":
        w = np.array(ad.value_of(self.w), dtype=np.float64)
        w.setflags(write=False)
        return NetworkParams(self.arch, w, self.seed)

    def layers(self) -> list:
        # sliced once per instance so repeated passes share the same tape nodes
        cached = self.__dict__.get("_layers")
        if cached is None:
            cached = []
            for offset, fan_in, fan_out in self.arch.blocks():
                n_w = fan_in * fan_out
                weight = self.w[offset : offset + n_w].reshape((fan_in, fan_out))
                bias = self.w[offset + n_w : offset + n_w + fan_out]
                cached.append((weight, bias))
            self.__dict__["_layers"] = cached
        return cached


def init_params(arch: NetworkArchitecture, seed: int) -> NetworkParams:
    """Xavier-uniform weights and zero biases, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    w = np.zeros(arch.n_params)
    for offset, fan_in, fan_out in arch.blocks():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w[offset : offset + fan_in * fan_out] = rng.uniform(-bound, bound, fan_in * fan_out)
    return NetworkParams(arch, w, seed)


def _squeeze_last(x):
    if isinstance(x, HyperDual):
        return HyperDual(_squeeze_last(x.value), _squeeze_last(x.d1), _squeeze_last(x.d2))
    if np.ndim(ad.value_of(x)) == 0:
        return x
    return x[..., 0]


def forward(params: NetworkParams, point):
    """Evaluate the network at ``point``.

    ``point`` is either a sequence of per-coordinate values (hyper-duals,
    scalars or ``(n,)`` arrays) or an ``(n, input_dim)`` array.
    Returns a scalar-per-point output of matching kind.
    """
    arch = params.arch
    if isinstance(point, (list, tuple)):
        if len(point) != arch.input_dim:
            raise UsageError(f"point has {len(point)} coordinates, network expects {arch.input_dim}")
        if any(isinstance(c, HyperDual) for c in point):
            x = ad.stack_columns([HyperDual.lift(c) for c in point])
        else:
            x = np.stack([np.asarray(c, dtype=np.float64) for c in point], axis=-1)
    else:
        x = np.asarray(point, dtype=np.float64)
        if x.shape[-1] != arch.input_dim:
            raise UsageError(f"point has {x.shape[-1]} coordinates, network expects {arch.input_dim}")
    act = ad.ACTIVATIONS[arch.activation]
    layers = params.layers()
    h = x
    for weight, bias in layers[:-1]:
        h = act(ad.affine(h, weight, bias))
    weight, bias = layers[-1]
    return _squeeze_last(ad.affine(h, weight, bias))


@dataclass(frozen=True)
class TrialNetwork:
    """Wraps a network so the initial condition can be built in.

    ``hard``: T(w, x, t) = u0(x) + t N(w, x, t), exact at t = 0 for every w.
    ``soft``: T = N; the initial condition is enforced by a loss penalty.
    ``u0`` takes a list of spatial coordinates (hyper-duals or arrays).
    """

    arch: NetworkArchitecture
    u0: Callable[[Sequence], object]
    ic_mode: str = "hard"

    def __post_init__(self):
        if self.ic_mode not in ("hard", "soft"):
            raise ConfigError(f"ic_mode must be 'hard' or 'soft', got {self.ic_mode!r}")


def trial_eval(trial: TrialNetwork, params: NetworkParams, x: Sequence, t):
    n = forward(params, [*x, t])
    if trial.ic_mode == "soft":
        return n
    return trial.u0(list(x)) + t * n


def hard_interface_trial(
    trial: TrialNetwork,
    params: NetworkParams,
    neighbor_trace: Callable,
    blend: Callable,
    x: Sequence,
    t,
):
    """Blend ``chi * trace + (1 - chi) * trial``; equals the trace wherever chi == 1."""
    chi = blend(list(x))
    cv = np.asarray(ad.value_of(chi))
    if np.any(cv < 0.0) or np.any(cv > 1.0):
        raise ConfigError("blend function must take values in [0, 1]")
    own = trial_eval(trial, params, x, t)
    return chi * neighbor_trace(list(x), t) + (1.0 - chi) * own


# checkpoints ---------------------------------------------------------------


def save_checkpoint(path: str | Path, params: NetworkParams) -> None:
    arch = params.arch
    w = np.ascontiguousarray(ad.value_of(params.w), dtype="<f8")
    seed = -1 if params.seed is None else int(params.seed)
    header = bytearray(CHECKPOINT_MAGIC)
    header += struct.pack("<II", arch.input_dim, len(arch.layer_widths))
    header += struct.pack(f"<{len(arch.layer_widths)}I", *arch.layer_widths)
    header += struct.pack("<Iq", _ACTIVATION_CODES[arch.activation], seed)
    header += struct.pack("<Q", w.size)
    Path(path).write_bytes(bytes(header) + w.tobytes())


def load_checkpoint(path: str | Path) -> NetworkParams:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise UsageError(f"{path}: not a parameter checkpoint")
    pos = 8
    input_dim, n_hidden = struct.unpack_from("<II", data, pos)
    pos += 8
    widths = struct.unpack_from(f"<{n_hidden}I", data, pos)
    pos += 4 * n_hidden
    code, seed = struct.unpack_from("<Iq", data, pos)
    pos += 12
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    activation = {v: k for k, v in _ACTIVATION_CODES.items()}[code]
    arch = NetworkArchitecture(input_dim, tuple(widths), activation)
    w = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64)
    return NetworkParams(arch, w, None if seed < 0 else seed)

