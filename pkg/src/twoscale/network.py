"""Feedforward network with the two-scale input feature map.

The network reads ``(tau, s * (tau - tau_c), s)`` with ``s = epsilon**gamma``
and returns per-component jets, so ``u``, ``u'`` and ``u''`` come out of one
evaluation.  A network whose first width is 1 reads the bare ``tau`` (the
vanilla PINN baseline) and needs no scale configuration.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .jets import AdjointRecorder, DivergenceError, Jet2, Node, lift_input

DEFAULT_HIDDEN = (10, 10, 10, 10)
CHECKPOINT_MAGIC = "twoscale-checkpoint"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """Invalid network, problem or training configuration."""


@dataclass(frozen=True)
class TwoScaleConfig:
    epsilon: float
    gamma: float = -0.5
    tau_c: float = 0.5

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ConfigError(f"epsilon must be positive, got {self.epsilon!r}")
        if not self.gamma < 0:
            raise ConfigError(f"gamma must be negative, got {self.gamma!r}")
        if not 0.0 <= self.tau_c <= 1.0:
            raise ConfigError(f"tau_c must lie in [0, 1], got {self.tau_c!r}")

    @property
    def scale(self) -> float:
        """The stretching factor ``epsilon**gamma``."""
        return self.epsilon ** self.gamma


def default_widths(n: int, vanilla: bool = False) -> tuple[int, ...]:
    return (1 if vanilla else 3, *DEFAULT_HIDDEN, n)


@dataclass
class NetworkParams:
    """Weights ``W[l]`` of shape ``(w_l, w_{l+1})`` and biases ``b[l]``."""

    widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        _check_widths(self.widths)
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.widths[l], self.widths[l + 1]) or b.shape != (self.widths[l + 1],):
                raise ConfigError(f"layer {l} has shape {W.shape}/{b.shape}, widths say {self.widths}")

    @property
    def vanilla(self) -> bool:
        return self.widths[0] == 1

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    @property
    def n_params(self) -> int:
        return n_params(self.widths)

    def flat(self) -> np.ndarray:
        """Parameters in layer order, each layer ``W`` (row major) then ``b``."""
        return np.concatenate([a.ravel() for W, b in zip(self.weights, self.biases) for a in (W, b)])

    def with_flat(self, theta: np.ndarray) -> "NetworkParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ConfigError(f"expected {self.n_params} parameters, got {theta.shape}")
        weights, biases, k = [], [], 0
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            weights.append(theta[k:k + a * b].reshape(a, b).copy())
            k += a * b
            biases.append(theta[k:k + b].copy())
            k += b
        return NetworkParams(self.widths, weights, biases, self.seed, dict(self.meta))

    def copy(self) -> "NetworkParams":
        return self.with_flat(self.flat())


def n_params(widths) -> int:
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


def _check_widths(widths):
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ConfigError(f"invalid widths {widths}")
    if widths[0] not in (1, 3):
        raise ConfigError(f"first width must be 3 (two-scale) or 1 (vanilla), got {widths[0]}")


def init_xavier(widths, seed: int, vanilla: bool = False) -> NetworkParams:
    """Uniform Glorot weights, zero biases, deterministic in ``seed``."""
    widths = tuple(int(w) for w in widths)
    expected = 1 if vanilla else 3
    if len(widths) < 2 or widths[0] != expected:
        raise ConfigError(f"first width must be {expected}, got widths {widths}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for a, b in zip(widths[:-1], widths[1:]):
        limit = math.sqrt(6.0 / (a + b))
        weights.append(rng.uniform(-limit, limit, size=(a, b)))
        biases.append(np.zeros(b))
    return NetworkParams(widths, weights, biases, seed=seed, meta={"init": "xavier-uniform", "bias_init": "zero"})


def two_scale_features(tau: Jet2, cfg: TwoScaleConfig) -> tuple[Jet2, Jet2, Jet2]:
    s = cfg.scale
    stretched = Jet2(s * (tau.v - cfg.tau_c), s * tau.d1, s * tau.d2)
    const = Jet2(s + 0.0 * tau.v, 0.0 * tau.v, 0.0 * tau.v)
    return tau, stretched, const


def input_features(tau: np.ndarray, cfg: TwoScaleConfig | None, vanilla: bool) -> Jet2:
    """Input layer jets of shape ``(N, 1)`` or ``(N, 3)``."""
    t = lift_input(np.atleast_1d(np.asarray(tau, dtype=float)))
    if vanilla:
        feats = (t,)
    else:
        if cfg is None:
            raise ConfigError("a two-scale network needs a TwoScaleConfig")
        feats = two_scale_features(t, cfg)
    return Jet2(*(np.stack([tuple(f)[k] for f in feats], axis=-1) for k in range(3)))


def forward_recorded(params: NetworkParams, tau, cfg: TwoScaleConfig | None,
                     rec: AdjointRecorder) -> Node:
    """Record the network on ``rec``; weights and biases become recorder params
    in :meth:`NetworkParams.flat` order."""
    x = rec.constant(input_features(tau, cfg, params.vanilla))
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        Wn = rec.param(W)
        bn = rec.param(b)
        x = rec.linear(x, Wn, bn)
        if l < last:
            x = rec.tanh(x)
    return x


def forward(params: NetworkParams, tau, cfg: TwoScaleConfig | None = None) -> Jet2:
    """Evaluate the network; returns a jet of arrays with shape ``(N, n)``."""
    out = forward_recorded(params, tau, cfg, AdjointRecorder()).jet
    if not all(np.all(np.isfinite(c)) for c in out):
        raise DivergenceError("non-finite network output")
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def format_checkpoint(params: NetworkParams, cfg: TwoScaleConfig | None) -> str:
    """Text checkpoint: ``key = value`` header, ``---``, one double per line.

    Doubles are written with ``repr`` so they round-trip exactly.
    """
    out = io.StringIO()
    out.write(f"# {CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n")
    out.write(f"widths = {','.join(map(str, params.widths))}\n")
    out.write(f"seed = {params.seed if params.seed is not None else 'none'}\n")
    if cfg is not None:
        out.write(f"epsilon = {cfg.epsilon!r}\ngamma = {cfg.gamma!r}\ntau_c = {cfg.tau_c!r}\n")
    out.write(f"n_params = {params.n_params}\n---\n")
    for x in params.flat():
        out.write(f"{float(x)!r}\n")
    return out.getvalue()


def save_checkpoint(path, params: NetworkParams, cfg: TwoScaleConfig | None) -> None:
    Path(path).write_text(format_checkpoint(params, cfg))


def parse_checkpoint(text: str) -> tuple[NetworkParams, TwoScaleConfig | None]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(f"# {CHECKPOINT_MAGIC} v"):
        raise ConfigError("not a twoscale checkpoint (bad magic line)")
    try:
        version = int(lines[0].rsplit("v", 1)[1])
    except ValueError:
        raise ConfigError("unreadable checkpoint version") from None
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    try:
        sep = lines.index("---")
    except ValueError:
        raise ConfigError("checkpoint header not terminated by '---'") from None
    header = {}
    for line in lines[1:sep]:
        key, eq, val = line.partition("=")
        if not eq:
            raise ConfigError(f"malformed checkpoint header line {line!r}")
        header[key.strip()] = val.strip()
    try:
        widths = tuple(int(w) for w in header["widths"].split(","))
        count = int(header["n_params"])
        seed = None if header.get("seed", "none") == "none" else int(header["seed"])
        values = np.array([float(x) for x in lines[sep + 1:] if x.strip()])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"corrupt checkpoint: {exc}") from None
    if count != n_params(widths) or values.size != count:
        raise ConfigError(f"checkpoint holds {values.size} values, header promises {count}")
    cfg = None
    if "epsilon" in header:
        cfg = TwoScaleConfig(float(header["epsilon"]), float(header["gamma"]), float(header["tau_c"]))
    _check_widths(widths)
    template = NetworkParams(widths, [np.zeros((a, b)) for a, b in zip(widths[:-1], widths[1:])],
                             [np.zeros(b) for b in widths[1:]], seed)
    return template.with_flat(values), cfg


def load_checkpoint(path) -> tuple[NetworkParams, TwoScaleConfig | None]:
    return parse_checkpoint(Path(path).read_text())
