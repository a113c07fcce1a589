"""Model assembly: DIST-Net and the comparison models.

All networks predict the next ``horizon`` hours of one pollutant at one
station. DIST-Net runs a conv stack over every encoder-hour grid frame,
picks the target cell's feature vector, and feeds the sequence through a
GRU encoder, a learned time-axis map from encoder length to horizon
length, and a GRU decoder with embedded future-time features. The
baselines swap the spatial stage: nothing (persistence), per-step dense
layers (MLP), the station's own channels (local seq2seq), or sector
aggregates of the 10 km neighborhood (neighbor seq2seq).

Predictions come back in original units: the final affine step applies
the frozen normalization extrema inside the graph, so the SMAPE loss sees
original-scale values. Reported predictions are floored at zero; the loss
path is not, to keep gradients alive early in training.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tt
from .errors import ConfigError, ContractError
from .features import SampleWindow
from .layers import (Adam, ConvLayer, DenseLayer, Embedding, GRUCell,
                     conv_stack_forward, load_checkpoint, save_checkpoint)
from .tensor import Tensor

HOUR_VOCAB = 24
WEEKDAY_VOCAB = 7


@dataclass
class ModelConfig:
    """Hyperparameters; field comments give the usual symbol names."""

    t_encoder: int = 72        # T, encoder hours
    horizon: int = 48          # tau, forecast hours
    conv_layers: int = 3       # K
    conv_channels: int = 32    # beta, channels per conv layer
    kernel_size: int = 3
    stat_features: int = 9     # gamma
    hidden: int = 64           # delta; attention output feature dim equals it
    hour_embed: int = 6
    weekday_embed: int = 3
    per_station: bool = False

    def __post_init__(self):
        for name in ("t_encoder", "horizon", "conv_channels", "kernel_size",
                     "stat_features", "hidden", "hour_embed", "weekday_embed"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.conv_layers < 0:
            raise ConfigError("conv_layers must be >= 0")

    @property
    def eta(self) -> int:
        return self.hour_embed + self.weekday_embed

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class _TemporalCore:
    """Shared encoder -> time-axis map -> decoder -> scalar head."""

    def __init__(self, rng, cfg: ModelConfig, input_dim: int,
                 target_bounds: tuple[float, float]):
        self.cfg = cfg
        self.input_dim = input_dim
        self.encoder = GRUCell.init(rng, input_dim, cfg.hidden)
        self.attention = DenseLayer.init(rng, cfg.t_encoder, cfg.horizon)
        self.hour_emb = Embedding.init(rng, HOUR_VOCAB, cfg.hour_embed)
        self.weekday_emb = Embedding.init(rng, WEEKDAY_VOCAB, cfg.weekday_embed)
        self.decoder = GRUCell.init(rng, cfg.hidden + cfg.eta, cfg.hidden)
        self.head = DenseLayer.init(rng, cfg.hidden, 1, activation="selu")
        self.target_bounds = target_bounds

    def run(self, g: Tensor, time_ids: np.ndarray) -> Tensor:
        """(T, input_dim) encoder inputs -> (horizon,) original-scale output."""
        if g.shape != (self.cfg.t_encoder, self.input_dim):
            raise ConfigError(
                f"encoder input shape {g.shape}, expected "
                f"({self.cfg.t_encoder}, {self.input_dim})"
            )
        e = self.encoder.unroll(g)
        r = self.attention.forward_time(e)
        emb = tt.concat([self.hour_emb.lookup(time_ids[:, 0]),
                         self.weekday_emb.lookup(time_ids[:, 1])], axis=1)
        h = tt.concat([r, emb], axis=1)
        d = self.decoder.unroll(h)
        y_norm = tt.selu(tt.reshape(d @ self.head.weight, (self.cfg.horizon,))
                         + self.head.bias)
        lo, hi = self.target_bounds
        return y_norm * (hi - lo) + lo

    def parameters(self, prefix=""):
        out = []
        for part, obj in (("encoder", self.encoder), ("attention", self.attention),
                          ("hour_emb", self.hour_emb), ("weekday_emb", self.weekday_emb),
                          ("decoder", self.decoder), ("head", self.head)):
            out.extend((f"{prefix}{part}.{n}", p) for n, p in obj.parameters())
        return out


def _spot_track(window: SampleWindow) -> np.ndarray:
    """(T, 1 + n) target-cell channels straight from the encoder frames."""
    return window.x[:, window.row, window.col, :]


class DistNetModel:
    kind = "distnet"

    def __init__(self, cfg: ModelConfig, n_weather: int,
                 target_bounds: tuple[float, float], seed: int):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.n_weather = n_weather
        c_in = 1 + n_weather
        self.conv: list[ConvLayer] = []
        for k in range(cfg.conv_layers):
            self.conv.append(ConvLayer.init(
                rng, cfg.kernel_size, c_in if k == 0 else cfg.conv_channels,
                cfg.conv_channels))
        beta = cfg.conv_channels if cfg.conv_layers > 0 else c_in
        self.core = _TemporalCore(rng, cfg, beta + cfg.stat_features, target_bounds)

    def forward(self, window: SampleWindow) -> Tensor:
        cfg = self.cfg
        if window.x.shape[0] != cfg.t_encoder or window.x.shape[3] != 1 + self.n_weather:
            raise ConfigError(
                f"window frames {window.x.shape} do not match config "
                f"(T={cfg.t_encoder}, channels={1 + self.n_weather})"
            )
        if window.stats.shape != (cfg.t_encoder, cfg.stat_features):
            raise ConfigError(f"window stats shape {window.stats.shape} unexpected")
        rows = []
        for t in range(cfg.t_encoder):
            frame = Tensor(window.x[t])
            feat = conv_stack_forward(frame, self.conv) if self.conv else frame
            f_t = tt.slice_spot(feat, window.row, window.col)
            rows.append(tt.concat([f_t, Tensor(window.stats[t])]))
        g = tt.stack_rows(rows)
        return self.core.run(g, window.time_ids)

    def parameters(self):
        out = []
        for i, layer in enumerate(self.conv):
            out.extend((f"conv{i}.{n}", p) for n, p in layer.parameters())
        out.extend(self.core.parameters())
        return out


class LocalSeq2SeqModel:
    """Same temporal pathway as DIST-Net; inputs are the target station only."""

    kind = "local_seq2seq"

    def __init__(self, cfg: ModelConfig, n_weather: int,
                 target_bounds: tuple[float, float], seed: int):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.n_weather = n_weather
        self.core = _TemporalCore(rng, cfg, 1 + n_weather + cfg.stat_features,
                                  target_bounds)

    def forward(self, window: SampleWindow) -> Tensor:
        g = np.concatenate([_spot_track(window), window.stats], axis=1)
        return self.core.run(Tensor(g), window.time_ids)

    def parameters(self):
        return self.core.parameters()


class NeighborSeq2SeqModel:
    """Temporal pathway fed with 8-sector neighborhood aggregates."""

    kind = "neighbor_seq2seq"

    def __init__(self, cfg: ModelConfig, n_weather: int,
                 target_bounds: tuple[float, float], seed: int, sectors: int = 8):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.n_weather = n_weather
        self.sectors = sectors
        width = (sectors + 1) * (1 + n_weather) + cfg.stat_features
        self.core = _TemporalCore(rng, cfg, width, target_bounds)

    def forward(self, window: SampleWindow) -> Tensor:
        if window.neighbor is None:
            raise ContractError(
                "window was built without neighbor features "
                "(build_windows(include_neighbor=True))"
            )
        g = np.concatenate([window.neighbor, _spot_track(window), window.stats],
                           axis=1)
        return self.core.run(Tensor(g), window.time_ids)

    def parameters(self):
        return self.core.parameters()


class MLPModel:
    """Per-step dense spatial stage and a dense temporal stage."""

    kind = "mlp"

    def __init__(self, cfg: ModelConfig, n_weather: int,
                 target_bounds: tuple[float, float], seed: int):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.n_weather = n_weather
        self.target_bounds = target_bounds
        step_in = 1 + n_weather + cfg.stat_features
        self.spatial = [DenseLayer.init(rng, step_in, 32),
                        DenseLayer.init(rng, 32, 1)]
        self.temporal = [DenseLayer.init(rng, cfg.t_encoder, 128),
                         DenseLayer.init(rng, 128, 64),
                         DenseLayer.init(rng, 64, cfg.horizon, activation="identity")]

    def forward(self, window: SampleWindow) -> Tensor:
        g = Tensor(np.concatenate([_spot_track(window), window.stats], axis=1))
        for layer in self.spatial:
            g = _dense_rows(layer, g)
        v = tt.reshape(g, (self.cfg.t_encoder,))
        for layer in self.temporal:
            v = layer.forward(v)
        lo, hi = self.target_bounds
        return v * (hi - lo) + lo

    def parameters(self):
        out = []
        for i, layer in enumerate(self.spatial):
            out.extend((f"spatial{i}.{n}", p) for n, p in layer.parameters())
        for i, layer in enumerate(self.temporal):
            out.extend((f"temporal{i}.{n}", p) for n, p in layer.parameters())
        return out


def _dense_rows(layer: DenseLayer, x: Tensor) -> Tensor:
    """Apply a dense layer to every row of (T, in) at once."""
    t = x.shape[0]
    ones_col = tt.ones((t, 1))
    bias_mat = ones_col @ tt.reshape(layer.bias, (1, layer.bias.shape[0]))
    from .layers import _activate
    return _activate(x @ layer.weight + bias_mat, layer.activation)


class PersistenceModel:
    """Repeats the last observed target value; no learnable state."""

    kind = "persistence"

    def __init__(self, cfg: ModelConfig, n_weather: int = 0,
                 target_bounds: tuple[float, float] = (0.0, 1.0), seed: int = 0):
        self.cfg = cfg
        self.n_weather = n_weather

    def forward(self, window: SampleWindow) -> Tensor:
        return Tensor(persistence_forecast(window, self.cfg.horizon))

    def parameters(self):
        return []


def persistence_forecast(window: SampleWindow, horizon: int | None = None) -> np.ndarray:
    if horizon is None:
        horizon = window.tau
    return np.full(horizon, window.last_observed())


MODEL_KINDS = {
    "distnet": DistNetModel,
    "mlp": MLPModel,
    "local_seq2seq": LocalSeq2SeqModel,
    "neighbor_seq2seq": NeighborSeq2SeqModel,
    "persistence": PersistenceModel,
}


def create_model(kind: str, cfg: ModelConfig, n_weather: int,
                 target_bounds: tuple[float, float], seed: int):
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}")
    return MODEL_KINDS[kind](cfg, n_weather, target_bounds, seed)


def predict(model, window: SampleWindow) -> np.ndarray:
    """Original-scale prediction, floored at zero for reporting."""
    return np.maximum(model.forward(window).data, 0.0)


def grad_check_model(model, window: SampleWindow, loss_fn,
                     h: float | None = None,
                     max_components: int | None = None,
                     seed: int = 0) -> dict[str, float]:
    """Central-difference check of every parameter group's gradient.

    ``loss_fn(model, window)`` must return a scalar Tensor. Returns the
    max relative error per parameter name; diagnostic only. With
    ``max_components`` set, a seeded subsample of each parameter's entries
    is probed instead of all of them.
    """
    rng = np.random.default_rng(seed)
    params = model.parameters()
    for _, p in params:
        p.zero_grad()
    tt.backward(loss_fn(model, window))
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params}
    errors = {}
    for name, p in params:
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_components is not None and flat.size > max_components:
            idx = rng.choice(flat.size, size=max_components, replace=False)
        worst = 0.0
        for i in idx:
            step = h if h is not None else 6e-6 * max(abs(flat[i]), 1.0)
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn(model, window).item()
            flat[i] = orig - step
            down = loss_fn(model, window).item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
        errors[name] = worst
    return errors


def save_model(path, model, norm_bounds: dict, pollutant: str, seed: int) -> None:
    meta = {
        "kind": model.kind,
        "config": model.cfg.to_dict(),
        "n_weather": model.n_weather,
        "pollutant": pollutant,
        "norm_bounds": norm_bounds,
        "seed": seed,
    }
    save_checkpoint(path, dict(model.parameters()), meta)


def load_model(path):
    """Rebuild a model from a checkpoint; returns (model, meta)."""
    params, meta = load_checkpoint(path)
    cfg = ModelConfig.from_dict(meta["config"])
    bounds = tuple(meta["norm_bounds"][meta["pollutant"]])
    model = create_model(meta["kind"], cfg, meta["n_weather"], bounds, meta["seed"])
    own = dict(model.parameters())
    if set(own) != set(params):
        raise ConfigError("checkpoint parameters do not match the model layout")
    for name, tensor in own.items():
        if tuple(tensor.shape) != tuple(params[name].shape):
            raise ConfigError(f"checkpoint shape mismatch for {name}")
        tensor.data[:] = params[name]
    return model, meta
