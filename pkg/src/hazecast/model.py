"""Encoder-decoder forecasters over station graphs, with ablation variants.

The full model couples a per-timestep graph layer (attention message passing
with dynamic edge attributes) to a GRU in the encoder, and a GRU plus
history attention to a prediction head in the decoder.  The ablation
variants are configuration points of the same assembly:

======== ============== =========================
variant  attention      graph mode
======== ============== =========================
agnn_gru yes            edge-attrs (directed)
gnn_gru  no             edge-attrs (directed)
wgc_gru  no             inverse-distance weights
gc_gru   no             binary weights, mean aggregation
gru      no             none
======== ============== =========================

The decoder runs autoregressively on its own previous output (starting from
the encoder's final per-step prediction) and never reads node or edge
attributes from the forecast period; only the calendar/location embeddings
are available there.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, concat, no_grad, stack
from .container import load_arrays, save_arrays
from .errors import DataError, UsageError
from .geo import StationNetwork, baseline_weights
from .layers import (
    GraphLayout,
    GruCell,
    LuongAttention,
    Mlp,
    ScalarGraphConv,
    SpaceTimeEmbedding,
    TransformerConv,
)

CHECKPOINT_VERSION = 1

#: variant name -> (use_attention, graph_mode)
VARIANTS = {
    "agnn_gru": (True, "edge-attrs"),
    "gnn_gru": (False, "edge-attrs"),
    "wgc_gru": (False, "inverse-distance"),
    "gc_gru": (False, "binary"),
    "gru": (False, "none"),
}

GRAPH_MODES = ("edge-attrs", "inverse-distance", "binary", "none")


@dataclass
class ModelConfig:
    """Architecture settings; ``use_attention``/``graph_mode`` default from the variant."""

    variant: str
    hidden: int
    history_steps: int
    forecast_steps: int
    node_dim: int
    embed_dim: int = 8
    edge_dim: int = 5
    use_attention: bool | None = None
    graph_mode: str | None = None
    use_bias: bool = True
    gnn_out: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise UsageError(f"unknown variant {self.variant!r}; expected one of {sorted(VARIANTS)}")
        default_attn, default_graph = VARIANTS[self.variant]
        if self.use_attention is None:
            self.use_attention = default_attn
        if self.graph_mode is None:
            self.graph_mode = default_graph
        if self.graph_mode not in GRAPH_MODES:
            raise UsageError(f"unknown graph mode {self.graph_mode!r}")
        if self.gnn_out is None:
            self.gnn_out = self.hidden
        if self.hidden <= 0 or self.history_steps <= 0 or self.forecast_steps <= 0:
            raise UsageError("hidden, history_steps and forecast_steps must be positive")

    @property
    def spacetime_dim(self) -> int:
        return 4 * self.embed_dim

    @property
    def point_dim(self) -> int:
        """Per-node encoder input: attributes + spacetime embedding + target."""
        return self.node_dim + self.spacetime_dim + 1

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class WindowSample:
    """One training/evaluation window.

    Node attributes, history targets and edge attributes span the history
    period only; the calendar/location features span history + forecast.
    ``y_future`` may be absent for pure forecasting.
    """

    x: np.ndarray                     # (H, L, node_dim)
    y_hist: np.ndarray                # (H, L)
    spacetime: np.ndarray             # (H+F, 3) int: hour, dow, month
    coords: np.ndarray                # (L, 2) latitude, longitude
    y_future: np.ndarray | None = None        # (F, L)
    edge_feats: np.ndarray | None = None      # (H, E, edge_dim)
    timestamps_future: np.ndarray | None = None  # (F,) datetime64

    @property
    def history_steps(self) -> int:
        return int(self.x.shape[0])

    @property
    def forecast_steps(self) -> int:
        return int(self.spacetime.shape[0] - self.x.shape[0])

    @property
    def n_stations(self) -> int:
        return int(self.coords.shape[0])

    def validate(self) -> None:
        h, f, n = self.history_steps, self.forecast_steps, self.n_stations
        if h <= 0 or f <= 0:
            raise ValueError(f"window needs positive history/forecast lengths, got H={h}, F={f}")
        if self.x.shape[:2] != (h, n) or self.y_hist.shape != (h, n):
            raise ValueError("inconsistent history shapes in window")
        if self.y_future is not None and self.y_future.shape != (f, n):
            raise ValueError("inconsistent forecast target shape in window")
        if self.spacetime.shape != (h + f, 3):
            raise ValueError("spacetime features must cover history + forecast")
        for name, arr in (("x", self.x), ("y_hist", self.y_hist),
                          ("y_future", self.y_future), ("edge_feats", self.edge_feats)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in window field {name}")
        if self.edge_feats is not None and self.edge_feats.shape[0] != h:
            raise ValueError("edge attributes must span exactly the history period")


class Forecaster:
    """A parameterized variant, ready for forward evaluation and training."""

    def __init__(self, config: ModelConfig, network: StationNetwork | None = None, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)

        if config.graph_mode != "none":
            if network is None:
                raise UsageError(f"graph mode {config.graph_mode!r} needs a station network")
            self.layout = GraphLayout(network.edges, network.n_stations)
            if config.graph_mode == "binary":
                deg = self.layout.in_degree[self.layout.dst]
                self.edge_coef = 1.0 / np.maximum(deg, 1.0)
            elif config.graph_mode == "inverse-distance":
                self.edge_coef = baseline_weights(network, "inverse-distance")
            else:
                self.edge_coef = None
        else:
            self.layout = None
            self.edge_coef = None

        bias = config.use_bias
        p = config.point_dim
        self.embed = SpaceTimeEmbedding(rng, config.embed_dim, bias=bias, name="embed")
        if config.graph_mode == "edge-attrs":
            self.conv = TransformerConv(rng, p, config.gnn_out, config.edge_dim,
                                        key_dim=config.gnn_out, bias=bias, name="encoder.conv")
        elif config.graph_mode in ("binary", "inverse-distance"):
            self.conv = ScalarGraphConv(rng, p, config.gnn_out, bias=bias, name="encoder.conv")
        else:
            self.conv = None
        enc_in = p + (config.gnn_out if self.conv is not None else 0)
        self.encoder_gru = GruCell(rng, enc_in, config.hidden, bias=bias, name="encoder.gru")
        self.encoder_head = Mlp(rng, config.hidden, config.hidden, bias=bias, name="encoder.head")
        self.decoder_gru = GruCell(rng, config.spacetime_dim + 1, config.hidden,
                                   bias=bias, name="decoder.gru")
        self.attention = (LuongAttention(rng, config.hidden, bias=bias, name="decoder.attention")
                          if config.use_attention else None)
        self.decoder_head = Mlp(rng, config.hidden, config.hidden, bias=bias, name="decoder.head")

        self.params: dict[str, Tensor] = {}
        for part in (self.embed, self.conv, self.encoder_gru, self.encoder_head,
                     self.decoder_gru, self.attention, self.decoder_head):
            if part is None:
                continue
            for name, tensor in part.params():
                if name in self.params:
                    raise RuntimeError(f"duplicate parameter name {name}")
                self.params[name] = tensor

    # -- parameter accounting ------------------------------------------------

    def parameter_count(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def graph_parameter_count(self) -> int:
        return int(sum(t.data.size for n, t in self.params.items() if n.startswith("encoder.conv")))

    def attention_parameter_count(self) -> int:
        return int(sum(t.data.size for n, t in self.params.items() if n.startswith("decoder.attention")))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    # -- single steps ------------------------------------------------------

    def _graph_features(self, p: Tensor, edge_feats: Tensor | None) -> Tensor:
        if self.config.graph_mode == "edge-attrs":
            if edge_feats is None:
                raise ValueError("edge attributes required for graph mode 'edge-attrs'")
            return self.conv(p, self.layout, edge_feats)
        return self.conv(p, self.layout, self.edge_coef)

    def encoder_step(self, p: Tensor, edge_feats: Tensor | None, h_prev: Tensor):
        """One history step: graph features, recurrence, per-step prediction."""
        if self.conv is not None:
            gru_in = concat([p, self._graph_features(p, edge_feats)], axis=1)
        else:
            gru_in = p
        h = self.encoder_gru.step(h_prev, gru_in)
        return h, self.encoder_head(h)

    def decoder_step(self, xbar: Tensor, prev_y: Tensor, h_prev: Tensor, history: list[Tensor]):
        """One forecast step from the previous prediction and calendar features."""
        h = self.decoder_gru.step(h_prev, concat([xbar, prev_y], axis=1))
        if self.attention is not None:
            if not history:
                raise ValueError("attention decoder needs a non-empty encoder history")
            out = self.attention(history, h)
        else:
            out = h
        return h, self.decoder_head(out)

    # -- full unroll -----------------------------------------------------------

    def forward(self, sample: WindowSample, return_encoder_preds: bool = False):
        """Predictions for the forecast period, shape (F, L), on the tape.

        The encoder consumes node attributes, embeddings and history targets
        step by step; the decoder then feeds back its own outputs.  Inputs
        from the forecast period other than the calendar/location features
        are never read.
        """
        cfg = self.config
        sample.validate()
        h_steps, f_steps, n = sample.history_steps, sample.forecast_steps, sample.n_stations
        if h_steps != cfg.history_steps or f_steps != cfg.forecast_steps:
            raise ValueError(
                f"window spans H={h_steps}, F={f_steps}; model expects "
                f"H={cfg.history_steps}, F={cfg.forecast_steps}")
        if sample.x.shape[2] != cfg.node_dim:
            raise ValueError(f"window has {sample.x.shape[2]} node attributes, model expects {cfg.node_dim}")
        if cfg.graph_mode == "edge-attrs":
            if sample.edge_feats is None:
                raise ValueError("graph mode 'edge-attrs' needs per-step edge attributes")
            if sample.edge_feats.shape[1] != self.layout.n_edges:
                raise ValueError("edge attribute frame does not match the network edge count")

        xbar = [self.embed(int(hh), int(dw), int(mo), sample.coords)
                for hh, dw, mo in sample.spacetime]

        h = Tensor(np.zeros((n, cfg.hidden)))
        history: list[Tensor] = []
        enc_preds: list[Tensor] = []
        for t in range(h_steps):
            p = concat([Tensor(sample.x[t]), xbar[t], Tensor(sample.y_hist[t].reshape(n, 1))], axis=1)
            if self.conv is not None:
                feats = Tensor(sample.edge_feats[t]) if cfg.graph_mode == "edge-attrs" else None
                gru_in = concat([p, self._graph_features(p, feats)], axis=1)
            else:
                gru_in = p
            h = self.encoder_gru.step(h, gru_in)
            history.append(h)
            if return_encoder_preds:
                enc_preds.append(self.encoder_head(h))
        # the decoder starts from the encoder's final per-step prediction
        prev = enc_preds[-1] if return_encoder_preds else self.encoder_head(h)

        dec_h = h
        outs: list[Tensor] = []
        for t in range(h_steps, h_steps + f_steps):
            dec_h, prev = self.decoder_step(xbar[t], prev, dec_h, history)
            outs.append(prev.reshape(n))
        preds = stack(outs, axis=0)
        if return_encoder_preds:
            return preds, stack([e.reshape(n) for e in enc_preds], axis=0)
        return preds

    def predict(self, sample: WindowSample) -> np.ndarray:
        """Forward pass without recording gradients; returns an (F, L) array."""
        with no_grad():
            return self.forward(sample).data

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        arrays = {name: t.data for name, t in self.params.items()}
        meta = {
            "kind": "hazecast-checkpoint",
            "checkpoint_version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash(),
        }
        save_arrays(path, arrays, meta)

    @classmethod
    def load(cls, path, network: StationNetwork | None = None) -> "Forecaster":
        arrays, meta = load_arrays(path)
        if meta.get("kind") != "hazecast-checkpoint":
            raise DataError(f"{path}: not a model checkpoint")
        if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {meta.get('checkpoint_version')}")
        config = ModelConfig(**meta["config"])
        model = cls(config, network=network, seed=0)
        missing = set(model.params) - set(arrays)
        extra = set(arrays) - set(model.params)
        if missing or extra:
            raise DataError(f"{path}: parameter mismatch (missing {sorted(missing)}, extra {sorted(extra)})")
        for name, tensor in model.params.items():
            if arrays[name].shape != tensor.data.shape:
                raise DataError(f"{path}: parameter {name} has shape {arrays[name].shape}, "
                                f"expected {tensor.data.shape}")
            tensor.data[...] = arrays[name]
        return model


def build_variant(config: ModelConfig, network: StationNetwork | None = None, seed: int = 0) -> Forecaster:
    """Construct a parameterized model for the configured variant."""
    return Forecaster(config, network=network, seed=seed)
