"""Multi-layer models: config loading, local share ops, and queue-driven runs."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..planner import SlotParams, model_batch_size
from ..ring import (ConvShape, ShapeError, batchnorm_ref, mulmod, read_tensor, relu_ref,
                    sumpool_ref)
from ..transport import CLIENT, SERVER, FrameType, Transcript, pack_residues, unpack_residues
from .linear import LinearOp
from .parties import BlockSpec
from .session import LayerShareState, Session, SessionConfig

LINEAR = ("conv", "dot")
LOCAL = ("sumpool", "batchnorm")


@dataclass
class LayerConfig:
    type: str                           # conv | dot | sumpool | batchnorm
    shape: tuple | None = None          # conv: (H_i, C_i, f_h, C_o)
    stride: int = 1
    padding: str = "same"
    n_o: int | None = None              # dot output length
    relu: bool = True                   # ReLU on the layer input (linear layers)
    window: int | None = None           # sumpool
    scale: list | None = None           # batchnorm, per channel residues
    shift: list | None = None
    name: str = ""

    def __post_init__(self):
        if self.type not in LINEAR + LOCAL:
            raise ValueError(f"unknown layer type {self.type!r}")
        if self.type == "conv" and (self.shape is None or len(self.shape) != 4):
            raise ValueError("conv layer needs shape H_i,C_i,f_h,C_o")
        if self.type == "dot" and not self.n_o:
            raise ValueError("dot layer needs n_o")
        if self.type == "sumpool" and not self.window:
            raise ValueError("sumpool layer needs a window")


@dataclass
class ModelConfig:
    name: str
    input: tuple                        # (C, H, W)
    layers: list
    chained: bool = True                # False: independent blocks, analytic use only
    weight_seed: int = 0
    weight_range: int = 4               # weights drawn from [-r, r]

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        layers = []
        for i, raw in enumerate(d["layers"]):
            raw = dict(raw)
            if raw.get("shape") is not None:
                raw["shape"] = tuple(int(v) for v in raw["shape"])
            raw.setdefault("name", f"{raw['type']}{i}")
            layers.append(LayerConfig(**raw))
        return cls(d.get("name", "model"), tuple(d["input"]), layers, d.get("chained", True),
                   d.get("weight_seed", 0), d.get("weight_range", 4))

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def blocks(self) -> list[LayerConfig]:
        return [l for l in self.layers if l.type in LINEAR]


def builtin_config(name: str) -> Path:
    path = Path(__file__).resolve().parent.parent / "data" / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"no built-in model config {name!r}")
    return path


def conv_shape(layer: LayerConfig) -> ConvShape:
    H_i, C_i, f_h, C_o = layer.shape
    return ConvShape.from_tuple(H_i, C_i, f_h, C_o, layer.stride, layer.padding)


# -- local linear maps on shares ---------------------------------------------

def local_dims(layer: LayerConfig, dims: tuple) -> tuple:
    if layer.type == "sumpool":
        c, h, w = dims
        if h % layer.window or w % layer.window:
            raise ShapeError(f"pool window {layer.window} does not tile {h}x{w}")
        return (c, h // layer.window, w // layer.window)
    return dims


def apply_local_plain(layer: LayerConfig, x: np.ndarray, dims: tuple, p: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64).reshape(dims)
    if layer.type == "sumpool":
        return sumpool_ref(x, layer.window, p).reshape(-1)
    return batchnorm_ref(x, _bn(layer.scale, dims[0]), _bn(layer.shift, dims[0]), p).reshape(-1)


def apply_linear_local(state: LayerShareState, layer: LayerConfig, dims: tuple,
                       p: int) -> LayerShareState:
    """Each party maps its own share; a batchnorm shift is added by the server only."""
    x0, x1 = {}, {}
    for i in state.x0:
        a = np.asarray(state.x0[i], dtype=np.int64).reshape(dims)
        b = np.asarray(state.x1[i], dtype=np.int64).reshape(dims)
        if layer.type == "sumpool":
            x0[i] = sumpool_ref(a, layer.window, p).reshape(-1)
            x1[i] = sumpool_ref(b, layer.window, p).reshape(-1)
        else:
            scale = _bn(layer.scale, dims[0]).reshape(-1, 1, 1)
            x0[i] = mulmod(a, scale, p).reshape(-1)
            x1[i] = batchnorm_ref(b, scale.reshape(-1), _bn(layer.shift, dims[0]), p).reshape(-1)
    return LayerShareState(x0, x1)


def _bn(v, channels: int) -> np.ndarray:
    v = np.asarray(v if v is not None else [0], dtype=np.int64).reshape(-1)
    if v.size == 1:
        v = np.repeat(v, channels)
    if v.size != channels:
        raise ShapeError(f"batchnorm needs {channels} per-channel values, got {v.size}")
    return v


# -- building ops ---------------------------------------------------------------

@dataclass
class BuiltModel:
    cfg: ModelConfig
    p: int
    steps: list = field(default_factory=list)   # (layer, LinearOp | None, in_dims, out_dims)

    def oracle(self, x) -> np.ndarray:
        """Plaintext composition of every layer."""
        v = np.asarray(x, dtype=np.int64).reshape(-1)
        for layer, op, dims, _ in self.steps:
            if op is None:
                v = apply_local_plain(layer, v, dims, self.p)
                continue
            if layer.relu:
                v = relu_ref(v, self.p)
            v = op.apply(v, self.p)
        return v

    def linear_plans(self, params: SlotParams) -> list:
        return [op.online_plan(params) for _, op, _, _ in self.steps if op is not None]


def build_model(cfg: ModelConfig, p: int) -> BuiltModel:
    """Instantiate weights (random residues from ``weight_seed``) and check dims chain."""
    rng = np.random.default_rng(cfg.weight_seed)
    r = cfg.weight_range
    model = BuiltModel(cfg, p)
    dims = tuple(cfg.input)
    for layer in cfg.layers:
        if layer.type == "conv":
            sh = conv_shape(layer)
            if cfg.chained and (sh.C_i, sh.H_i, sh.W_i) != tuple(dims):
                raise ShapeError(f"layer {layer.name}: input {dims} does not match {sh.label()}")
            k = rng.integers(-r, r + 1, size=(sh.C_o, sh.C_i, sh.H_f, sh.W_f)) % p
            op = LinearOp.conv(k, sh)
        elif layer.type == "dot":
            n_i = int(np.prod(dims))
            op = LinearOp.dot(rng.integers(-r, r + 1, size=(layer.n_o, n_i)) % p)
        else:
            out = local_dims(layer, dims)
            model.steps.append((layer, None, dims, out))
            dims = out
            continue
        model.steps.append((layer, op, op.in_dims, op.out_dims))
        dims = op.out_dims
    return model


# -- queues ---------------------------------------------------------------------

@dataclass
class QueueItem:
    id: object
    x: np.ndarray
    prior: bool = False


def load_queue(path, input_dims: tuple, p: int, seed: int = 0) -> list[QueueItem]:
    """Queue file: JSON list of {"id", "path" (tensor fixture) | "seed", "prior"}."""
    base = Path(path).parent
    items = []
    for k, raw in enumerate(json.loads(Path(path).read_text())):
        if raw.get("path"):
            x, q = read_tensor(base / raw["path"])
            if q != p:
                raise ValueError(f"fixture modulus {q} differs from session modulus {p}")
        else:
            rng = np.random.default_rng(raw.get("seed", seed + k))
            x = rng.integers(0, p, size=input_dims, dtype=np.int64)
        items.append(QueueItem(raw.get("id", k), np.asarray(x).reshape(-1), bool(raw.get("prior"))))
    return items


def random_queue(n_inqueue: int, n_prior: int, input_dims: tuple, p: int,
                 seed: int = 0, small: int | None = None) -> list[QueueItem]:
    """Random queue; ``small`` bounds values to [-small, small] (signed)."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_inqueue + n_prior):
        if small is None:
            x = rng.integers(0, p, size=input_dims, dtype=np.int64)
        else:
            x = rng.integers(-small, small + 1, size=input_dims) % p
        out.append(QueueItem(k if k < n_inqueue else f"P{k - n_inqueue}", x.reshape(-1),
                             k >= n_inqueue))
    return out


# -- runs -----------------------------------------------------------------------

@dataclass
class LayerReport:
    name: str
    type: str
    fallback_online: bool
    fallback_offline: bool
    bytes: dict                 # category -> bytes
    rounds: dict                # "online/prior" etc. -> rounds
    he: dict                    # "op/phase/kind" -> count

    @property
    def fallback(self) -> bool:
        return self.fallback_online or self.fallback_offline

    def prior_he_total(self) -> int:
        return sum(v for k, v in self.he.items() if k.endswith("/prior"))


@dataclass
class ModelResult:
    outputs: dict               # id -> reconstructed output (client side)
    layers: list
    session: Session

    def totals(self) -> dict:
        out: dict = {}
        for rep in self.layers:
            for k, v in rep.he.items():
                out[k] = out.get(k, 0) + v
        return out


def _delta(after: dict, before: dict) -> dict:
    return {k: v - before.get(k, 0) for k, v in after.items() if v - before.get(k, 0)}


def run_model(model: BuiltModel, queue: list[QueueItem], cfg: SessionConfig | None = None,
              session: Session | None = None) -> ModelResult:
    """Run every layer over the queue; priors ride in-queue tails where possible."""
    if not model.cfg.chained:
        raise ValueError(f"model {model.cfg.name!r} lists independent blocks; use the analytic summary")
    sess = session or Session(cfg)
    p = sess.p
    batch = [it.id for it in queue if not it.prior]
    priors = [it.id for it in queue if it.prior]
    # the client starts with the whole input; the server's share is zero
    state = LayerShareState({it.id: it.x.copy() for it in queue},
                            {it.id: np.zeros_like(it.x) for it in queue})
    reports = []
    for layer, op, dims, _ in model.steps:
        m0, b0 = sess.meter.snapshot(), sess.transcript.by_category()
        n0 = len(sess.transcript.entries)
        if op is None:
            state = apply_linear_local(state, layer, dims, p)
            fb_on = fb_off = False
        else:
            spec = BlockSpec(op, relu=layer.relu, name=layer.name)
            state = sess.run_block(spec, batch, priors, state.x0, state.x1)
            rep = sess.reports[-1]
            fb_on, fb_off = bool(rep.fallback_online), bool(rep.fallback_offline)
        tr = sess.transcript
        part = Transcript(entries=tr.entries[n0:])
        rounds = {c: part.rounds(c) for c in ("online/prior", "online/inqueue", "online/common_drelu")}
        rounds = {c: r for c, r in rounds.items() if r}
        reports.append(LayerReport(layer.name, layer.type, fb_on, fb_off,
                                   _delta(tr.by_category(), b0), rounds,
                                   _delta(sess.meter.snapshot(), m0)))
    outputs = {}
    for it in queue:
        # the server reveals its final share to the client, who reconstructs
        cat = "output/prior" if it.prior else "output/inqueue"
        sess.link.send(SERVER, FrameType.PLAIN, pack_residues(state.x1[it.id]), cat)
        x1 = unpack_residues(sess.link.recv(CLIENT, FrameType.PLAIN).payload)
        outputs[it.id] = (state.x0[it.id] + x1) % p
    return ModelResult(outputs, reports, sess)


# -- analytic summary for configs too large to execute ----------------------------

def model_summary(cfg: ModelConfig, params: SlotParams) -> list[dict]:
    """Per linear layer: plans, recycling, and the prior's added online bytes."""
    rows = []
    plans = []
    dims = tuple(cfg.input)
    for layer in cfg.layers:
        if layer.type == "conv":
            sh = conv_shape(layer)
            op = LinearOp("conv", np.zeros((sh.C_o, sh.C_i, sh.H_f, sh.W_f), np.int64), sh)
        elif layer.type == "dot":
            n_i = int(np.prod(dims))
            op = LinearOp("dot", np.zeros((layer.n_o, n_i), np.int64))
        else:
            dims = local_dims(layer, dims) if cfg.chained else dims
            continue
        on, off = op.online_plan(params), op.offline_plan(params)
        plans.append(on)
        rows.append({"layer": layer.name, "type": layer.type,
                     "shape": op.shape.label() if op.kind == "conv" else f"{op.in_len}->{op.out_len}",
                     "s_hat": on.s_hat, "online_bsize": on.per_prior_batch or 1,
                     "offline_bsize": off.per_prior_batch or 1,
                     "fallback_online": not on.recycles, "fallback_offline": not off.recycles,
                     "prior_online_bytes": 8 * op.out_len})
        dims = op.out_dims
    mb = model_batch_size(plans) if plans else None
    for r in rows:
        r["model_bsize"] = mb.batch_size if mb is not None else None
    return rows
