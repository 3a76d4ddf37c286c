"""Linear layers evaluated on flat residue vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..planner import SlotParams, plan_dot, plan_offline, plan_online_len
from ..ring import ConvShape, conv_ref, dot_ref, flatten_kernel, im2col


@dataclass
class LinearOp:
    kind: str                           # conv | dot
    weight: np.ndarray                  # (C_o, C_i, H_f, W_f) or (n_o, n_i)
    shape: ConvShape | None = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.int64)
        if self.kind == "conv":
            if self.shape is None:
                raise ValueError("conv op needs a shape")
            want = (self.shape.C_o, self.shape.C_i, self.shape.H_f, self.shape.W_f)
            if self.weight.shape != want:
                raise ValueError(f"kernel shape {self.weight.shape} != {want}")
        elif self.kind == "dot":
            if self.weight.ndim != 2:
                raise ValueError("dot weight must be a matrix")
        else:
            raise ValueError(f"unknown linear kind {self.kind!r}")

    @classmethod
    def conv(cls, k, shape: ConvShape) -> "LinearOp":
        return cls("conv", k, shape)

    @classmethod
    def dot(cls, w) -> "LinearOp":
        return cls("dot", w)

    @property
    def in_len(self) -> int:
        return self.shape.in_len if self.kind == "conv" else self.weight.shape[1]

    @property
    def out_len(self) -> int:
        return self.shape.out_len if self.kind == "conv" else self.weight.shape[0]

    @property
    def in_dims(self) -> tuple:
        if self.kind == "conv":
            return (self.shape.C_i, self.shape.H_i, self.shape.W_i)
        return (self.in_len,)

    @property
    def out_dims(self) -> tuple:
        if self.kind == "conv":
            return (self.shape.C_o,) + self.shape.out_hw
        return (self.out_len,)

    def apply(self, x, p) -> np.ndarray:
        """Flat output of the layer on a flat input."""
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        if x.size != self.in_len:
            raise ValueError(f"input has {x.size} values, layer expects {self.in_len}")
        if self.kind == "conv":
            return conv_ref(x.reshape(self.in_dims), self.weight, self.shape, p).reshape(-1)
        return dot_ref(self.weight, x, p)

    def online_plan(self, params: SlotParams):
        return plan_online_len(self.in_len, params, self.shape)

    def offline_plan(self, params: SlotParams):
        if self.kind == "conv":
            return plan_offline(self.shape, params)
        return plan_dot(self.in_len, self.out_len, params)

    def table(self) -> np.ndarray:
        """Coefficient table used by the server's offline evaluation."""
        return flatten_kernel(self.weight, self.shape) if self.kind == "conv" else self.weight

    def lowered(self, r0) -> np.ndarray:
        """What the client packs offline: im2col(r0) for conv, r0 itself for dot."""
        r0 = np.asarray(r0, dtype=np.int64).reshape(-1)
        if self.kind == "conv":
            return im2col(r0.reshape(self.in_dims), self.shape)
        return r0
