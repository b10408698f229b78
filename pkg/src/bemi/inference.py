"""Exact integer forward pass, output decoding and MILP consistency checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from bemi.core import ClassEncoding, WeightAssignment, var_name
from bemi.errors import InvalidArgument


def sign(pre: np.ndarray) -> np.ndarray:
    """Activation: +1 where the pre-activation is >= 0, else -1."""
    return np.where(pre >= 0, 1, -1).astype(np.int64)


def _as_batch(W: WeightAssignment, X) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != W.arch.n_inputs:
        raise InvalidArgument(f"inputs of shape {X.shape} do not match {W.arch.n_inputs} input neurons")
    if not np.issubdtype(X.dtype, np.integer):
        X = X.astype(np.float64)
    return X


def preactivations(W: WeightAssignment, X) -> list[np.ndarray]:
    """Pre-activation sums of every layer for a batch of inputs.

    Element ``l - 1`` of the result has shape ``(batch, n_l)``.
    """
    z = _as_batch(W, X)
    pres = []
    for mat in W.layers:
        pre = z @ mat
        pres.append(pre)
        z = sign(pre)
    return pres


def predict_bits(W: WeightAssignment, X) -> np.ndarray:
    return sign(preactivations(W, X)[-1])


@dataclass(frozen=True)
class ActivationTrace:
    weights: WeightAssignment
    activations: tuple[np.ndarray, ...]  # z_0 = x, then z_1 .. z_L
    pre: tuple[np.ndarray, ...]  # layers 1 .. L

    @property
    def output(self) -> tuple[int, ...]:
        return tuple(int(b) for b in self.activations[-1])


def forward(W: WeightAssignment, x) -> tuple[tuple[int, ...], ActivationTrace]:
    x = np.asarray(x)
    if x.ndim != 1:
        raise InvalidArgument("forward expects a single feature vector")
    pres = [p[0] for p in preactivations(W, x)]
    acts = (x,) + tuple(sign(p) for p in pres)
    trace = ActivationTrace(W, acts, tuple(pres))
    return trace.output, trace


def decode(bits: Sequence[int], enc: ClassEncoding):
    return enc.decode(bits)


def classify(W: WeightAssignment, X, enc: ClassEncoding) -> list:
    return [enc.decode(row) for row in predict_bits(W, X)]


def verify_against_milp(trace: ActivationTrace, incumbent: Mapping[str, float], sample_id: int) -> bool:
    """Check the incumbent's ``u`` and ``c`` values for one sample against a forward pass.

    Layer-1 products are compared with a relative tolerance of 1e-6 since they
    are continuous in the model; all other values must match exactly after rounding.
    """
    W = trace.weights
    L = W.arch.depth
    for layer in range(1, L + 1):
        z_prev = trace.activations[layer - 1]
        mat = W.layers[layer - 1]
        n_in, n_out = mat.shape
        for j in range(n_out):
            if layer < L:
                name = var_name("u", (sample_id, layer, j))
                if name not in incumbent:
                    raise InvalidArgument(f"incumbent has no value for {name}")
                u = 1 if trace.activations[layer][j] > 0 else 0
                if round(incumbent[name]) != u:
                    return False
            for i in range(n_in):
                name = var_name("c", (sample_id, layer, i, j))
                if name not in incumbent:
                    raise InvalidArgument(f"incumbent has no value for {name}")
                expected = z_prev[i] * mat[i, j]
                got = incumbent[name]
                if layer == 1:
                    if abs(got - expected) > 1e-6 * max(1.0, abs(expected)):
                        return False
                elif round(got) != expected:
                    return False
    return True


# bit-packed evaluation for P = 1 --------------------------------------------


def _pack(signs: np.ndarray) -> np.ndarray:
    """Pack rows of +-1 values into uint8 bit rows (bit set means +1)."""
    return np.packbits(signs > 0, axis=-1)


def _popcount(a: np.ndarray) -> np.ndarray:
    return np.unpackbits(a, axis=-1).sum(axis=-1, dtype=np.int64)


def predict_bits_packed(W: WeightAssignment, X) -> np.ndarray:
    """Same result as :func:`predict_bits` for ``P = 1`` nets, hidden layers via popcounts."""
    if W.arch.weight_bound != 1:
        raise InvalidArgument("packed evaluation needs weights in {-1, 0, 1}")
    z = sign(_as_batch(W, X) @ W.layers[0])
    for mat in W.layers[1:]:
        zp = _pack(z)  # (batch, bytes)
        plus = _pack((mat > 0).T.astype(np.int64) * 2 - 1)  # (n_out, bytes)
        minus = _pack((mat < 0).T.astype(np.int64) * 2 - 1)
        # z_i * w_ij is +1 when the signs agree on a nonzero link, -1 when they disagree
        zb = zp[:, None, :]
        agree = _popcount(zb & plus[None]) + _popcount(~zb & minus[None])
        disagree = _popcount(~zb & plus[None]) + _popcount(zb & minus[None])
        z = sign(agree - disagree)
    return z
