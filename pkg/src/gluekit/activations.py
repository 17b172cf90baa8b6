"""Pointwise activations with derivatives, shared by the network lab and theory."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Activation", "get_activation", "RELU", "TANH", "IDENTITY", "CENTERED_RELU"]

# E[max(G,0)] for standard normal G; subtracted by the centered variant
_RELU_MEAN = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class Activation:
    name: str
    fn: callable
    deriv: callable

    def __call__(self, x):
        return self.fn(x)


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_deriv(x):
    # subgradient at 0 taken as 0
    return (x > 0).astype(np.float64)


RELU = Activation("relu", _relu, _relu_deriv)
TANH = Activation("tanh", np.tanh, lambda x: 1.0 - np.tanh(x) ** 2)
IDENTITY = Activation("identity", lambda x: np.asarray(x, dtype=np.float64), lambda x: np.ones_like(np.asarray(x, dtype=np.float64)))
CENTERED_RELU = Activation("centered_relu", lambda x: np.maximum(x, 0.0) - _RELU_MEAN, _relu_deriv)

_REGISTRY = {a.name: a for a in (RELU, TANH, IDENTITY, CENTERED_RELU)}


def get_activation(name) -> Activation:
    if isinstance(name, Activation):
        return name
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; known: {sorted(_REGISTRY)}") from None
