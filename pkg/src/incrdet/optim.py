"""SGD with momentum, weight decay and per-group learning rates.

Parameters are partitioned into named groups, each with its own learning
rate and frozen flag.  The update for a non-frozen group is

    v <- momentum * v + g + weight_decay * theta
    theta <- theta - lr_group * v

with the decay term skipped for parameters listed in ``no_decay``
(biases).  Frozen groups are left completely untouched, velocities
included.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MissingGradientError(KeyError):
    """A non-frozen parameter received no gradient."""


@dataclass
class OptimizerConfig:
    momentum: float = 0.9
    weight_decay: float = 4e-5

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class ParamGroup:
    """Named set of parameters sharing one learning rate.

    ``params`` maps full parameter paths to the live arrays (updates are
    in place, so the owning model sees them).  ``velocity`` is lazily
    created with matching shapes.
    """

    name: str
    params: dict
    lr: float | None = None
    frozen: bool = False
    no_decay: frozenset = frozenset()
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.frozen:
            if self.lr is None or self.lr < 0:
                raise ValueError(f"group '{self.name}': non-frozen groups need lr >= 0")
        for pname, arr in self.params.items():
            self.velocity.setdefault(pname, np.zeros_like(arr))


def sgd_step(groups, grads, config: OptimizerConfig):
    """Apply one SGD update in place; returns the groups for chaining."""
    for group in groups:
        if group.frozen:
            continue
        for pname, theta in group.params.items():
            if pname not in grads:
                raise MissingGradientError(
                    f"no gradient for non-frozen parameter '{pname}' in group '{group.name}'")
            g = grads[pname]
            if g.shape != theta.shape:
                raise ValueError(
                    f"gradient shape {g.shape} != parameter shape {theta.shape} for '{pname}'")
            v = group.velocity[pname]
            v *= config.momentum
            v += g
            if config.weight_decay != 0.0 and pname not in group.no_decay:
                v += config.weight_decay * theta
            theta -= group.lr * v
    return groups
