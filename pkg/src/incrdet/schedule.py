"""Finetuning schedules: per-component learning rates, staged unfreezing
and the triangular cyclical learning rate.

A :class:`SchedulePlan` is an ordered list of stages.  Each stage names
the active (trainable) components with their base learning rates plus a
cyclical-LR window; everything not named stays frozen.  Across stages
the active set may only grow (unfreezing never re-freezes).

The cyclical multiplier composes multiplicatively with the per-component
bases: at every iteration a component trains at

    lr = base_component * clr(iter) / clr_base

so the ratio between any two active components is constant over a stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .optim import ParamGroup

SCHEDULE_FORMAT_VERSION = 1

# Component paths recognized for the stock two-domain detector. Models may
# register more heads; validation uses the model's actual components.
KNOWN_COMPONENTS = ("backbone", "fpn", "rpn", "head.S", "head.T")


@dataclass(frozen=True)
class ComponentLR:
    """An active component and its base learning rate for one stage."""

    component: str
    base_lr: float

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"component '{self.component}': base lr must be > 0")


@dataclass(frozen=True)
class StagePlan:
    """One unfreezing stage: who trains, at what rates, for how long.

    ``clr_step_size`` of None means "use the trainer default", two
    epochs' worth of iterations.
    """

    epochs: int
    components: tuple
    clr_base: float
    clr_max: float
    clr_step_size: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"stage epochs must be >= 1, got {self.epochs}")
        if not self.components:
            raise ValueError("a stage must have at least one active component")
        names = [c.component for c in self.components]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate components in stage: {names}")
        if self.clr_base > self.clr_max:
            raise ValueError(f"clr_base {self.clr_base} > clr_max {self.clr_max}")
        if self.clr_base <= 0:
            raise ValueError("clr_base must be > 0")
        if self.clr_step_size is not None and self.clr_step_size < 1:
            raise ValueError("clr step size must be >= 1")

    @property
    def active_components(self) -> frozenset:
        return frozenset(c.component for c in self.components)

    def component_lr(self, name: str) -> ComponentLR:
        for c in self.components:
            if c.component == name:
                return c
        raise KeyError(name)


@dataclass(frozen=True)
class SchedulePlan:
    """Ordered stages with a monotonically non-shrinking active set."""

    stages: tuple

    def __post_init__(self):
        if not self.stages:
            raise ValueError("a plan needs at least one stage")
        previous: frozenset = frozenset()
        for k, stage in enumerate(self.stages):
            active = stage.active_components
            if not previous <= active:
                refrozen = sorted(previous - active)
                raise ValueError(
                    f"stage {k} re-freezes previously active components {refrozen}; "
                    "unfreezing must never shrink")
            previous = active

    def __len__(self):
        return len(self.stages)


def triangular_clr(iteration: int, base_lr: float, max_lr: float, step_size: int) -> float:
    """Triangular cyclical learning rate.

    Rises linearly from base_lr to max_lr over ``step_size`` iterations,
    falls back over the next ``step_size``, and repeats exactly with
    period 2 * step_size.
    """
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    if base_lr > max_lr:
        raise ValueError(f"base_lr {base_lr} > max_lr {max_lr}")
    if step_size < 1:
        raise ValueError(f"step_size must be >= 1, got {step_size}")
    cycle = (1 + iteration // (2 * step_size))
    x = abs(iteration / step_size - 2 * cycle + 1)
    return base_lr + (max_lr - base_lr) * max(0.0, 1.0 - x)


def scaled_group_lr(global_lr: float, component: ComponentLR, stage: StagePlan) -> float:
    """Per-component learning rate under the shared cyclical multiplier.

    ``global_lr`` is the stage's triangular CLR value at the current
    iteration; each component scales it by base / clr_base so component
    ratios are preserved at every iteration.
    """
    if component.component not in stage.active_components:
        raise ValueError(f"component '{component.component}' is frozen in this stage")
    return component.base_lr * (global_lr / stage.clr_base)


def build_param_groups(model, stage: StagePlan):
    """Partition a model's parameters into optimizer groups for a stage.

    Every model component becomes exactly one group; components named in
    the stage are trainable at their base LR, the rest are frozen.
    Unknown component paths in the stage are a hard error listing the
    valid ones.
    """
    component_params = model.component_params()
    no_decay = model.component_no_decay()
    valid = sorted(component_params)
    for comp in stage.components:
        if comp.component not in component_params:
            raise ValueError(
                f"unknown component '{comp.component}'; valid components: {valid}")
    groups = []
    for name in valid:
        params = component_params[name]
        if name in stage.active_components:
            comp = stage.component_lr(name)
            groups.append(ParamGroup(name=name, params=params, lr=comp.base_lr,
                                     frozen=False, no_decay=frozenset(no_decay[name])))
        else:
            groups.append(ParamGroup(name=name, params=params, lr=None,
                                     frozen=True, no_decay=frozenset(no_decay[name])))
    return groups


@dataclass
class ScheduleState:
    """Mutable cursor over a plan, owned by the training loop."""

    stage_index: int = 0
    epochs_done_in_stage: int = 0
    clr_iteration: int = 0


def advance(plan: SchedulePlan, state: ScheduleState):
    """Move to the next stage once the current one has run its epochs.

    Returns the next StagePlan, or None when the plan is exhausted.  The
    CLR iteration counter resets at each stage boundary; newly unfrozen
    groups start with zero velocity because groups are rebuilt per stage.
    """
    if state.stage_index >= len(plan.stages):
        return None
    current = plan.stages[state.stage_index]
    if state.epochs_done_in_stage < current.epochs:
        return current
    state.stage_index += 1
    state.epochs_done_in_stage = 0
    state.clr_iteration = 0
    if state.stage_index >= len(plan.stages):
        return None
    return plan.stages[state.stage_index]


def plan_to_dict(plan: SchedulePlan) -> dict:
    return {
        "format_version": SCHEDULE_FORMAT_VERSION,
        "stages": [
            {
                "epochs": s.epochs,
                "components": [
                    {"component": c.component, "lr": c.base_lr} for c in s.components
                ],
                "clr": {
                    "base_lr": s.clr_base,
                    "max_lr": s.clr_max,
                    "step_size_iters": s.clr_step_size,
                },
            }
            for s in plan.stages
        ],
    }


def plan_from_dict(data: dict) -> SchedulePlan:
    version = data.get("format_version", SCHEDULE_FORMAT_VERSION)
    if version != SCHEDULE_FORMAT_VERSION:
        raise ValueError(f"unsupported schedule format_version {version!r}")
    stages = []
    for raw in data["stages"]:
        clr = raw["clr"]
        stages.append(StagePlan(
            epochs=int(raw["epochs"]),
            components=tuple(
                ComponentLR(c["component"], float(c["lr"])) for c in raw["components"]),
            clr_base=float(clr["base_lr"]),
            clr_max=float(clr["max_lr"]),
            clr_step_size=(None if clr.get("step_size_iters") is None
                           else int(clr["step_size_iters"])),
        ))
    return SchedulePlan(stages=tuple(stages))


def plan_to_json(plan: SchedulePlan) -> str:
    return json.dumps(plan_to_dict(plan), indent=1, sort_keys=True)


def plan_from_json(text: str) -> SchedulePlan:
    return plan_from_dict(json.loads(text))


def _stage(epochs, components, clr_base, clr_max):
    return StagePlan(
        epochs=epochs,
        components=tuple(ComponentLR(n, lr) for n, lr in components),
        clr_base=clr_base,
        clr_max=clr_max,
    )


def table3_presets(target_head: str = "head.T") -> dict:
    """The four shipped adaptation schedules, keyed by preset name.

    Each preset starts with a head-only stage and then (rows 2-4)
    progressively unfreezes shared components at lower rates, with the
    row's cyclical-LR window applied in the unfreeze stage.  The control
    preset unfreezes everything at once at a uniform constant rate, as a
    forgetting baseline.
    """
    head = target_head
    return {
        "table3_row1": SchedulePlan(stages=(
            _stage(5, [(head, 1e-3)], 1e-3, 6e-3),
        )),
        "table3_row2": SchedulePlan(stages=(
            _stage(5, [(head, 1e-3)], 1e-3, 6e-3),
            _stage(4, [(head, 1e-3), ("rpn", 1e-4)], 1e-4, 6e-4),
        )),
        "table3_row3": SchedulePlan(stages=(
            _stage(5, [(head, 1e-3)], 1e-3, 6e-3),
            _stage(2, [(head, 1e-3), ("rpn", 1e-4)], 1e-4, 6e-3),
        )),
        "table3_row4": SchedulePlan(stages=(
            _stage(5, [(head, 1e-3)], 1e-3, 6e-3),
            _stage(5, [(head, 1e-3), ("rpn", 4e-4), ("fpn", 2e-4)], 1e-4, 6e-3),
        )),
        "control_full_unfreeze": SchedulePlan(stages=(
            _stage(10, [(head, 1e-3), ("rpn", 1e-3), ("fpn", 1e-3), ("backbone", 1e-3)],
                   1e-3, 1e-3),
        )),
    }


def preset(name: str, target_head: str = "head.T") -> SchedulePlan:
    presets = table3_presets(target_head)
    if name not in presets:
        raise KeyError(f"unknown preset '{name}'; available: {sorted(presets)}")
    return presets[name]
