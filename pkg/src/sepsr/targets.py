"""Built-in benchmark targets and target resolution for the CLI.

Each builtin carries its analytic expression, domain box, the ground-truth
variable partition, and the sample layout used for full-data fitting.

Angle conventions: all trigonometric evaluation is in radians. The flat-plate
heat-flux target (`eq1`) is specified over an angle range of 1..10 degrees;
the catalog converts that range to radians once, here, so the runtime box and
all sampled angle values are radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .expr import Expr, eval_batch, parse_infix
from .sampling import DomainBox, SampleSet, grid_sample, lhs_sample


@dataclass(frozen=True)
class BuiltinTarget:
    name: str
    infix: str
    box: DomainBox
    true_blocks: tuple[tuple[int, ...], ...]   # 0-based; single tuple => non-separable
    operator_class: str                        # "times" | "plus_minus" | "none"
    grid_counts: tuple[int, ...]
    description: str

    @property
    def n(self) -> int:
        return self.box.n

    @property
    def expression(self) -> Expr:
        return parse_infix(self.infix, self.n)

    def oracle(self):
        """Vectorized evaluator (N, n) -> (N,); invalid points come back nan."""
        e = self.expression

        def f(points: np.ndarray) -> np.ndarray:
            values, valid = eval_batch(e, np.atleast_2d(points))
            out = np.where(valid, values, np.nan)
            return out

        return f

    def default_data(self, mode: str = "grid", n_points: int | None = None,
                     seed: int = 0) -> SampleSet:
        if mode == "grid":
            ss = grid_sample(self.box, self.grid_counts)
        elif mode == "lhs":
            if n_points is None:
                n_points = int(np.prod(self.grid_counts))
            ss = lhs_sample(self.box, n_points, seed)
        else:
            raise InputError(f"unknown sample mode {mode!r}")
        return ss.with_values(self.oracle()(ss.points))


_DEG = math.pi / 180.0

BUILTIN_TARGETS: dict[str, BuiltinTarget] = {}


def _register(t: BuiltinTarget):
    BUILTIN_TARGETS[t.name] = t


_register(BuiltinTarget(
    name="eq1",
    infix="2.274*sin(x1)*sqrt(cos(x1))/sqrt(x2)",
    box=DomainBox((1.0 * _DEG, 1000.0), (10.0 * _DEG, 10000.0)),
    true_blocks=((0,), (1,)),
    operator_class="times",
    grid_counts=(10, 10),
    description="flat-plate heat-flux coefficient: angle (radians) and Reynolds number",
))

_register(BuiltinTarget(
    name="eq2",
    infix="0.000183*x1^2*x1*sqrt(x2/x3)*(1.0 - x4/x5)",
    box=DomainBox((500.0, 1e-4, 0.01, 1e4, 1e5), (1000.0, 1e-3, 0.1, 5e4, 1e6)),
    true_blocks=((0,), (1,), (2,), (3, 4)),
    operator_class="times",
    grid_counts=(6, 10, 10, 5, 10),
    description="stagnation-point heat flux: velocity, density, nose radius, wall/total enthalpy",
))

_register(BuiltinTarget(
    name="eq3",
    infix="0.8 + 0.6*(x1^2 + cos(x1)) + sin(x2 + x3)*(x2 - x3)",
    box=DomainBox((-3.0, -3.0, -3.0), (3.0, 3.0, 3.0)),
    true_blocks=((0,), (1, 2)),
    operator_class="plus_minus",
    grid_counts=(10, 10, 10),
    description="additive toy target: one single-variable block plus one pair block",
))

_register(BuiltinTarget(
    name="eq4",
    infix="0.8 + 0.6*(x1^2 + cos(x1)) - sin(x2 + x3)*(x2 - x3)",
    box=DomainBox((-3.0, -3.0, -3.0), (3.0, 3.0, 3.0)),
    true_blocks=((0,), (1, 2)),
    operator_class="plus_minus",
    grid_counts=(10, 10, 10),
    description="subtractive variant of eq3",
))

_register(BuiltinTarget(
    name="eq5",
    infix="0.8 + 0.6*(x1^2 + cos(x1))*sin(x2 + x3)*(x2 - x3)",
    box=DomainBox((-3.0, -3.0, -3.0), (3.0, 3.0, 3.0)),
    true_blocks=((0,), (1, 2)),
    operator_class="times",
    grid_counts=(10, 10, 10),
    description="multiplicative variant of eq3 with an additive offset",
))

_register(BuiltinTarget(
    name="nonsep3",
    infix="sin(x1 + x2 + x3)",
    box=DomainBox((-3.0, -3.0, -3.0), (3.0, 3.0, 3.0)),
    true_blocks=((0, 1, 2),),
    operator_class="none",
    grid_counts=(10, 10, 10),
    description="non-separable control target",
))


def get_builtin(name: str) -> BuiltinTarget:
    try:
        return BUILTIN_TARGETS[name]
    except KeyError:
        known = ", ".join(sorted(BUILTIN_TARGETS))
        raise InputError(f"unknown builtin target {name!r}; known: {known}") from None
