"""Central finite-difference checking of analytic backward passes.

The check projects the operator output onto a fixed random direction R so the
loss is scalar: L = sum(out * R). Analytic gradients come from the module's
backward; numeric ones from central differences of L. The reported error per
tensor is max|analytic - numeric| normalized by the largest gradient magnitude
across the whole unit, so tensors whose true gradient is identically zero
(e.g. through batch norm's mean subtraction) do not turn finite-difference
noise into a spurious ratio.

Checks run in double precision; callers construct modules with dtype=float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import Stream


@dataclass
class GradcheckReport:
    unit: str
    tolerance: float
    errors: dict = field(default_factory=dict)  # tensor name -> max rel error

    @property
    def max_rel_err(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def worst(self) -> str:
        if not self.errors:
            return "no tensors checked"
        name = max(self.errors, key=self.errors.get)
        return f"{name}: {self.errors[name]:.3e}"


def randomize_params(module, seed: int = 11):
    """Move every parameter to a generic point so the check does not sit on
    ReLU kinks or max ties (zero-initialized biases would)."""
    for p in module.params():
        p.value[...] = Stream(seed, "gradcheck." + p.name).uniform(
            p.value.shape, -0.6, 0.6)
        if p.name.endswith(".gamma"):
            p.value += 1.0


def _tensor_err(analytic, numeric, global_scale):
    return float(np.abs(analytic - numeric).max(initial=0.0) / global_scale)


def check_module(unit, module, x, eps=1e-4, tol=1e-5, train=True, seed=7,
                 check_input=True):
    """Finite-difference check of a Module's backward over its params and input.

    The module must be built in float64; BN running stats are snapshotted and
    restored around every forward so the loss stays a pure function.
    """
    if x.dtype != np.float64:
        raise ValueError("gradcheck requires double-precision inputs")
    state = module.state_tensors()
    saved = {k: v.copy() for k, v in state.items()}

    def loss():
        for k, v in saved.items():
            state[k][...] = v
        out = module.forward(x, train=train)
        return out

    out = loss()
    r = Stream(seed, unit).uniform(out.shape, -1.0, 1.0)
    module.zero_grad()
    gx = module.backward(r)

    report = GradcheckReport(unit=unit, tolerance=tol)
    targets = [(p.name, p.value, p.grad) for p in module.params()]
    if check_input:
        targets.append(("input", x, gx))
    numerics = []
    for name, value, analytic in targets:
        numeric = np.empty_like(value)
        flat_v = value.reshape(-1)
        flat_n = numeric.reshape(-1)
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + eps
            lp = float((loss() * r).sum())
            flat_v[i] = orig - eps
            lm = float((loss() * r).sum())
            flat_v[i] = orig
            flat_n[i] = (lp - lm) / (2 * eps)
        numerics.append(numeric)
    scale = max(max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
                for (_, _, a), n in zip(targets, numerics))
    scale = max(scale, 1e-12)
    for (name, _, analytic), numeric in zip(targets, numerics):
        report.errors[name] = _tensor_err(analytic, numeric, scale)
    return report


def check_fn(unit, fn, inputs, eps=1e-4, tol=1e-6, seed=7):
    """Finite-difference check of a pure function ``fn(*arrays) -> (out, grads)``
    where grads has one entry per input (None allowed to skip)."""
    inputs = [np.asarray(a, dtype=np.float64) for a in inputs]
    out, _ = fn(*inputs)
    r = Stream(seed, unit).uniform(np.shape(out), -1.0, 1.0)

    def loss():
        o, _ = fn(*inputs)
        return float((o * r).sum())

    _, analytic = fn(*inputs, grad_dir=r)
    report = GradcheckReport(unit=unit, tolerance=tol)
    pairs = []
    for k, (value, ana) in enumerate(zip(inputs, analytic)):
        if ana is None:
            continue
        numeric = np.empty_like(value)
        flat_v = value.reshape(-1)
        flat_n = numeric.reshape(-1)
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + eps
            lp = loss()
            flat_v[i] = orig - eps
            lm = loss()
            flat_v[i] = orig
            flat_n[i] = (lp - lm) / (2 * eps)
        pairs.append((f"arg{k}", ana, numeric))
    scale = max((max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
                 for _, a, n in pairs), default=0.0)
    scale = max(scale, 1e-12)
    for name, ana, numeric in pairs:
        report.errors[name] = _tensor_err(ana, numeric, scale)
    return report
