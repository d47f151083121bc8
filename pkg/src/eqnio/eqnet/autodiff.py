"""A small reverse-mode tape.

Each recorded node holds its output :class:`Var`, the parent vars and a
closure mapping the output cotangent to one cotangent per parent (``None``
for parents that take no gradient).  Layers register coarse nodes with
hand-written VJPs, so the tape stays short even for a full network.
"""

from __future__ import annotations

import numpy as np


class Var:
    __slots__ = ("value", "grad", "needs_grad")

    def __init__(self, value, needs_grad=False):
        self.value = value
        self.grad = None
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(shape={self.shape}, needs_grad={self.needs_grad})"


class Tape:
    """Records operations; ``record=False`` gives a plain forward pass."""

    def __init__(self, record: bool = True):
        self.record = record
        self._nodes = []

    def var(self, value) -> Var:
        return Var(value, needs_grad=self.record)

    def const(self, value) -> Var:
        return Var(value, needs_grad=False)

    def apply(self, value, parents, vjp) -> Var:
        needs = self.record and any(p.needs_grad for p in parents)
        out = Var(value, needs_grad=needs)
        if needs:
            self._nodes.append(((out,), tuple(parents), vjp, False))
        return out

    def apply_multi(self, values, parents, vjp) -> tuple:
        """Node with several outputs; ``vjp`` receives a tuple of cotangents."""
        needs = self.record and any(p.needs_grad for p in parents)
        outs = tuple(Var(v, needs_grad=needs) for v in values)
        if needs:
            self._nodes.append((outs, tuple(parents), vjp, True))
        return outs

    def op(self, fwd, vjp, *parents, **kw) -> Var:
        """Run ``fwd(*values, **kw) -> (out, cache)`` and record ``vjp(cache, g)``."""
        out, cache = fwd(*[p.value for p in parents], **kw)
        return self.apply(out, parents, lambda g: vjp(cache, g))

    def backward(self, out: Var, seed=None):
        if not out.needs_grad:
            return
        out.grad = np.ones_like(out.value) if seed is None else np.asarray(seed, dtype=np.result_type(out.value))
        for outs, parents, vjp, multi in reversed(self._nodes):
            if all(o.grad is None for o in outs):
                continue
            if multi:
                grads = vjp(tuple(np.zeros_like(o.value) if o.grad is None else o.grad for o in outs))
            else:
                grads = vjp(outs[0].grad)
            for p, g in zip(parents, grads):
                if g is None or not p.needs_grad:
                    continue
                p.grad = g if p.grad is None else p.grad + g
        self._nodes.clear()

    def __len__(self):
        return len(self._nodes)
