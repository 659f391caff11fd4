"""Tiny parameter-container base class.

Modules hold Tensors (parameters) and sub-modules as attributes; parameter
discovery walks attributes in definition order so checkpoint files are
stable. ``train()``/``eval()`` toggles batch-norm behaviour.
"""

from __future__ import annotations

from .errors import DataError
from .tensor import Tensor


class Module:
    def __init__(self):
        self.training = True

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            if key == "training":
                continue
            name = f"{prefix}{key}" if prefix else key
            yield from _walk(name, value)

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def train(self):
        self._set_mode(True)
        return self

    def eval(self):
        self._set_mode(False)
        return self

    def _set_mode(self, training: bool):
        self.training = training
        for _, value in vars(self).items():
            for m in _submodules(value):
                m._set_mode(training)

    def state(self):
        """Parameters plus non-trainable buffers (batch-norm running stats)."""
        out = list(self.named_parameters())
        out.extend(self.named_buffers())
        return out

    def named_buffers(self, prefix: str = ""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}" if prefix else key
            yield from _walk_buffers(name, value)

    def load_state(self, named_tensors):
        current = dict(self.state())
        for name, tensor in named_tensors:
            if name not in current:
                raise DataError(f"checkpoint entry {name!r} not in model")
            dst = current[name]
            if dst.shape != tensor.shape:
                raise DataError(
                    f"checkpoint entry {name!r} has shape {tensor.shape}, "
                    f"model expects {dst.shape}")
            dst.data[...] = tensor.data


def _submodules(value):
    if isinstance(value, Module):
        yield value
    elif isinstance(value, (list, tuple)):
        for v in value:
            yield from _submodules(v)


def _walk(name, value):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(f"{name}.{i}", v)


def _walk_buffers(name, value):
    if isinstance(value, Tensor):
        if not value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_buffers(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk_buffers(f"{name}.{i}", v)
