"""Residual network as explicit time stepping.

A network with n residual layers maps a (bands, H, W) field to a
(num_classes, H, W) score field:

    y_0 = L x                      lift, 1x1 linear
    y_j = y_{j-1} - h * f(K_j y_{j-1})   j = 1..n, residual steps
    out = P y_n                    project, 1x1 linear

where K_j y denotes same-size zero-padded convolution and f is a pointwise
activation. The trace of states y_0..y_n is kept for the multiplier sweep.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor_ops import (
    ACTIVATION_KINDS,
    activate,
    as_field,
    as_kernel_stack,
    conv2d,
    read_ftf,
    write_ftf,
)


@dataclass(frozen=True)
class NetworkParams:
    """All trainable kernels plus the step size and activation kind.

    lift: (width, bands, 1, 1), layers: n stacks (width, width, kh, kw),
    project: (num_classes, width, 1, 1).
    """

    lift: np.ndarray
    layers: tuple[np.ndarray, ...]
    project: np.ndarray
    h: float = 1.0
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "lift", as_kernel_stack(self.lift))
        object.__setattr__(self, "layers",
                           tuple(as_kernel_stack(k) for k in self.layers))
        object.__setattr__(self, "project", as_kernel_stack(self.project))
        width = self.lift.shape[0]
        if self.lift.shape[2:] != (1, 1):
            raise ValueError("lift must be a 1x1 kernel stack")
        if self.project.shape[2:] != (1, 1):
            raise ValueError("project must be a 1x1 kernel stack")
        if self.project.shape[1] != width:
            raise ValueError("project input channels must match width")
        if self.project.shape[0] < 2:
            raise ValueError("need at least 2 output classes")
        for j, k in enumerate(self.layers):
            if k.shape[0] != width or k.shape[1] != width:
                raise ValueError(f"layer {j} must map width {width} to itself, "
                                 f"got {k.shape}")
        if self.activation not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not np.isfinite(self.h):
            raise ValueError("step size h must be finite")

    @property
    def bands(self) -> int:
        return self.lift.shape[1]

    @property
    def width(self) -> int:
        return self.lift.shape[0]

    @property
    def num_classes(self) -> int:
        return self.project.shape[0]


@dataclass(frozen=True)
class ForwardTrace:
    """Everything the backward sweep needs: the params that produced it,
    the input, all states y_0..y_n, and the projected output. preacts
    caches each K_j y_{j-1} so the backward sweep need not redo them."""

    params: NetworkParams
    data: np.ndarray
    states: tuple[np.ndarray, ...]
    preacts: tuple[np.ndarray, ...]
    output: np.ndarray


def _check_finite(field: np.ndarray, where: str):
    if not np.all(np.isfinite(field)):
        raise FloatingPointError(f"nonfinite values after {where}")


def forward(params: NetworkParams, data: np.ndarray) -> ForwardTrace:
    """Run the network on a (bands, H, W) field, keeping all states."""
    data = as_field(data)
    if data.shape[0] != params.bands:
        raise ValueError(f"data has {data.shape[0]} bands, "
                         f"network expects {params.bands}")
    y = conv2d(data, params.lift)
    _check_finite(y, "lift")
    states = [y]
    preacts = []
    for j, k in enumerate(params.layers):
        z = conv2d(y, k)
        y = y - params.h * activate(z, params.activation)
        _check_finite(y, f"layer {j}")
        states.append(y)
        preacts.append(z)
    output = conv2d(y, params.project)
    _check_finite(output, "project")
    return ForwardTrace(params=params, data=data, states=tuple(states),
                        preacts=tuple(preacts), output=output)


def predict_classes(output: np.ndarray) -> np.ndarray:
    """Argmax over the channel axis, (C, H, W) -> (H, W) int64."""
    return np.argmax(output, axis=0)


@dataclass(frozen=True)
class SelectionSet:
    """Labeled pixel positions (row, col) with their class ids, no duplicates."""

    rows: np.ndarray
    cols: np.ndarray
    classes: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        classes = np.asarray(self.classes, dtype=np.int64)
        if not (rows.shape == cols.shape == classes.shape) or rows.ndim != 1:
            raise ValueError("rows, cols, classes must be equal-length 1-d")
        if len({(int(r), int(c)) for r, c in zip(rows, cols)}) != rows.shape[0]:
            raise ValueError("duplicate labeled pixel")
        if rows.shape[0] and classes.min() < 0:
            raise ValueError("negative class id")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "classes", classes)

    @property
    def entries(self) -> list[tuple[int, int, int]]:
        return [(int(r), int(c), int(k))
                for r, c, k in zip(self.rows, self.cols, self.classes)]

    def __len__(self) -> int:
        return self.rows.shape[0]


def _check_bounds(field: np.ndarray, sel: SelectionSet):
    _, height, width = field.shape
    if len(sel) and (sel.rows.min() < 0 or sel.rows.max() >= height
                     or sel.cols.min() < 0 or sel.cols.max() >= width):
        raise IndexError("selection outside field bounds")


def select(field: np.ndarray, sel: SelectionSet) -> list[tuple[np.ndarray, int]]:
    """Read out the selected pixels as (channel column, class_id) pairs."""
    _check_bounds(field, sel)
    gathered = field[:, sel.rows, sel.cols]
    return [(gathered[:, i], int(sel.classes[i])) for i in range(len(sel))]


def select_matrix(field: np.ndarray, sel: SelectionSet) -> np.ndarray:
    """Selected pixels as one (C, n) matrix, column order matching entries."""
    _check_bounds(field, sel)
    return field[:, sel.rows, sel.cols]


def scatter_into(field: np.ndarray, sel: SelectionSet, values: np.ndarray):
    """Adjoint of select_matrix: add (C, n) columns at the selected pixels."""
    field[:, sel.rows, sel.cols] += values


_MANIFEST_KEYS = ("width", "num_classes", "h", "activation", "n", "bands")


def save_params(directory, params: NetworkParams):
    """Write kernels as one field file each plus a key=value manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"width={params.width}", f"num_classes={params.num_classes}",
             f"h={repr(params.h)}", f"activation={params.activation}",
             f"n={len(params.layers)}", f"bands={params.bands}"]
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")

    def write_stack(name: str, stack: np.ndarray):
        o, i, kh, kw = stack.shape
        write_ftf(directory / name, stack.reshape(o * i, kh, kw))

    write_stack("lift.ftf", params.lift)
    for j, k in enumerate(params.layers):
        write_stack(f"layer_{j:03d}.ftf", k)
    write_stack("project.ftf", params.project)


def load_params(directory) -> NetworkParams:
    directory = Path(directory)
    manifest: dict[str, str] = {}
    for line in (directory / "manifest.txt").read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        manifest[key] = value
    missing = [k for k in _MANIFEST_KEYS if k not in manifest]
    if missing:
        raise ValueError(f"manifest missing keys {missing}")
    bands = int(manifest["bands"])
    width = int(manifest["width"])
    num_classes = int(manifest["num_classes"])
    steps = int(manifest["n"])

    def read_stack(name: str, o: int, i: int) -> np.ndarray:
        flat = read_ftf(directory / name)
        if flat.shape[0] != o * i:
            raise ValueError(f"{name}: expected {o * i} kernels, got {flat.shape[0]}")
        return flat.reshape(o, i, flat.shape[1], flat.shape[2])

    return NetworkParams(
        lift=read_stack("lift.ftf", width, bands),
        layers=tuple(read_stack(f"layer_{j:03d}.ftf", width, width)
                     for j in range(steps)),
        project=read_stack("project.ftf", num_classes, width),
        h=float(manifest["h"]),
        activation=manifest["activation"],
    )
