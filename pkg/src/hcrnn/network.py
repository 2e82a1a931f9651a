"""Layered networks of HCR neurons.

Variables live on levels ``0..L``; level 0 holds the raw inputs and level L
the raw outputs.  Each neuron of layer ``l`` joins some variables of level
``l`` (its inputs) with one variable of level ``l + 1`` (its output) in a
joint density model whose last variable is the output.  Connections carry no
direction: the same models are queried forward (output given inputs) or
backward (inputs given output).

Value propagation passes conditional means and re-normalizes them at hidden
levels with quantile maps frozen after fitting, since conditional means are
less dispersed than the variables they estimate.  Density propagation passes
moment vectors, which are already on the variables' own scale.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import make_basis
from .density import FORMAT_VERSION, JointDensityModel, estimate
from .normalize import Normalizer, fit_normalizer
from .propagate import MomentVector, conditional_density, predict_moments

# keeps propagated means strictly inside (0, 1) before inverse normalization
EDGE = 1e-12


class UndefinedHiddenValues(ValueError):
    pass


@dataclass(eq=False)
class Neuron:
    inputs: tuple[int, ...]
    output: int
    model: JointDensityModel | None = None

    @property
    def dim(self) -> int:
        return len(self.inputs) + 1


@dataclass(eq=False)
class Layer:
    """Neurons mapping level ``l`` to level ``l + 1``, with shared settings.

    ``moments`` is the moment-vector degree carried to the next level in
    density propagation (defaults to ``degree``); ``renormalize`` controls the
    quantile re-normalization of propagated means at the next level.
    """

    neurons: list[Neuron]
    degree: int = 4
    scheme: str = "pairwise"
    moments: int | None = None
    renormalize: bool = True

    @property
    def carry_degree(self) -> int:
        return self.degree if self.moments is None else min(self.moments, self.degree)


@dataclass(eq=False)
class HcrNetwork:
    sizes: list[int]
    layers: list[Layer]
    normalizers: list[Normalizer | None] = field(default_factory=list)
    forward_renorm: list[Normalizer | None] = field(default_factory=list)
    backward_renorm: list[Normalizer | None] = field(default_factory=list)

    def __post_init__(self):
        levels = len(self.sizes)
        if levels < 2 or len(self.layers) != levels - 1:
            raise ValueError("need one layer between each pair of consecutive levels")
        for l, layer in enumerate(self.layers):
            outputs = sorted(nrn.output for nrn in layer.neurons)
            if outputs != list(range(self.sizes[l + 1])):
                raise ValueError(f"layer {l} must have exactly one neuron per level-{l + 1} variable")
            for nrn in layer.neurons:
                if not nrn.inputs or len(set(nrn.inputs)) != len(nrn.inputs):
                    raise ValueError(f"layer {l} neuron {nrn.output}: inputs must be distinct and non-empty")
                if min(nrn.inputs) < 0 or max(nrn.inputs) >= self.sizes[l]:
                    raise ValueError(f"layer {l} neuron {nrn.output}: input index out of range")
                if nrn.model is not None and nrn.model.dim != nrn.dim:
                    raise ValueError(f"layer {l} neuron {nrn.output}: model dimension must be fan-in + 1")
            layer.neurons.sort(key=lambda nrn: nrn.output)
        for name in ("normalizers", "forward_renorm", "backward_renorm"):
            if not getattr(self, name):
                setattr(self, name, [None] * levels)
            elif len(getattr(self, name)) != levels:
                raise ValueError(f"{name} needs one entry per level")

    @classmethod
    def dense(cls, sizes, degree: int = 4, scheme: str = "pairwise", moments: int | None = None,
              renormalize: bool = True) -> "HcrNetwork":
        """Fully connected network: every neuron sees the whole previous level."""
        sizes = [int(s) for s in sizes]
        if any(s < 1 for s in sizes):
            raise ValueError("level sizes must be positive")
        layers = [
            Layer([Neuron(tuple(range(sizes[l])), k) for k in range(sizes[l + 1])], degree, scheme, moments,
                  renormalize)
            for l in range(len(sizes) - 1)
        ]
        return cls(sizes, layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def fitted(self) -> bool:
        return all(nrn.model is not None for layer in self.layers for nrn in layer.neurons)

    def checksum(self) -> str:
        """SHA-256 over every neuron's coefficients, in wiring order."""
        h = hashlib.sha256()
        for layer in self.layers:
            for nrn in layer.neurons:
                if nrn.model is not None:
                    h.update(np.ascontiguousarray(nrn.model.coeffs).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        def norm_doc(nz):
            return None if nz is None else nz.to_list()

        return {
            "format_version": FORMAT_VERSION,
            "sizes": list(self.sizes),
            "layers": [
                {
                    "degree": layer.degree,
                    "scheme": layer.scheme,
                    "moments": layer.moments,
                    "renormalize": layer.renormalize,
                    "neurons": [
                        {
                            "inputs": list(nrn.inputs),
                            "output": nrn.output,
                            "model": None if nrn.model is None else nrn.model.to_dict(),
                        }
                        for nrn in layer.neurons
                    ],
                }
                for layer in self.layers
            ],
            "normalizers": [norm_doc(nz) for nz in self.normalizers],
            "forward_renorm": [norm_doc(nz) for nz in self.forward_renorm],
            "backward_renorm": [norm_doc(nz) for nz in self.backward_renorm],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "HcrNetwork":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported network format_version {doc.get('format_version')}")

        def load_norm(d):
            return None if d is None else Normalizer.from_list(d)

        layers = [
            Layer(
                [
                    Neuron(tuple(n["inputs"]), int(n["output"]),
                           None if n["model"] is None else JointDensityModel.from_dict(n["model"]))
                    for n in ld["neurons"]
                ],
                int(ld["degree"]),
                ld["scheme"],
                ld.get("moments"),
                bool(ld.get("renormalize", True)),
            )
            for ld in doc["layers"]
        ]
        return cls(
            list(doc["sizes"]),
            layers,
            [load_norm(d) for d in doc["normalizers"]],
            [load_norm(d) for d in doc["forward_renorm"]],
            [load_norm(d) for d in doc["backward_renorm"]],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "HcrNetwork":
        return cls.from_dict(json.loads(text))


def _layer_forward(layer: Layer, u: np.ndarray, size_out: int) -> np.ndarray:
    """Conditional means of every output variable given level values ``u``."""
    out = np.empty((u.shape[0], size_out))
    for nrn in layer.neurons:
        ev = np.column_stack([u[:, list(nrn.inputs)], np.full(u.shape[0], np.nan)])
        c = predict_moments(nrn.model, ev, nrn.dim - 1)
        out[:, nrn.output] = c[:, 1]
    return np.clip(0.5 + out / np.sqrt(12.0), 0.0, 1.0)


def _layer_backward(layer: Layer, u: np.ndarray, size_in: int) -> np.ndarray:
    """Means of level-``l`` variables given level ``l + 1``, averaging over neurons."""
    n = u.shape[0]
    total = np.zeros((n, size_in))
    count = np.zeros(size_in)
    for nrn in layer.neurons:
        ev = np.full((n, nrn.dim), np.nan)
        ev[:, -1] = u[:, nrn.output]
        for pos, var in enumerate(nrn.inputs):
            c = predict_moments(nrn.model, ev, pos)
            total[:, var] += c[:, 1]
            count[var] += 1
    c1 = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    return np.clip(0.5 + c1 / np.sqrt(12.0), 0.0, 1.0)


def _renormalize(nz: Normalizer | None, p: np.ndarray, enabled: bool) -> np.ndarray:
    if enabled and nz is not None:
        return nz.transform(p)
    return np.clip(p, EDGE, 1.0 - EDGE)


def _sweep(net: HcrNetwork, u: np.ndarray, direction: str, fit_renorm: bool = False):
    """Propagate normalized values; returns the raw conditional means at the far level."""
    last = net.depth
    if direction == "forward":
        for l, layer in enumerate(net.layers):
            p = _layer_forward(layer, u, net.sizes[l + 1])
            if l + 1 == last:
                return p
            if fit_renorm:
                net.forward_renorm[l + 1] = fit_normalizer(p, "empirical")
            u = _renormalize(net.forward_renorm[l + 1], p, layer.renormalize)
    elif direction == "backward":
        for l in range(last - 1, -1, -1):
            layer = net.layers[l]
            p = _layer_backward(layer, u, net.sizes[l])
            if l == 0:
                return p
            if fit_renorm:
                net.backward_renorm[l] = fit_normalizer(p, "empirical")
            u = _renormalize(net.backward_renorm[l], p, layer.renormalize)
    else:
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    raise AssertionError("unreachable")


def fit_direct(net: HcrNetwork, inputs, outputs, hidden=None, kind: str = "empirical") -> HcrNetwork:
    """Estimate every neuron directly from values on all levels.

    ``inputs`` and ``outputs`` are raw matrices for levels 0 and L; ``hidden``
    lists one matrix per intermediate level (e.g. layers from
    :func:`hcrnn.ibtrain.ib_train`).  Returns a new fitted network; the frozen
    inter-level quantile maps are fitted on the propagated training inputs.
    """
    inputs = np.asarray(inputs, dtype=float)
    outputs = np.asarray(outputs, dtype=float)
    inputs = inputs.reshape(-1, 1) if inputs.ndim == 1 else inputs
    outputs = outputs.reshape(-1, 1) if outputs.ndim == 1 else outputs
    hidden = [] if hidden is None else [np.asarray(h, dtype=float).reshape(len(h), -1) for h in hidden]
    if len(hidden) != net.depth - 1:
        raise UndefinedHiddenValues(
            f"network has {net.depth - 1} hidden level(s) but {len(hidden)} were supplied; "
            "train hidden values with hcrnn.ibtrain.ib_train or pass them explicitly via hidden="
        )
    values = [inputs, *hidden, outputs]
    for level, v in enumerate(values):
        if v.shape != (inputs.shape[0], net.sizes[level]):
            raise ValueError(f"level {level} values must have shape (n, {net.sizes[level]}), got {v.shape}")
    normalizers = [fit_normalizer(v, kind) for v in values]
    normed = [nz.transform(v) for nz, v in zip(normalizers, values)]
    layers = []
    for l, layer in enumerate(net.layers):
        neurons = []
        for nrn in layer.neurons:
            data = np.column_stack([normed[l][:, list(nrn.inputs)], normed[l + 1][:, nrn.output]])
            basis = make_basis(nrn.dim, layer.degree, layer.scheme)
            neurons.append(Neuron(nrn.inputs, nrn.output, estimate(basis, data)))
        layers.append(replace(layer, neurons=neurons))
    fitted = HcrNetwork(list(net.sizes), layers, normalizers)
    if net.depth > 1:
        _sweep(fitted, normed[0], "forward", fit_renorm=True)
        _sweep(fitted, normed[-1], "backward", fit_renorm=True)
    return fitted


def propagate_values(net: HcrNetwork, values, direction: str = "forward", normalized: bool = False):
    """Propagate values through the network.

    Forward takes level-0 values and returns level-L predictions; backward
    the reverse.  With ``normalized=False`` (default) inputs and outputs are
    in raw units; otherwise both are on the (0, 1) quantile scale and the
    returned values are the conditional means themselves.
    """
    if not net.fitted:
        raise ValueError("network is not fitted")
    values = np.asarray(values, dtype=float)
    single = values.ndim == 1
    values = np.atleast_2d(values)
    src, dst = (0, net.depth) if direction == "forward" else (net.depth, 0)
    if values.shape[1] != net.sizes[src]:
        raise ValueError(f"expected {net.sizes[src]} values per row, got {values.shape[1]}")
    u = values if normalized else net.normalizers[src].transform(values)
    p = _sweep(net, u, direction)
    if not normalized:
        p = net.normalizers[dst].inverse_transform(np.clip(p, EDGE, 1.0 - EDGE))
    return p[0] if single else p


def propagate_density(net: HcrNetwork, densities, direction: str = "forward") -> list[MomentVector]:
    """Propagate moment vectors (normalized units) through the network.

    Each neuron applies the constant-denominator rule; a level-``l`` variable
    fed by several neurons in the backward direction gets the average of
    their conditional moment vectors.
    """
    if not net.fitted:
        raise ValueError("network is not fitted")
    current = list(densities)
    if direction == "forward":
        for l, layer in enumerate(net.layers):
            if len(current) != net.sizes[l]:
                raise ValueError(f"level {l} needs {net.sizes[l]} moment vectors, got {len(current)}")
            nxt: list[MomentVector | None] = [None] * net.sizes[l + 1]
            for nrn in layer.neurons:
                ev = [current[v] for v in nrn.inputs] + [None]
                c = conditional_density(nrn.model, ev, nrn.dim - 1)
                nxt[nrn.output] = c.truncate(min(layer.carry_degree, nrn.model.max_degree))
            current = nxt
        return current
    if direction == "backward":
        for l in range(net.depth - 1, -1, -1):
            layer = net.layers[l]
            if len(current) != net.sizes[l + 1]:
                raise ValueError(f"level {l + 1} needs {net.sizes[l + 1]} moment vectors, got {len(current)}")
            degree = layer.carry_degree
            total = np.zeros((net.sizes[l], degree + 1))
            count = np.zeros(net.sizes[l])
            for nrn in layer.neurons:
                for pos, var in enumerate(nrn.inputs):
                    ev: list = [None] * nrn.dim
                    ev[-1] = current[nrn.output]
                    total[var] += conditional_density(nrn.model, ev, pos).padded(degree)
                    count[var] += 1
            current = [
                MomentVector(total[v] / count[v]) if count[v] else MomentVector.uniform(degree)
                for v in range(net.sizes[l])
            ]
        return current
    raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
