"""Sequential model container: seeded parameter init, forward, backward.

A model is an ordered LayerSpec list plus one parameter dict per layer
(empty for the non-parametric kinds) and a metadata dict. Construction
shape-checks the whole stack against the declared input shape, so a model
that exists composes without runtime shape surprises.
"""

import numpy as np

from . import layers as L
from .layers import ShapeError


class Model:
    def __init__(self, specs, input_shape, params, metadata):
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.shapes = L.infer_shapes(self.specs, self.input_shape)
        self.params = params
        self.metadata = dict(metadata)

    @property
    def output_shape(self):
        return self.shapes[-1]

    @property
    def parameter_count(self):
        return sum(int(a.size) for p in self.params for a in p.values())

    def parameter_arrays(self):
        """All parameter arrays in a fixed (layer, W-then-b) order."""
        out = []
        for p in self.params:
            for name in ("W", "b"):
                if name in p:
                    out.append(p[name])
        return out

    def astype(self, dtype):
        """Copy with parameters cast to dtype (used by the gradient checker)."""
        params = [{k: v.astype(dtype) for k, v in p.items()} for p in self.params]
        return Model(self.specs, self.input_shape, params, self.metadata)

    def with_input_shape(self, input_shape):
        """Rebind the same parameters to a new input size.

        Valid only when no parameter shape changes, i.e. the stack is fully
        convolutional up to any dense layer whose fan-in is unaffected.
        """
        m = Model(self.specs, input_shape, self.params, self.metadata)
        ins = [input_shape] + m.shapes[:-1]
        for i, spec in enumerate(self.specs):
            want = L.param_shapes(spec, ins[i])
            have = {k: v.shape for k, v in self.params[i].items()}
            if want != have:
                raise ShapeError(i, f"parameters shaped {have} cannot serve input "
                                    f"{input_shape} (needs {want})")
        return m

    def copy(self):
        params = [{k: v.copy() for k, v in p.items()} for p in self.params]
        return Model(self.specs, self.input_shape, params, self.metadata)


def build_model(specs, input_shape, seed, metadata=None):
    """Shape-check the stack and draw initial parameters.

    Weights are uniform in [-s, s] with s = sqrt(6 / (fan_in + fan_out)),
    biases zero, all from one generator seeded with ``seed`` so identical
    (specs, seed) pairs produce identical models.
    """
    shapes = L.infer_shapes(list(specs), input_shape)
    ins = [tuple(input_shape)] + shapes[:-1]
    rng = np.random.default_rng(seed)
    params = []
    for spec, in_shape in zip(specs, ins):
        pshape = L.param_shapes(spec, in_shape)
        p = {}
        if pshape:
            wshape = pshape["W"]
            if spec.kind == "conv2d":
                k = spec.params["kernel"]
                fan_in = in_shape[0] * k * k
                fan_out = spec.params["out_channels"] * k * k
            else:
                fan_in, fan_out = wshape
            s = np.sqrt(6.0 / (fan_in + fan_out))
            p["W"] = rng.uniform(-s, s, size=wshape).astype(np.float32)
            p["b"] = np.zeros(pshape["b"], dtype=np.float32)
        params.append(p)
    meta = dict(metadata or {})
    meta.setdefault("seed", seed)
    m = Model(specs, input_shape, params, meta)
    m.metadata["parameter_count"] = m.parameter_count
    return m


def forward(model, batch):
    """Run the batch through every layer; returns the per-layer outputs.

    The last element is the network output. Deterministic for fixed inputs.
    """
    x = np.asarray(batch)
    if x.ndim != len(model.input_shape) + 1 or x.shape[1:] != model.input_shape:
        raise ShapeError(0, f"batch shape {x.shape} does not match model input "
                            f"{('N',) + model.input_shape}")
    acts = []
    for i, spec in enumerate(model.specs):
        p = spec.params
        w = model.params[i]
        if spec.kind == "conv2d":
            x = L.conv2d_forward(x, w["W"], w["b"], p["stride"], p["padding"])
        elif spec.kind == "maxpool2d":
            x = L.maxpool2d_forward(x, p["size"])
        elif spec.kind == "relu":
            x = np.maximum(x, 0)
        elif spec.kind == "dense":
            x = x.reshape(x.shape[0], -1) @ w["W"] + w["b"]
        elif spec.kind == "upsample2d":
            x = L.upsample2d_forward(x, p["factor"])
        elif spec.kind == "softmax":
            x = L.softmax_forward(x)
        elif spec.kind == "concat":
            x = np.concatenate([x, acts[p["source"]]], axis=1)
        acts.append(x)
    return acts


def backward(model, batch, activations, output_grad):
    """d(loss)/d(parameter) for every layer, given forward's activations.

    Returns a list aligned with model.specs ({} for non-parametric layers).
    Skip (concat) edges accumulate into their source layer's gradient.
    """
    n = len(model.specs)
    if len(activations) != n:
        raise ShapeError(n - 1, f"{len(activations)} activations for {n} layers")
    for i, a in enumerate(activations):
        want = (batch.shape[0],) + model.shapes[i]
        if a.shape != want:
            raise ShapeError(i, f"activation shape {a.shape}, expected {want}")
    if output_grad.shape != activations[-1].shape:
        raise ShapeError(n - 1, f"output grad shape {output_grad.shape} does not "
                                f"match output {activations[-1].shape}")

    grads = [{} for _ in range(n)]
    # gradient w.r.t. each layer's output; concat feeds earlier entries
    gout = [None] * n
    gout[-1] = output_grad
    for i in range(n - 1, -1, -1):
        dy = gout[i]
        if dy is None:                     # output never consumed (cannot happen
            continue                       # in a chain, kept for safety)
        spec = model.specs[i]
        p = spec.params
        w = model.params[i]
        x = batch if i == 0 else activations[i - 1]
        y = activations[i]
        if spec.kind == "conv2d":
            dx, dW, db = L.conv2d_backward(x, w["W"], dy, p["stride"], p["padding"])
            grads[i] = {"W": dW, "b": db}
        elif spec.kind == "maxpool2d":
            dx = L.maxpool2d_backward(x, dy, p["size"])
        elif spec.kind == "relu":
            dx = dy * (y > 0)
        elif spec.kind == "dense":
            x2 = x.reshape(x.shape[0], -1)
            grads[i] = {"W": x2.T @ dy,
                        "b": dy.sum(axis=0, dtype=np.float64).astype(dy.dtype)}
            dx = (dy @ w["W"].T).reshape(x.shape)
        elif spec.kind == "upsample2d":
            dx = L.upsample2d_backward(dy, p["factor"])
        elif spec.kind == "softmax":
            dx = L.softmax_backward(y, dy)
        elif spec.kind == "concat":
            csplit = x.shape[1]
            dx = dy[:, :csplit]
            src = p["source"]
            extra = dy[:, csplit:]
            gout[src] = extra if gout[src] is None else gout[src] + extra
        if i > 0:
            gout[i - 1] = dx if gout[i - 1] is None else gout[i - 1] + dx
    return grads
