"""Patch classification stage with activation-map introspection.

Classifiers eat the equalized crops the detector produces and emit class
probabilities. Training augments every batch with exact right-angle
rotations and mirrors chosen per sample, so no interpolation error enters
the loop. The activation map is the channel mean of the last relu layer,
upsampled to the patch and min-max normalized: the cheapest faithful view
of where the net looks.

Presets stay under 10^4 parameters so they remain finite-difference
checkable; counts increase strictly across the roster.
"""

import numpy as np

from . import engine as E
from .detect import PATCH_SIZE

CLASSIFY_PRESETS = {
    "patch-2conv": [
        E.conv2d(6, 3), E.relu(), E.maxpool2d(2),
        E.conv2d(12, 3), E.relu(), E.maxpool2d(2),
        E.maxpool2d(2), E.maxpool2d(2),
    ],
    "patch-3conv": [
        E.conv2d(8, 3), E.relu(), E.maxpool2d(2),
        E.conv2d(12, 3), E.relu(), E.maxpool2d(2),
        E.conv2d(12, 3), E.relu(), E.maxpool2d(2),
        E.maxpool2d(2), E.dense(16), E.relu(),
    ],
    "patch-3conv-wide": [
        E.conv2d(10, 3), E.relu(), E.maxpool2d(2),
        E.conv2d(16, 3), E.relu(), E.maxpool2d(2),
        E.conv2d(16, 3), E.relu(), E.maxpool2d(2),
        E.maxpool2d(2), E.dense(16), E.relu(),
    ],
}


def build_classifier(preset, n_classes, patch_size=PATCH_SIZE, seed=0):
    if preset not in CLASSIFY_PRESETS:
        raise ValueError(f"unknown classifier preset {preset!r}; "
                         f"available: {sorted(CLASSIFY_PRESETS)}")
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    specs = list(CLASSIFY_PRESETS[preset]) + [E.dense(n_classes)]
    return E.build_model(specs, (1, patch_size, patch_size), seed=seed,
                         metadata={"stage": "classify", "preset": preset,
                                   "n_classes": n_classes})


def normalize_patches(patches):
    """uint8 (N, P, P) -> float32 (N, 1, P, P) in [0, 1]."""
    arr = np.asarray(patches, dtype=np.float32) / 255.0
    return arr[:, None, :, :]


def dihedral_augment(batch, rng):
    """Random exact rotation (k*90 degrees) and mirror per sample."""
    out = np.empty_like(batch)
    ks = rng.integers(0, 4, size=len(batch))
    flips = rng.integers(0, 2, size=len(batch))
    for i in range(len(batch)):
        img = np.rot90(batch[i], k=int(ks[i]), axes=(-2, -1))
        if flips[i]:
            img = img[..., ::-1]
        out[i] = img
    return out


def train_classifier(model, crops, labels, hyper=None, seed=0, val=None,
                     augment=True):
    """crops: uint8 (N, P, P); labels: int (N,). val: same pair or None."""
    labels = np.asarray(labels)
    n_classes = model.output_shape[0]
    counts = np.bincount(labels, minlength=n_classes)
    if (counts == 0).any():
        missing = int(np.nonzero(counts == 0)[0][0])
        raise ValueError(f"class {missing} has no training crops")
    hyper = hyper or E.Hyper(epochs=30, batch_size=32, lr=0.05, momentum=0.9)
    x = normalize_patches(crops)
    v = (normalize_patches(val[0]), np.asarray(val[1])) if val else None
    aug = dihedral_augment if augment else None
    return E.fit(model, x, labels, E.loss_softmax_ce, hyper, seed=seed,
                 val=v, augment=aug)


def classify(model, patches):
    """Probability matrix (N, K) for uint8 patches (N, P, P) or one (P, P)."""
    arr = np.asarray(patches)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    x = normalize_patches(arr)
    if x.shape[1:] != model.input_shape:
        raise ValueError(f"patch shape {x.shape[1:]} does not match model "
                         f"input {model.input_shape}")
    logits = E.forward(model, x)[-1].astype(np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if single else p


def evaluate_classifier(model, crops, labels):
    """Accuracy plus the full confusion matrix (rows: truth)."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty evaluation set")
    probs = classify(model, crops)
    pred = probs.argmax(axis=1)
    k = model.output_shape[0]
    confusion = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(labels, pred):
        confusion[t, p] += 1
    return {"accuracy": float(np.trace(confusion) / len(labels)),
            "confusion": confusion, "predictions": pred, "probabilities": probs}


def activation_map(model, patch):
    """Channel mean of the last relu activations, resized, in [0, 1].

    A constant raw map (all-zero relus included) normalizes to all zeros.
    """
    relu_idx = [i for i, s in enumerate(model.specs) if s.kind == "relu"
                and len(model.shapes[i + 1]) == 3]
    if not relu_idx:
        raise ValueError("model has no spatial relu layer")
    last = relu_idx[-1]
    x = normalize_patches(np.asarray(patch)[None])
    acts = E.forward(model, x)
    fmap = acts[last][0].mean(axis=0)

    ph, pw = patch.shape
    fh, fw = fmap.shape
    up = fmap[np.arange(ph) * fh // ph][:, np.arange(pw) * fw // pw]
    lo, hi = float(up.min()), float(up.max())
    if hi - lo < 1e-12:
        return np.zeros((ph, pw), dtype=np.float64)
    return (up - lo) / (hi - lo)
