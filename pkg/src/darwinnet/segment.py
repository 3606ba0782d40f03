"""Per-crop semantic segmentation stage.

Small encoder-decoder nets with concatenation skips produce a 2-channel
logit map over each patch; argmax gives the binary mask, the class label
rides along from the classifier. Evaluation pools pixel counts over the
whole set (one Jaccard per configuration) and reports per-image values
alongside.
"""

import numpy as np

from . import engine as E
from .detect import PATCH_SIZE


def _unet_specs(enc_widths, bottleneck, dec_widths):
    specs = []
    skips = []
    for w in enc_widths:
        specs.extend([E.conv2d(w, 3), E.relu()])
        skips.append(len(specs) - 1)
        specs.append(E.maxpool2d(2))
    specs.extend([E.conv2d(bottleneck, 3), E.relu()])
    for w, skip in zip(dec_widths, reversed(skips)):
        specs.extend([E.upsample2d(2), E.concat(skip),
                      E.conv2d(w, 3), E.relu()])
    specs.append(E.conv2d(2, 1))
    return specs

SEGMENT_PRESETS = {
    "unet-small": _unet_specs((8, 12), 12, (10, 8)),
    "unet-large": _unet_specs((6, 10, 12), 12, (10, 8, 6)),
}


def build_segmenter(preset, patch_size=PATCH_SIZE, seed=0):
    if preset not in SEGMENT_PRESETS:
        raise ValueError(f"unknown segmenter preset {preset!r}; "
                         f"available: {sorted(SEGMENT_PRESETS)}")
    return E.build_model(SEGMENT_PRESETS[preset],
                         (1, patch_size, patch_size), seed=seed,
                         metadata={"stage": "segment", "preset": preset})


def train_segmenter(model, crops, masks, hyper=None, seed=0, val=None):
    """crops: uint8 (N, P, P); masks: binary (N, P, P) aligned per crop."""
    crops = np.asarray(crops)
    masks = np.asarray(masks)
    if crops.shape != masks.shape:
        raise ValueError(f"crops {crops.shape} and masks {masks.shape} "
                         "are misaligned")
    hyper = hyper or E.Hyper(epochs=25, batch_size=16, lr=0.1, momentum=0.9)
    x = (crops.astype(np.float32) / 255.0)[:, None]
    t = masks.astype(np.int64)
    v = None
    if val is not None:
        v = ((np.asarray(val[0]).astype(np.float32) / 255.0)[:, None],
             np.asarray(val[1]).astype(np.int64))
    return E.fit(model, x, t, E.loss_pixel_ce, hyper, seed=seed, val=v)


def segment(model, crops):
    """Binary masks via per-pixel argmax; accepts one patch or a stack."""
    arr = np.asarray(crops)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    x = (arr.astype(np.float32) / 255.0)[:, None]
    if x.shape[1:] != model.input_shape:
        raise ValueError(f"crop shape {x.shape[1:]} does not match model "
                         f"input {model.input_shape}")
    logits = E.forward(model, x)[-1]
    masks = (logits[:, 1] > logits[:, 0])
    return masks[0] if single else masks


def evaluate_segmentation(predicted, truth):
    """Pooled Jaccard and global accuracy over aligned mask stacks.

    Returns {"jaccard", "global_accuracy", "per_image", "degenerate"}.
    An empty pooled union means there is no foreground anywhere; that
    reports Jaccard 1 with the degenerate flag raised.
    """
    p = np.asarray(predicted, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.ndim == 2:
        p = p[None]
        t = t[None]
    inter = int((p & t).sum())
    union = int((p | t).sum())
    degenerate = union == 0
    jaccard = 1.0 if degenerate else inter / union
    acc = float((p == t).mean())
    per_image = []
    for pi, ti in zip(p, t):
        u = int((pi | ti).sum())
        per_image.append(1.0 if u == 0 else int((pi & ti).sum()) / u)
    return {"jaccard": float(jaccard), "global_accuracy": acc,
            "per_image": per_image, "degenerate": degenerate}
