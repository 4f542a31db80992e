"""Image -> penultimate-layer Inception v3 activations, as JSON on stdout.

Subprocess contract (consumed by the evaluation harness):

    activation-embed IMAGE_PATH            # or the path on stdin
    -> {"dim": 2048, "values": [...]}      # exit 0, or exit 1 + stderr

The default backbone is Inception v3 with ImageNet weights, whose
penultimate layer is 2048-wide. Images are resized to 299x299 (no crop)
and normalized with the standard ImageNet statistics; output is
deterministic for fixed weights and preprocessing.

Weight sources, in order of preference:
- ``--weights PATH``: a local state-dict file;
- default: torchvision's IMAGENET1K_V1 download/cache (fails with a
  diagnostic when neither cache nor network is available);
- ``--untrained-seed N``: seeded random initialization. This exists so the
  subprocess contract can be exercised on machines without the pretrained
  weights; the vectors are deterministic but carry no perceptual meaning.
"""

from __future__ import annotations

import argparse
import json
import sys

EMBED_DIM = 2048
INPUT_SIZE = 299
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def build_backbone(weights_path: str | None = None,
                   untrained_seed: int | None = None):
    """Inception v3 with the classification head removed (2048-d output)."""
    import torch
    from torchvision.models import Inception_V3_Weights, inception_v3

    torch.manual_seed(untrained_seed if untrained_seed is not None else 0)
    if untrained_seed is not None:
        model = inception_v3(weights=None, aux_logits=True,
                             init_weights=True, transform_input=True)
    elif weights_path is not None:
        model = inception_v3(weights=None, aux_logits=True,
                             init_weights=False, transform_input=True)
        state = torch.load(weights_path, map_location="cpu",
                           weights_only=True)
        model.load_state_dict(state)
    else:
        model = inception_v3(weights=Inception_V3_Weights.IMAGENET1K_V1)
    model.fc = torch.nn.Identity()
    model.eval()
    return model


def preprocess(image_path: str):
    import torch
    from PIL import Image

    import numpy as np

    with Image.open(image_path) as im:
        rgb = im.convert("RGB").resize((INPUT_SIZE, INPUT_SIZE),
                                       Image.Resampling.BILINEAR)
    arr = np.asarray(rgb, dtype="float32") / 255.0
    tensor = torch.from_numpy(arr).permute(2, 0, 1)
    mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
    return ((tensor - mean) / std).unsqueeze(0)


def embed(image_path: str, weights_path: str | None = None,
          untrained_seed: int | None = None) -> dict:
    import torch

    model = build_backbone(weights_path, untrained_seed)
    with torch.no_grad():
        vector = model(preprocess(image_path)).squeeze(0)
    values = vector.double().tolist()
    return {"dim": len(values), "values": values}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="activation-embed",
        description="Emit penultimate-layer Inception v3 activations as JSON.")
    parser.add_argument("image", nargs="?",
                        help="image path (read from stdin when omitted)")
    parser.add_argument("--weights", default=None,
                        help="local Inception v3 state-dict file")
    parser.add_argument("--untrained-seed", type=int, default=None,
                        help="use seeded random weights (contract testing only)")
    args = parser.parse_args(argv)

    image_path = args.image
    if image_path is None:
        image_path = sys.stdin.readline().strip()
    if not image_path:
        print("error: no image path given", file=sys.stderr)
        return 1
    try:
        doc = embed(image_path, args.weights, args.untrained_seed)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    json.dump(doc, sys.stdout)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
