#!/usr/bin/env python3
"""Converts torchvision VGG-19 weights into the named-entry archive format.

The archive holds conv{b}_{k}.weight / conv{b}_{k}.bias entries for the
VGG-19 prefix through conv5_1, which is everything the reference encoder
can consume. Weights trained on [0,1] RGB inputs (torchvision convention)
drop in directly; no extra preprocessing constants are stored, so both the
reference and the refined encoder see identical inputs.

Usage:
    python3 scripts/convert_vgg19.py --out vgg19_reference.enca
    python3 scripts/convert_vgg19.py --state-dict vgg19.pth --out ref.enca
"""

import argparse
import struct

# layer index in torchvision's vgg19().features -> our naming
VGG19_CONV_NAMES = {
    0: "conv1_1", 2: "conv1_2",
    5: "conv2_1", 7: "conv2_2",
    10: "conv3_1", 12: "conv3_2", 14: "conv3_3", 16: "conv3_4",
    19: "conv4_1", 21: "conv4_2", 23: "conv4_3", 25: "conv4_4",
    28: "conv5_1",
}

DTYPE_F32 = 0


def write_archive(path, entries):
    with open(path, "wb") as f:
        f.write(b"ENCA")
        f.write(struct.pack("<I", 1))  # format version
        f.write(struct.pack("<Q", len(entries)))
        for name in sorted(entries):
            dims, payload = entries[name]
            encoded = name.encode()
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", DTYPE_F32))
            f.write(struct.pack("<I", len(dims)))
            for d in dims:
                f.write(struct.pack("<q", d))
            f.write(payload)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="output archive path")
    ap.add_argument(
        "--state-dict",
        help="optional .pth state dict; defaults to the torchvision download",
    )
    args = ap.parse_args()

    import numpy as np
    import torch

    if args.state_dict:
        state = torch.load(args.state_dict, map_location="cpu")
        if hasattr(state, "state_dict"):
            state = state.state_dict()
        prefix = "features."
    else:
        from torchvision.models import VGG19_Weights, vgg19

        state = vgg19(weights=VGG19_Weights.IMAGENET1K_V1).state_dict()
        prefix = "features."

    entries = {}
    for idx, name in VGG19_CONV_NAMES.items():
        for kind in ("weight", "bias"):
            key = f"{prefix}{idx}.{kind}"
            if key not in state:
                raise SystemExit(f"state dict is missing {key}")
            t = state[key].detach().to(torch.float32).contiguous()
            arr = np.ascontiguousarray(t.numpy(), dtype="<f4")
            entries[f"{name}.{kind}"] = (list(arr.shape), arr.tobytes())

    write_archive(args.out, entries)
    total = sum(
        int(np.prod(dims)) for dims, _ in entries.values()
    )
    print(f"wrote {args.out}: {len(entries)} entries, {total} parameters")


if __name__ == "__main__":
    main()
