#!/usr/bin/env python3
"""Export torchvision wide_resnet50_2 (conv1 .. layer3) to the RDCFAW01 archive read by rdcfa.

    python3 tools/export_backbone.py --out ~/.cache/rdcfa
    python3 tools/export_backbone.py --out /tmp/w --random   # untrained weights, no download
"""

import argparse
import pathlib
import struct

import numpy as np
import torch
import torchvision

MAGIC = b"RDCFAW01"
KEEP = ("conv1.", "bn1.", "layer1.", "layer2.", "layer3.")


def export(state, path):
    tensors = [(k, v) for k, v in state.items() if k.startswith(KEEP) and not k.endswith("num_batches_tracked")]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(tensors)))
        for name, t in tensors:
            data = t.detach().cpu().numpy().astype("<f4")
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            f.write(np.ascontiguousarray(data).tobytes())
    return len(tensors)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True, help="cache directory; writes wide_resnet50_2.rdw")
    ap.add_argument("--random", action="store_true", help="skip the ImageNet download, export initial weights")
    ap.add_argument("--seed", type=int, default=0, help="init seed with --random")
    args = ap.parse_args()

    if args.random:
        torch.manual_seed(args.seed)
        model = torchvision.models.wide_resnet50_2(weights=None)
    else:
        model = torchvision.models.wide_resnet50_2(weights=torchvision.models.Wide_ResNet50_2_Weights.IMAGENET1K_V1)
    model.eval()

    out = pathlib.Path(args.out).expanduser()
    out.mkdir(parents=True, exist_ok=True)
    path = out / "wide_resnet50_2.rdw"
    n = export(model.state_dict(), path)
    print(f"wrote {n} tensors to {path}")


if __name__ == "__main__":
    main()
