#!/usr/bin/env python3
"""Fetch pretrained backbones and convert them to the ONNX files the
fusion pipeline loads.

Downloads ImageNet weights through torchvision (the ``export`` extra),
folds batch-norm and input normalisation into the convolutions, and writes
<backbone>.onnx files into the model directory. Run once per machine:

    python scripts/fetch_models.py --out-dir models
    fusezca fuse --ir a_ir.png --vis a_vis.png --out fused.png \
        --model-dir models
"""

import argparse
import sys
from pathlib import Path

from fusezca.backbone.export import export_backbone, load_torchvision_model


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="models")
    parser.add_argument("--backbones", default="resnet50,resnet101,vgg19",
                        help="comma list of backbones to fetch")
    args = parser.parse_args(argv)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for backbone in [b.strip() for b in args.backbones.split(",") if b]:
        path = out_dir / f"{backbone}.onnx"
        print(f"fetching {backbone} ...")
        model = load_torchvision_model(backbone, pretrained=True)
        export_backbone(backbone, model, path)
        print(f"wrote {path} ({path.stat().st_size / 1e6:.1f} MB)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
