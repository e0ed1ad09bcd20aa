#!/usr/bin/env python3
"""Convert pretrained PyTorch weights into the .ldst named-tensor archives
read by ldstyle (vgg19.ldst, monodepth.ldst, hed.ldst).

    python scripts/convert_weights.py vgg19 --out weights/vgg19.ldst
    python scripts/convert_weights.py monodepth --encoder encoder.pth --decoder depth.pth --out weights/monodepth.ldst
    python scripts/convert_weights.py hed --state network-bsds500.pytorch --out weights/hed.ldst

Point LDSTYLE_WEIGHTS_DIR at the output directory afterwards.
"""

import argparse
import struct
import sys

import numpy as np

MAGIC = b"LDST"
END_MARKER = b"TSDL"
SCHEMA_VERSION = 1
DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<u8"): 2}

VGG_CONVS_PER_STAGE = [2, 2, 4, 4, 1]
VGG_WIDTHS = [64, 128, 256, 512, 512]
IMAGENET_MEAN = [0.485, 0.456, 0.406]
IMAGENET_STD = [0.229, 0.224, 0.225]


def write_archive(path, tensors, text=""):
    """Records sorted by name, little-endian payloads."""
    out = bytearray(MAGIC)
    out += struct.pack("<II", SCHEMA_VERSION, len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype not in DTYPE_TAGS:
            arr = arr.astype("<f4")
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<BI", DTYPE_TAGS[arr.dtype], arr.ndim)
        out += b"".join(struct.pack("<Q", d) for d in arr.shape)
        payload = arr.tobytes()
        out += struct.pack("<Q", len(payload)) + payload
    body = text.encode("utf-8")
    out += struct.pack("<Q", len(body)) + body + END_MARKER
    with open(path, "wb") as f:
        f.write(out)


def np32(t):
    return t.detach().cpu().numpy().astype("<f4")


def fold_bn(weight, bias, state, bn, eps=1e-5):
    """Fold an eval-mode BatchNorm into the preceding convolution."""
    gamma = state[f"{bn}.weight"].double()
    beta = state[f"{bn}.bias"].double()
    mean = state[f"{bn}.running_mean"].double()
    var = state[f"{bn}.running_var"].double()
    scale = gamma / (var + eps).sqrt()
    w = weight.double() * scale.view(-1, 1, 1, 1)
    b = (bias.double() if bias is not None else 0.0) - mean
    return np32(w), np32(b * scale + beta)


def convert_vgg19(args):
    import torch
    import torchvision

    if args.state:
        state = torch.load(args.state, map_location="cpu")
        state = {k.removeprefix("features."): v for k, v in state.items()}
    else:
        model = torchvision.models.vgg19(weights=torchvision.models.VGG19_Weights.IMAGENET1K_V1)
        state = model.features.state_dict()
    conv_indices = sorted({int(k.split(".")[0]) for k in state if k.endswith(".weight")})
    tensors = {}
    pos = 0
    for stage, n in enumerate(VGG_CONVS_PER_STAGE):
        for i in range(n):
            idx = conv_indices[pos]
            pos += 1
            name = f"conv{stage + 1}_{i + 1}"
            tensors[f"{name}.weight"] = np32(state[f"{idx}.weight"])
            tensors[f"{name}.bias"] = np32(state[f"{idx}.bias"])
    tensors["normalization.mean"] = np.array(IMAGENET_MEAN, dtype="<f8")
    tensors["normalization.std"] = np.array(IMAGENET_STD, dtype="<f8")
    tensors["widths"] = np.array(VGG_WIDTHS, dtype="<u8")
    write_archive(args.out, tensors, "source = torchvision vgg19 IMAGENET1K_V1\n")


def convert_monodepth(args):
    import torch

    enc = torch.load(args.encoder, map_location="cpu")
    dec = torch.load(args.decoder, map_location="cpu")
    tensors = {"meta.native_hw": np.array([int(enc["height"]), int(enc["width"])], dtype="<u8")}

    def put(name, w, b):
        tensors[f"{name}.weight"], tensors[f"{name}.bias"] = w, b

    put("encoder.conv1", *fold_bn(enc["encoder.conv1.weight"], None, enc, "encoder.bn1"))
    for layer in range(1, 5):
        for block in range(2):
            src = f"encoder.layer{layer}.{block}"
            for j in (1, 2):
                put(f"{src}.conv{j}", *fold_bn(enc[f"{src}.conv{j}.weight"], None, enc, f"{src}.bn{j}"))
            if f"{src}.downsample.0.weight" in enc:
                put(f"{src}.downsample", *fold_bn(enc[f"{src}.downsample.0.weight"], None, enc, f"{src}.downsample.1"))
    # Decoder modules are stored as a flat list: upconv(4,0), upconv(4,1), ..., upconv(0,1), dispconv 0..3.
    for i in range(5):
        for j in range(2):
            k = (4 - i) * 2 + j
            put(f"decoder.upconv_{i}_{j}", np32(dec[f"decoder.{k}.conv.conv.weight"]), np32(dec[f"decoder.{k}.conv.conv.bias"]))
    put("decoder.dispconv_0", np32(dec["decoder.10.conv.weight"]), np32(dec["decoder.10.conv.bias"]))
    write_archive(args.out, tensors, "source = monodepth2 ResNet-18, batch norm folded\n")


def convert_hed(args):
    import torch

    state = torch.load(args.state, map_location="cpu")
    state = {k.replace("module", "net", 1) if k.startswith("module") else k: v for k, v in state.items()}
    stage_names = ["One", "Two", "Thr", "Fou", "Fiv"]
    tensors = {}
    for s, stage in enumerate(stage_names):
        prefix = f"netVgg{stage}"
        indices = sorted({int(k.split(".")[1]) for k in state if k.startswith(prefix + ".") and k.endswith(".weight")})
        for i, idx in enumerate(indices):
            tensors[f"conv{s + 1}_{i + 1}.weight"] = np32(state[f"{prefix}.{idx}.weight"])
            tensors[f"conv{s + 1}_{i + 1}.bias"] = np32(state[f"{prefix}.{idx}.bias"])
        tensors[f"score{s + 1}.weight"] = np32(state[f"netScore{stage}.weight"])
        tensors[f"score{s + 1}.bias"] = np32(state[f"netScore{stage}.bias"])
    tensors["combine.weight"] = np32(state["netCombine.0.weight"])
    tensors["combine.bias"] = np32(state["netCombine.0.bias"])
    tensors["input.bgr_mean"] = np.array([104.00698793, 116.66876762, 122.67891434], dtype="<f4")
    write_archive(args.out, tensors, "source = HED BSDS500\n")


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="net", required=True)
    v = sub.add_parser("vgg19", help="VGG-19 encoder (torchvision download unless --state is given)")
    v.add_argument("--state", help="local state dict of vgg19 or vgg19.features")
    v.add_argument("--out", required=True)
    m = sub.add_parser("monodepth", help="monodepth2 ResNet-18 encoder.pth + depth.pth")
    m.add_argument("--encoder", required=True)
    m.add_argument("--decoder", required=True)
    m.add_argument("--out", required=True)
    h = sub.add_parser("hed", help="HED state dict (netVgg*/moduleVgg* keys)")
    h.add_argument("--state", required=True)
    h.add_argument("--out", required=True)
    args = p.parse_args()
    {"vgg19": convert_vgg19, "monodepth": convert_monodepth, "hed": convert_hed}[args.net](args)
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
