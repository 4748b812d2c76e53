#!/usr/bin/env python3
"""Train the bundled desk CNN on the scikit-learn 8x8 digits set and export fixtures.

Writes into the output directory:
  float_model.json   layer list with float weights (gav-float-network v1)
  train.gvt / train_labels.csv   images used for scale calibration and profiling
  test.gvt / test_labels.csv     held-out images used for accuracy

Images are stored as raw pixel intensities 0..16 in GVT1 tensors [N, 1, 8, 8];
the network input is (pixel - input_offset) * input_scale.
"""

import argparse
import json
import struct
from pathlib import Path

import numpy as np
import torch
from sklearn.datasets import load_digits
from torch import nn


def write_gvt(path, array, bits, signed):
    array = np.asarray(array, dtype=np.int32)
    header = b"GVT1" + struct.pack("<5I", 1, 0, 1 if signed else 0, bits, array.ndim)
    header += struct.pack("<%dI" % array.ndim, *array.shape)
    path.write_bytes(header + array.astype("<i4").tobytes())


def write_labels(path, labels):
    lines = ["index,label"] + ["%d,%d" % (i, int(y)) for i, y in enumerate(labels)]
    path.write_text("\n".join(lines) + "\n")


class DeskCnn(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 8, 5, padding=2)
        self.conv2 = nn.Conv2d(8, 16, 3, padding=1)
        self.conv3 = nn.Conv2d(16, 16, 3, padding=1)
        self.fc = nn.Linear(64, 10)

    def forward(self, x):
        x = torch.relu(self.conv1(x))
        x = torch.relu(self.conv2(x))
        x = nn.functional.max_pool2d(x, 2)
        x = torch.relu(self.conv3(x))
        x = nn.functional.avg_pool2d(x, 2)
        return self.fc(torch.flatten(x, 1))


def export(model, mean, std):
    def conv(name, m):
        return {
            "name": name,
            "kind": "conv2d",
            "in_channels": m.in_channels,
            "out_channels": m.out_channels,
            "kernel": m.kernel_size[0],
            "stride": m.stride[0],
            "padding": m.padding[0],
            "weight": m.weight.detach().flatten().tolist(),
            "bias": m.bias.detach().tolist(),
        }

    layers = [
        conv("conv1", model.conv1),
        {"name": "relu1", "kind": "relu"},
        conv("conv2", model.conv2),
        {"name": "relu2", "kind": "relu"},
        {"name": "pool2", "kind": "maxpool", "kernel": 2},
        conv("conv3", model.conv3),
        {"name": "relu3", "kind": "relu"},
        {"name": "pool3", "kind": "avgpool", "kernel": 2},
        {"name": "flatten", "kind": "flatten"},
        {
            "name": "fc",
            "kind": "linear",
            "in_features": model.fc.in_features,
            "out_features": model.fc.out_features,
            "weight": model.fc.weight.detach().flatten().tolist(),
            "bias": model.fc.bias.detach().tolist(),
        },
    ]
    return {
        "format": "gav-float-network",
        "version": 1,
        "name": "desk-cnn-digits",
        "input_shape": [1, 8, 8],
        "input_offset": mean,
        "input_scale": 1.0 / std,
        "classes": 10,
        "layers": layers,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data" / "desk_cnn")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--test-size", type=int, default=500)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    rng = np.random.default_rng(args.seed)
    digits = load_digits()
    images = digits.images.astype(np.int32)
    labels = digits.target.astype(np.int64)
    order = rng.permutation(len(images))
    test_idx, train_idx = order[: args.test_size], order[args.test_size :]

    # Standard per-dataset normalization: float input = (pixel - mean) / std.
    mean = float(images[train_idx].mean())
    std = float(images[train_idx].std())
    x = (torch.tensor(images[train_idx], dtype=torch.float32).unsqueeze(1) - mean) / std
    y = torch.tensor(labels[train_idx])
    xt = (torch.tensor(images[test_idx], dtype=torch.float32).unsqueeze(1) - mean) / std
    yt = torch.tensor(labels[test_idx])

    model = DeskCnn()
    opt = torch.optim.Adam(model.parameters(), lr=3e-3, weight_decay=1e-4)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, args.epochs)
    loss_fn = nn.CrossEntropyLoss()
    for epoch in range(args.epochs):
        model.train()
        perm = torch.randperm(len(x))
        for i in range(0, len(x), 64):
            b = perm[i : i + 64]
            opt.zero_grad()
            loss = loss_fn(model(x[b]), y[b])
            loss.backward()
            opt.step()
        sched.step()
    model.eval()
    with torch.no_grad():
        acc = (model(xt).argmax(1) == yt).float().mean().item()
    print("float test accuracy %.4f" % acc)

    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "float_model.json").write_text(json.dumps(export(model, mean, std)) + "\n")
    write_gvt(args.out / "train.gvt", images[train_idx][:, None], 5, False)
    write_labels(args.out / "train_labels.csv", labels[train_idx])
    write_gvt(args.out / "test.gvt", images[test_idx][:, None], 5, False)
    write_labels(args.out / "test_labels.csv", labels[test_idx])


if __name__ == "__main__":
    main()
