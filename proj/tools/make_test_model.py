"""Writes the tiny ONNX fixture used by the test suite.

Three taps at scales 1, 2 and 4 with 4, 8 and 8 channels, the matching
manifest, and reference activations computed by PyTorch for a fixed probe
input so the C++ runtime can be checked against an independent one.

    python3 tools/make_test_model.py tests/data
"""

import json
import sys
from pathlib import Path

import torch
import torch.nn as nn


class Tiny(nn.Module):
    def __init__(self):
        super().__init__()
        self.c1 = nn.Conv2d(3, 4, 3, padding=1)
        self.c2 = nn.Conv2d(4, 8, 3, padding=1)
        self.c3 = nn.Conv2d(8, 8, 3, padding=1)
        self.pool = nn.MaxPool2d(2)

    def forward(self, x):
        a = torch.relu(self.c1(x))
        b = torch.relu(self.c2(self.pool(a)))
        c = torch.relu(self.c3(self.pool(b)))
        return a, b, c


def probe_input(h, w):
    # Smooth deterministic pattern, no RNG involved.
    ys = torch.arange(h, dtype=torch.float32).view(1, 1, h, 1)
    xs = torch.arange(w, dtype=torch.float32).view(1, 1, 1, w)
    chans = [torch.sin(0.7 * xs + 0.3 * ys + k) for k in range(3)]
    return torch.cat(chans, dim=1)


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(0)
    model = Tiny().eval()
    taps = ["tap0", "tap1", "tap2"]
    torch.onnx.export(
        model,
        torch.zeros(1, 3, 32, 32),
        str(out / "tiny.onnx"),
        input_names=["input"],
        output_names=taps,
        dynamic_axes={"input": {2: "h", 3: "w"}},
        opset_version=11,
        dynamo=False,
    )
    manifest = {
        "backend": "tiny-onnx",
        "model": "tiny.onnx",
        "preprocess": {"mean": [0.0, 0.0, 0.0], "std": [1.0, 1.0, 1.0], "resize": "multiple-of-4",
                       "channel_order": "RGB"},
        "layers": [
            {"tap": "tap0", "scale": 1, "channels": 4},
            {"tap": "tap1", "scale": 2, "channels": 8},
            {"tap": "tap2", "scale": 4, "channels": 8},
        ],
    }
    (out / "tiny_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    x = probe_input(16, 12)
    with torch.no_grad():
        outs = model(x)
    ref = {
        "input_shape": list(x.shape),
        "input": x.flatten().tolist(),
        "outputs": [{"tap": t, "shape": list(o.shape), "data": o.flatten().tolist()} for t, o in zip(taps, outs)],
    }
    (out / "tiny_reference.json").write_text(json.dumps(ref) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data")
