"""Regenerates tiny_conv.onnx: a 32x32/stride-32 convolution with ReLU,
1x3x224x224 -> 1x8x7x7, input "input", output "features"."""
import sys

import torch

torch.manual_seed(0)
model = torch.nn.Sequential(torch.nn.Conv2d(3, 8, kernel_size=32, stride=32), torch.nn.ReLU()).eval()
out = sys.argv[1] if len(sys.argv) > 1 else "tiny_conv.onnx"
torch.onnx.export(
    model,
    torch.zeros(1, 3, 224, 224),
    out,
    input_names=["input"],
    output_names=["features"],
    opset_version=13,
)
