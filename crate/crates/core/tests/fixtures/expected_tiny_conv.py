"""Writes tiny_conv_expected.json: pooled tiny_conv.onnx features for the
test image with pixel (x, y, c) = (7x + 3y + 11c) mod 256, ImageNet-normalized."""
import json

import numpy as np
import onnx
import torch
from onnx import numpy_helper

weights = {t.name: numpy_helper.to_array(t) for t in onnx.load("tiny_conv.onnx").graph.initializer}
w = next(v for v in weights.values() if v.ndim == 4)
b = next(v for v in weights.values() if v.ndim == 1)

y, x = np.mgrid[0:224, 0:224]
img = np.stack([(7 * x + 3 * y + 11 * c) % 256 for c in range(3)]).astype(np.float32) / 255.0
mean = np.array([0.485, 0.456, 0.406], dtype=np.float32)[:, None, None]
std = np.array([0.229, 0.224, 0.225], dtype=np.float32)[:, None, None]
img = (img - mean) / std

out = torch.relu(torch.nn.functional.conv2d(torch.from_numpy(img[None]), torch.from_numpy(w), torch.from_numpy(b), stride=32))
pooled = out.mean(dim=(2, 3))[0].double().tolist()
with open("tiny_conv_expected.json", "w") as f:
    json.dump({"pooled": pooled, "shape": list(out.shape)}, f, indent=1)
