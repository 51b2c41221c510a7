"""Writes the tiny ONNX graphs used by the neural backend tests.

detector.onnx: SuperPoint-shaped outputs. Cell channel c fires on the pixel at
offset (c % 8, c // 8), so a bright pixel yields a keypoint at its location.
matcher.onnx: log dual-softmax of descriptor similarity minus squared
keypoint distance.
"""
import pathlib

import torch

torch.manual_seed(0)
HERE = pathlib.Path(__file__).parent


class Detector(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.semi = torch.nn.Conv2d(1, 65, 8, stride=8)
        self.desc = torch.nn.Conv2d(1, 16, 8, stride=8)
        with torch.no_grad():
            self.semi.weight.zero_()
            for c in range(64):
                self.semi.weight[c, 0, c // 8, c % 8] = 12.0
            self.semi.bias.zero_()
            self.semi.bias[64] = 4.0
            self.desc.bias.uniform_(-1.0, 1.0)

    def forward(self, image):
        return self.semi(image), self.desc(image)


class Matcher(torch.nn.Module):
    def forward(self, kpts0, kpts1, desc0, desc1):
        dist = ((kpts0[:, :, None, :] - kpts1[:, None, :, :]) ** 2).sum(-1)
        sim = 20.0 * desc0 @ desc1.transpose(1, 2) - dist
        return torch.log_softmax(sim, 2) + torch.log_softmax(sim, 1)


torch.onnx.export(
    Detector(),
    (torch.zeros(1, 1, 64, 64),),
    HERE / "detector.onnx",
    input_names=["image"],
    output_names=["semi", "desc"],
    dynamic_axes={"image": {2: "h", 3: "w"}},
    dynamo=False,
)
torch.onnx.export(
    Matcher(),
    (torch.zeros(1, 5, 2), torch.zeros(1, 6, 2), torch.zeros(1, 5, 16), torch.zeros(1, 6, 16)),
    HERE / "matcher.onnx",
    input_names=["kpts0", "kpts1", "desc0", "desc1"],
    output_names=["scores"],
    dynamic_axes={"kpts0": {1: "m"}, "kpts1": {1: "n"}, "desc0": {1: "m"}, "desc1": {1: "n"}},
    dynamo=False,
)
