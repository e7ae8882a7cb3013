#!/usr/bin/env python3
# Copyright 2026 The drgrade Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Writes a hand-built minimal checkpoint: tiny config, value k = ((k % 17) - 8) / 8."""
import json
import struct
import sys

config = {
    "attention_channels": 2,
    "classes": 5,
    "conv_blocks": [{"kernel": 3, "out_channels": 2, "pool": 2, "stride": 1}],
    "hidden_units": 3,
    "input_size": 8,
    "seed": 7,
}
shapes = [
    ("block0.conv.weight", [2, 3, 3, 3]),
    ("block0.conv.bias", [2]),
    ("attention.proj.weight", [2, 2, 1, 1]),
    ("attention.proj.bias", [2]),
    ("attention.score.weight", [1, 2, 1, 1]),
    ("attention.score.bias", [1]),
    ("head.hidden.weight", [2, 3]),
    ("head.hidden.bias", [3]),
    ("head.out.weight", [3, 5]),
    ("head.out.bias", [5]),
]

tensors, data, k = [], b"", 0
for name, shape in shapes:
    n = 1
    for d in shape:
        n *= d
    values = [((k + i) % 17 - 8) / 8 for i in range(n)]
    k += n
    tensors.append({"length": 4 * n, "name": name, "offset": len(data), "shape": shape})
    data += struct.pack("<%df" % n, *values)

header = json.dumps(
    {"config": config, "format_version": 1, "tensors": tensors,
     "training": {"epochs": 3, "final_loss": 0.5}},
    sort_keys=True, separators=(",", ":")).encode()
blob = b"DRCKPT" + struct.pack("<HI", 1, len(header)) + header + data
with open(sys.argv[1], "wb") as f:
    f.write(blob)
print(len(blob), k)
