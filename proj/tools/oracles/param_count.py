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
"""Shape walk of the grading network: prints spatial extents and parameter count."""
import argparse
import json


def walk(cfg):
    size, ch, total = cfg["input_size"], 3, 0
    trace = []
    for blk in cfg["conv_blocks"]:
        k, s, p = blk["kernel"], blk["stride"], blk["pool"]
        total += blk["out_channels"] * ch * k * k + blk["out_channels"]
        ch = blk["out_channels"]
        size = (size + 2 * (k // 2) - k) // s + 1
        size //= p
        trace.append(size)
    a = cfg["attention_channels"]
    total += a * ch + a          # 1x1 projection
    total += a + 1               # 1x1 score
    total += a * cfg["hidden_units"] + cfg["hidden_units"]
    total += cfg["hidden_units"] * cfg["classes"] + cfg["classes"]
    return total, trace


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("config", nargs="?")
    args = ap.parse_args()
    cfg = {
        "input_size": 128,
        "conv_blocks": [{"out_channels": c, "kernel": 3, "stride": 1, "pool": 2}
                        for c in (16, 32, 64, 64)],
        "attention_channels": 64, "hidden_units": 64, "classes": 5,
    }
    if args.config:
        with open(args.config) as f:
            cfg = json.load(f)
    total, trace = walk(cfg)
    print(json.dumps({"parameters": total, "extents": trace}))
