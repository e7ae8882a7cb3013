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
"""Writes the metrics report fixture and its expected outputs.

Outputs (in the given directory):
  report_fixture.csv  truth,p0,p1,p2,p3,p4 per sample
  report_table.txt    expected aligned table
  report_expected.json  expected headline numbers and per-class counts

Metrics are computed by per-sample counting and O(n^2) pair counting,
independently of the C++ implementation.
"""
import json
import random
import sys
from fractions import Fraction
from pathlib import Path

GRADES = 5


def fixture(seed=2026, n=40):
    rng = random.Random(seed)
    rows = []
    for i in range(n):
        truth = i % 4  # grade 4 never occurs: its recall and AUC are undefined
        raw = [rng.randint(1, 9) for _ in range(GRADES)]
        raw[truth] += rng.choice([0, 4, 8])
        total = sum(raw)
        rows.append((truth, [round(r / total, 3) for r in raw]))
    return rows


def argmax_low(p):
    best = 0
    for i in range(1, len(p)):
        if p[i] > p[best]:
            best = i
    return best


def metrics(rows):
    pred = [argmax_low(p) for _, p in rows]
    truth = [t for t, _ in rows]
    per = []
    for c in range(GRADES):
        tp = sum(1 for t, q in zip(truth, pred) if t == c and q == c)
        fn = sum(1 for t, q in zip(truth, pred) if t == c and q != c)
        fp = sum(1 for t, q in zip(truth, pred) if t != c and q == c)
        tn = sum(1 for t, q in zip(truth, pred) if t != c and q != c)
        pos = [p[c] for t, p in rows if t == c]
        neg = [p[c] for t, p in rows if t != c]
        auc = None
        if pos and neg:
            wins = sum(Fraction(1) if a > b else Fraction(1, 2) if a == b else 0
                       for a in pos for b in neg)
            auc = float(wins / (len(pos) * len(neg)))
        per.append(dict(tp=tp, fn=fn, fp=fp, tn=tn,
                        precision=tp / (tp + fp) if tp + fp else None,
                        recall=tp / (tp + fn) if tp + fn else None,
                        auc=auc))

    def macro(key):
        vals = [m[key] for m in per if m[key] is not None]
        undefined = [c for c, m in enumerate(per) if m[key] is None]
        return (sum(vals) / len(vals) if vals else None), undefined

    acc = sum(1 for t, q in zip(truth, pred) if t == q) / len(rows)
    return per, macro("precision"), macro("recall"), macro("auc"), acc


def fmt(v):
    return "undefined" if v is None else f"{v:.4f}"


def table(name, prec, rec, auc, acc):
    header = ["Model", "Precision", "Recall", "AUC", "Overall Accuracy"]
    row = [name, fmt(prec[0]), fmt(rec[0]), fmt(auc[0]), fmt(acc)]
    widths = [max(len(h), len(r)) for h, r in zip(header, row)]

    def line(cells):
        out = [cells[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return " | ".join(out) + "\n"

    def idx(u):
        return ",".join(map(str, u)) if u else "none"

    return (line(header) + "-+-".join("-" * w for w in widths) + "\n" + line(row)
            + f"# precision, recall: macro over grades; AUC: macro one-vs-rest; undefined: "
              f"precision {idx(prec[1])}, recall {idx(rec[1])}, auc {idx(auc[1])}\n")


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else ".")
    rows = fixture()
    with open(out / "report_fixture.csv", "w") as f:
        f.write("truth,p0,p1,p2,p3,p4\n")
        for t, p in rows:
            f.write(f"{t}," + ",".join(f"{v:.3f}" for v in p) + "\n")
    per, prec, rec, auc, acc = metrics(rows)
    (out / "report_table.txt").write_text(table("fixture-model", prec, rec, auc, acc))
    expected = {"precision": prec[0], "recall": rec[0], "auc": auc[0], "accuracy": acc,
                "undefined": {"precision": prec[1], "recall": rec[1], "auc": auc[1]},
                "per_class": [{k: m[k] for k in ("tp", "tn", "fp", "fn")} for m in per]}
    (out / "report_expected.json").write_text(json.dumps(expected, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
