#!/usr/bin/env python3
"""Reference adapter for the chsurgeon external-scorer protocol.

Needs no model weights. Two scoring modes:

  closed form (default)   score(map) = 0.5 + sum over edited channels c of
                          ((31*c + 17*(m(c)+1)) % 11 - 5) / 100; every image
                          gets the same value. The identity map scores 0.5.
  linear (--cache/--head) thresholded linear head over a FEATC01 cache, scored
                          by mean IoU with the same arithmetic order as the
                          engine's built-in segmentation scorer.

--misbehave injects protocol faults for conformance tests.
"""

import argparse
import json
import os
import struct
import sys
import time

BASELINE = 0.5


def read_featc(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != b"FEATC01\0":
        raise SystemExit("bad magic in " + path)
    d, c, h, w, dtype, _ = struct.unpack_from("<6I", data, 8)
    if dtype != 0:
        raise SystemExit("unsupported dtype")
    n = d * c * h * w
    values = struct.unpack_from("<%df" % n, data, 32)
    return (d, c, h, w), values


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    tokens, pos = [], 2
    while len(tokens) < 3:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while data[pos:pos + 1].isdigit():
            pos += 1
        tokens.append(int(data[start:pos]))
    cols, rows, _ = tokens
    pos += 1
    return [1 if b else 0 for b in data[pos:pos + rows * cols]]


class LinearModel:
    def __init__(self, cache_path, head_path):
        (self.d, self.c, self.h, self.w), self.x = read_featc(cache_path)
        with open(cache_path + ".json") as f:
            manifest = json.load(f)
        base = os.path.dirname(cache_path)
        self.gt = [read_pgm(os.path.join(base, im["gt"])) for im in manifest["images"]]
        with open(head_path) as f:
            head = json.load(f)
        self.weights = [float(v) for v in head["weights"]]
        self.bias = float(head.get("bias", 0.0))

    def score_image(self, m, d):
        plane = self.h * self.w
        logits = [self.bias] * plane
        for c in range(self.c):
            wt = self.weights[c]
            if wt == 0.0:
                continue
            if m[c] == -1:
                for p in range(plane):
                    logits[p] += wt * 0.0
                continue
            off = (d * self.c + m[c]) * plane
            for p in range(plane):
                logits[p] += wt * self.x[off + p]
        inter = union = 0
        gt = self.gt[d]
        for p in range(plane):
            pr = logits[p] > 0.0
            g = gt[p] != 0
            inter += pr and g
            union += pr or g
        return 1.0 if union == 0 else inter / union


def closed_form(m):
    total = BASELINE
    for c, t in enumerate(m):
        if t != c:
            total += ((31 * c + 17 * (t + 1)) % 11 - 5) / 100.0
    return total


def send(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--channels", type=int, default=8)
    ap.add_argument("--images", type=int, default=4)
    ap.add_argument("--metric", default="miou")
    ap.add_argument("--cache")
    ap.add_argument("--head")
    ap.add_argument("--misbehave", default="",
                    choices=["", "garbage", "wrong-type", "wrong-id", "crash", "hang", "bad-ready"])
    args = ap.parse_args()

    model = None
    channels, images = args.channels, args.images
    if args.cache:
        model = LinearModel(args.cache, args.head)
        channels, images = model.c, model.d

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except ValueError:
            send({"type": "error", "id": -1, "message": "request is not JSON"})
            continue
        kind = msg.get("type")
        if kind == "hello":
            if args.misbehave == "bad-ready":
                send({"type": "ready", "metric": args.metric})
            else:
                send({"type": "ready", "channels": channels, "images": images, "metric": args.metric})
        elif kind == "score":
            rid = msg.get("id")
            if args.misbehave == "garbage":
                sys.stdout.write("this is not json\n")
                sys.stdout.flush()
                continue
            if args.misbehave == "wrong-type":
                send({"type": "banana", "id": rid})
                continue
            if args.misbehave == "wrong-id":
                send({"type": "result", "id": rid + 1, "aggregate": 0.0, "per_image": []})
                continue
            if args.misbehave == "crash":
                sys.exit(3)
            if args.misbehave == "hang":
                time.sleep(3600)
            m = msg.get("map")
            if not isinstance(m, list) or len(m) != channels or any(
                    not isinstance(t, int) or t < -1 or t >= channels for t in m):
                send({"type": "error", "id": rid, "message": "invalid channel map"})
                continue
            subset = msg.get("images")
            if subset is None:
                subset = list(range(images))
            if not subset or any(not isinstance(i, int) or i < 0 or i >= images for i in subset):
                send({"type": "error", "id": rid, "message": "invalid image subset"})
                continue
            if model is None:
                per_image = [closed_form(m)] * len(subset)
            else:
                per_image = [model.score_image(m, d) for d in subset]
            total = 0.0
            for v in per_image:
                total += v
            send({"type": "result", "id": rid, "aggregate": total / len(per_image), "per_image": per_image})
        elif kind == "bye":
            return 0
        else:
            send({"type": "error", "id": msg.get("id", -1), "message": "unknown message type"})
    return 0


if __name__ == "__main__":
    sys.exit(main())
