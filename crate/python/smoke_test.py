#!/usr/bin/env python3
"""Smoke test for the vertinfer Python extension.

Build the module first, then run this script from the repository root:

    cargo build -p vertinfer-py --release
    python3 python/smoke_test.py
"""

import importlib.machinery
import importlib.util
import math
import os
import sys

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_vertinfer():
    candidates = [
        os.path.join(ROOT, "target", profile, name)
        for profile in ("release", "debug")
        for name in ("libvertinfer.so", "vertinfer.dll", "libvertinfer.dylib")
    ]
    for path in candidates:
        if os.path.exists(path):
            loader = importlib.machinery.ExtensionFileLoader("vertinfer", path)
            spec = importlib.util.spec_from_loader("vertinfer", loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit(
        "vertinfer extension not found; run `cargo build -p vertinfer-py` first"
    )


vi = load_vertinfer()


def check(name, ok, detail=""):
    status = "ok" if ok else "FAIL"
    print(f"  {name}: {status}" + (f" ({detail})" if detail else ""))
    if not ok:
        sys.exit(1)


def max_abs_diff(a, b):
    return max(abs(x - y) for x, y in zip(a, b))


print("params")
params = vi.Params("tiny256")
check("preset", params.ring_degree == 256 and params.slots == 128, repr(params))
check("hash", len(params.params_hash) == 64)
check("json roundtrip", vi.Params.from_json(params.to_json()).params_hash == params.params_hash)

print("encrypt/decrypt")
sk, pk = vi.keygen(params, seed=1)
values = [math.sin(0.1 * i) for i in range(params.slots)]
ct = vi.encrypt(params, pk, values, seed=2)
decoded = vi.decrypt(params, sk, ct)
check("roundtrip", max_abs_diff(decoded, values) < 5e-3, f"err {max_abs_diff(decoded, values):.2e}")

print("homomorphic ops")
other = [math.cos(0.2 * i) for i in range(params.slots)]
ct2 = vi.encrypt(params, pk, other, seed=3)
got = vi.decrypt(params, sk, vi.add(params, ct, ct2))
want = [x + y for x, y in zip(values, other)]
check("add", max_abs_diff(got, want) < 5e-3)

rlk = vi.relin_keygen(params, sk, seed=4)
got = vi.decrypt(params, sk, vi.multiply(params, ct, ct2, rlk))
want = [x * y for x, y in zip(values, other)]
check("multiply", max_abs_diff(got, want) < 5e-3)

rk = vi.rot_keygen(params, sk, 5, seed=5)
got = vi.decrypt(params, sk, vi.rotate(params, ct, 5, rk))
want = values[5:] + values[:5]
check("rotate", max_abs_diff(got, want) < 5e-3)

print("packing")
part = vi.Partition(4, [0, 1, 3])
check("partition", part.n_parties == 3 and part.range(1) == (1, 3))
row = [1.0, 2.0, 3.0, 4.0]
packed = [
    vi.pack(params, part, p, 1, row[part.range(p)[0]:part.range(p)[1]])
    for p in range(part.n_parties)
]
merged = [sum(col) for col in zip(*packed)]
check("pack sums to whole", vi.unpack(params, 1, 4, merged) == row)

print("model")
mlp = vi.toy_mlp()
check("shape", mlp.input_shape == (2, 2) and mlp.depth >= 1)
y = mlp.predict([0.5, -0.25, 1.0, 0.125])
check("clear inference", len(y) == 2, f"y = {y}")
cnn = vi.digit_cnn(seed=42)
check("cnn parameters", cnn.parameter_count == 1198)
digits = vi.synthetic_digits(2, seed=7)
check("digits", len(digits) == 2 and len(digits[0][0]) == 784)

print("simulated session (2 parties, 2 records)")
table = [[0.5, -0.25, 1.0, 0.125], [-0.75, 0.3, -0.2, 0.9]]
scores = vi.run_session(params, mlp, [0, 1], table, [0, 1], seed=11)
worst = 0.0
for row, score in zip(table, scores):
    worst = max(worst, max_abs_diff(score, mlp.predict(row)))
check("matches clear inference", worst < 5e-2, f"worst err {worst:.2e}")

print("smoke test passed")
