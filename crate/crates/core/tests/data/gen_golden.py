"""Independent NumPy forward pass for the seeded merger weights.

Reads the weight bundle in golden_weights/ and golden_input.setk (written by
`cargo test --test golden -- --ignored write_golden_inputs`) and writes
attention_golden.json next to this script.
"""

import json
import struct
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
NAMES = ["ln1_gamma", "ln1_beta", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
         "ln2_gamma", "ln2_beta", "w1", "b1", "w2", "b2"]


def read_setk(path):
    raw = path.read_bytes()
    assert raw[:4] == b"SETK"
    version, rank = struct.unpack_from("<HH", raw, 4)
    assert version == 1
    dims = struct.unpack_from("<" + "I" * rank, raw, 8)
    data = np.frombuffer(raw, dtype="<f4", offset=8 + 4 * rank)
    return data.astype(np.float64).reshape(dims)


def layer_norm(x, gamma, beta, eps=1e-5):
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gamma + beta


def gelu_tanh(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x ** 3)))


def block(x, w, heads):
    n, d = x.shape
    dh = d // heads
    a = layer_norm(x, w["ln1_gamma"], w["ln1_beta"])
    q, k, v = a @ w["wq"] + w["bq"], a @ w["wk"] + w["bk"], a @ w["wv"] + w["bv"]
    ctx = np.zeros_like(x)
    for h in range(heads):
        s = slice(h * dh, (h + 1) * dh)
        logits = q[:, s] @ k[:, s].T / np.sqrt(dh)
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        ctx[:, s] = p @ v[:, s]
    y = x + ctx @ w["wo"] + w["bo"]
    hidden = gelu_tanh(layer_norm(y, w["ln2_gamma"], w["ln2_beta"]) @ w["w1"] + w["b1"])
    return y + hidden @ w["w2"] + w["b2"]


def main():
    bundle = HERE / "golden_weights"
    manifest = json.loads((bundle / "manifest.json").read_text())
    x = read_setk(HERE / "golden_input.setk")
    for i in range(manifest["blocks"]):
        w = {}
        for name in NAMES:
            t = read_setk(bundle / f"block{i}.{name}.setk")
            w[name] = t[0] if t.shape[0] == 1 and name[0] != "w" else t
        x = block(x, w, manifest["heads"])
    out = {"input": read_setk(HERE / "golden_input.setk").tolist(), "output": x.tolist()}
    (HERE / "attention_golden.json").write_text(json.dumps(out, indent=2) + "\n")


if __name__ == "__main__":
    main()
