"""Scalar cross-attention oracle for the hand-set 2x2 attention block."""
import math

Wq = [[1.0, 0.0], [0.0, 1.0]]
Wk = [[0.5, -1.0], [2.0, 0.25]]
Wv = [[1.0, 2.0], [-1.0, 0.5]]
bv = [0.1, -0.2]
Wo = [[1.0, 0.5], [0.0, -1.0]]
gate = 0.7


def vecmat(v, m):
    return [sum(v[i] * m[i][j] for i in range(len(v))) for j in range(len(m[0]))]


def block(x, ctx):
    mean = sum(x) / 2
    var = sum((a - mean) ** 2 for a in x) / 2
    xn = [(a - mean) / math.sqrt(var + 1e-5) for a in x]
    q = vecmat(xn, Wq)
    ks = [vecmat(c, Wk) for c in ctx]
    vs = [[a + b for a, b in zip(vecmat(c, Wv), bv)] for c in ctx]
    s = [sum(a * b for a, b in zip(q, k)) / math.sqrt(2) for k in ks]
    mx = max(s)
    w = [math.exp(a - mx) for a in s]
    z = sum(w)
    w = [a / z for a in w]
    o = [sum(w[j] * vs[j][e] for j in range(len(ctx))) for e in range(2)]
    o = vecmat(o, Wo)
    return [a + gate * b for a, b in zip(x, o)]


if __name__ == "__main__":
    x = [1.0, 3.0]
    e1, e2 = [0.5, -1.0], [2.0, 1.0]
    for name, ctx in [("one", [e1]), ("two", [e1, e2]), ("dup", [e1, e1, e2])]:
        print(name, ", ".join(f"{v:.17g}" for v in block(x, ctx)))
