"""Slow reference implementations written directly from the metric definitions."""


def loop_metrics(x, equity, illiquidity, shock):
    """Return (gamma, S, IV, r) using explicit loops over banks and assets."""
    n, k = len(x), len(x[0])
    a = [sum(x[i][j] for j in range(k)) for i in range(n)]
    e_tot = sum(equity)
    b = [(a[i] - equity[i]) / equity[i] for i in range(n)]
    w = [[x[i][j] / a[i] for j in range(k)] for i in range(n)]
    r = [sum(w[i][j] * shock[j] for j in range(k)) for i in range(n)]
    cap = [sum(a[m] * w[m][j] for m in range(n)) for j in range(k)]
    gamma = [sum(cap[j] * illiquidity[j] * w[i][j] for j in range(k)) for i in range(n)]
    s = [gamma[i] * a[i] / e_tot * b[i] * r[i] for i in range(n)]
    iv = []
    for i in range(n):
        total = 0.0
        for j in range(k):
            inner = 0.0
            for m in range(n):
                inner += w[m][j] * a[m] * b[m] * r[m]
            total += illiquidity[j] * w[i][j] * inner
        iv.append((1 + b[i]) * total)
    return gamma, s, iv, r
