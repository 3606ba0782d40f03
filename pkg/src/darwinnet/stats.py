"""Group summaries and Tukey-Kramer all-pairs comparisons.

The studentized range upper tail is computed by direct double quadrature:
the inner integral is the probability that the range of k standard
normals stays below r, the outer integral averages that over the chi
distribution of the pooled scale estimate. Fixed-order Gauss-Legendre
panels keep every call deterministic; no statistical library is involved.
"""

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

# quadrature layout, validated once at import via set_quadrature
_QUAD = {}


def set_quadrature(z_half_range=8.0, z_panels=16, z_nodes=20,
                   s_panels=24, s_nodes=16):
    """Install the panel layout; rejects layouts too coarse to converge."""
    if z_half_range < 6:
        raise ValueError("z range must cover at least 6 standard deviations")
    if min(z_panels, s_panels) < 4 or min(z_nodes, s_nodes) < 4:
        raise ValueError("quadrature needs at least 4 panels of 4 nodes")
    xz, wz = np.polynomial.legendre.leggauss(z_nodes)
    xs, ws = np.polynomial.legendre.leggauss(s_nodes)
    _QUAD.update(z_half_range=float(z_half_range), z_panels=int(z_panels),
                 zx=xz, zw=wz, s_panels=int(s_panels), sx=xs, sw=ws)


set_quadrature()


def _erfc(x):
    """Vectorized complementary error function, |rel err| < 1.3e-7."""
    x = np.asarray(x, dtype=np.float64)
    z = np.abs(x)
    t = 1.0 / (1.0 + 0.5 * z)
    poly = -1.26551223 + t * (1.00002368 + t * (0.37409196 + t * (
        0.09678418 + t * (-0.18628806 + t * (0.27886807 + t * (
            -1.13520398 + t * (1.48851587 + t * (
                -0.82215223 + t * 0.17087277))))))))
    ans = t * np.exp(-z * z + poly)
    return np.where(x >= 0, ans, 2.0 - ans)


def _norm_cdf(x):
    return 0.5 * _erfc(-np.asarray(x) / math.sqrt(2.0))


def _panel_nodes(lo, hi, panels, x, w):
    """Composite Gauss-Legendre nodes/weights over [lo, hi]."""
    edges = np.linspace(lo, hi, panels + 1)
    half = np.diff(edges) / 2.0
    mid = (edges[:-1] + edges[1:]) / 2.0
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _range_cdf(r, k):
    """P(range of k standard normals <= r) for a vector of r values."""
    r = np.asarray(r, dtype=np.float64)
    zh = _QUAD["z_half_range"]
    z, wz = _panel_nodes(-zh, zh, _QUAD["z_panels"], _QUAD["zx"], _QUAD["zw"])
    phi = np.exp(-z * z / 2.0) / math.sqrt(2.0 * math.pi)
    span = _norm_cdf(z[None, :] + r[:, None]) - _norm_cdf(z)[None, :]
    inner = (phi * wz)[None, :] * np.clip(span, 0.0, 1.0) ** (k - 1)
    return np.clip(k * inner.sum(axis=1), 0.0, 1.0)


def studentized_range_sf(q, k, df):
    """Upper tail P(Q > q) of the studentized range for k groups, df dof."""
    if k < 2:
        raise ValueError("studentized range needs k >= 2 groups")
    if df < 1:
        raise ValueError("df must be >= 1")
    q = float(q)
    if q <= 0:
        return 1.0
    if math.isinf(q):
        return 0.0
    # outer variable: s = sqrt(chi2_df / df); density concentrates at 1
    hi = max(2.5, 1.0 + 12.0 / math.sqrt(2.0 * df)) if df > 1 else 9.0
    s, ws = _panel_nodes(1e-9, hi, _QUAD["s_panels"], _QUAD["sx"], _QUAD["sw"])
    logf = (math.log(2.0) + (df / 2.0) * math.log(df / 2.0)
            - math.lgamma(df / 2.0)) + (df - 1) * np.log(s) - df * s * s / 2.0
    cdf = float(np.sum(np.exp(logf) * ws * _range_cdf(q * s, k)))
    return float(np.clip(1.0 - cdf, 0.0, 1.0))


# group statistics ------------------------------------------------------------------

def summarize(groups):
    """Per-group n, mean, sample std (n-1 denominator; std None when n < 2)."""
    out = []
    for name, values in groups.items():
        v = np.asarray(values, dtype=np.float64)
        if v.size < 1:
            raise ValueError(f"group {name!r} is empty")
        std = float(v.std(ddof=1)) if v.size >= 2 else None
        out.append({"group": name, "n": int(v.size),
                    "mean": float(v.mean()), "std": std})
    return out


@dataclass
class PairwiseResult:
    group_a: str
    group_b: str
    q: float
    p: float
    inference: str              # "insignificant" | "*" | "**"
    degenerate: bool = False

    def to_json(self):
        return {"group_a": self.group_a, "group_b": self.group_b,
                "q": self.q, "p": self.p, "inference": self.inference,
                "degenerate": self.degenerate}


def _label(p, alpha):
    # two-star convention: * below alpha, ** below alpha/5 (0.01 at 0.05)
    if p < alpha / 5.0:
        return "**"
    if p < alpha:
        return "*"
    return "insignificant"


def tukey_kramer(groups, alpha=0.05):
    """All-pairs comparisons with the Kramer unequal-n correction.

    groups: {name: values}, every group n >= 2, at least 2 groups. MSE is
    the pooled within-group variance; df = N - k. Pair order follows the
    dict's group order.
    """
    if len(groups) < 2:
        raise ValueError("need at least 2 groups")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    names = list(groups)
    data = {}
    for name in names:
        v = np.asarray(groups[name], dtype=np.float64)
        if v.size < 2:
            raise ValueError(f"group {name!r} needs n >= 2 for inference")
        data[name] = v
    k = len(names)
    n_total = sum(v.size for v in data.values())
    df = n_total - k
    sse = sum(float(((v - v.mean()) ** 2).sum()) for v in data.values())
    mse = sse / df

    results = []
    for a, b in combinations(names, 2):
        va, vb = data[a], data[b]
        delta = abs(float(va.mean() - vb.mean()))
        if mse == 0.0:
            if delta == 0.0:
                q, p, degen = 0.0, 1.0, False
            else:
                q, p, degen = math.inf, 0.0, True
        else:
            se = math.sqrt((mse / 2.0) * (1.0 / va.size + 1.0 / vb.size))
            q = delta / se
            p = studentized_range_sf(q, k, df)
            degen = False
        results.append(PairwiseResult(a, b, float(q), float(p),
                                      _label(p, alpha), degen))
    return results


def significance_report(records_by_class, metrics=("area", "eccentricity",
                                                   "circularity", "solidity"),
                        alpha=0.05):
    """One pairwise table per morphometric, over per-class record lists."""
    if len(records_by_class) < 2:
        raise ValueError("need at least 2 classes")
    tables = {}
    for metric in metrics:
        groups = {name: [getattr(r, metric) for r in recs]
                  for name, recs in records_by_class.items()}
        tables[metric] = tukey_kramer(groups, alpha=alpha)
    return tables


def write_significance_csv(tables, path):
    """CSV rows (metric, group1, group2, Q, p, inference), repr precision."""
    lines = ["metric,group1,group2,Q,p,inference"]
    for metric in tables:
        for r in tables[metric]:
            lines.append(f"{metric},{r.group_a},{r.group_b},"
                         f"{repr(r.q)},{repr(r.p)},{r.inference}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
