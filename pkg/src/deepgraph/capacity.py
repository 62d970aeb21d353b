"""Attention-capacity measurement and numerical bound verification.

Attention capacity is the largest Frobenius-norm gap between self-attention
outputs as the attention matrix ranges over convex combinations of
substructure patterns. Because the objective is convex in each attention
column, the maximum sits at vertices (one-hot columns), giving a closed form:
sqrt(n) times the largest pairwise distance between per-substructure mean
value vectors. The verifiers below instantiate the simplified residual
stacks behind the depth-decay bounds and check them trial by trial, with
the norm-preservation assumption enforced exactly by rescaling each layer's
diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import ForwardTrace, ModelParams


def centering(n: int) -> np.ndarray:
    return np.eye(n) - np.ones((n, n)) / n


def pattern_basis(memberships, num_nodes: int) -> np.ndarray:
    """Columns are uniform distributions over each substructure's node set."""
    if not memberships:
        raise ValueError("need at least one substructure pattern")
    E = np.zeros((num_nodes, len(memberships)))
    for j, nodes in enumerate(memberships):
        nodes = list(nodes)
        if not nodes:
            raise ValueError(f"pattern {j} is empty")
        E[nodes, j] = 1.0 / len(nodes)
    return E


def spectral_norm(mat: np.ndarray, tol: float = 1e-10, max_iter: int = 10000, rng=None) -> float:
    """Largest singular value by subspace power iteration on M^T M.

    Iterates a small block (width up to 4) with a Rayleigh-Ritz step, so a
    nearly tied top pair, which stalls single-vector iteration, is captured
    inside the block and converges at the gap to the next value outside it.
    Stops when the eigen-residual |M^T M u - theta u| falls below
    ``tol * max(1, theta)``, certifying theta is within that residual of a
    true squared singular value. Raises RuntimeError on non-convergence.
    """
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    if mat.size == 0 or not np.any(mat):
        return 0.0
    rng = np.random.default_rng(0) if rng is None else rng
    cols = mat.shape[1]
    k = min(4, cols)
    V, _ = np.linalg.qr(rng.standard_normal((cols, k)))
    for _ in range(max_iter):
        W = mat.T @ (mat @ V)
        T = V.T @ W
        T = (T + T.T) / 2
        evals, evecs = np.linalg.eigh(T)
        theta = float(evals[-1])
        if theta <= 0.0:
            return 0.0
        y = evecs[:, -1]
        u = V @ y
        residual = np.linalg.norm(W @ y - theta * u)
        if residual <= tol * max(1.0, theta):
            return float(np.sqrt(theta))
        V, _ = np.linalg.qr(W)
    raise RuntimeError(f"power iteration did not converge within {max_iter} steps")


def attention_capacity(H: np.ndarray, E: np.ndarray, Wvo: np.ndarray) -> float:
    """Closed form of the capacity maximum: the Frobenius objective over the
    simplex product is attained at one-hot columns, so it reduces to the
    largest pairwise row distance of E^T H W^{VO}, scaled by sqrt(n)."""
    H = np.asarray(H)
    E = np.asarray(E)
    if E.ndim != 2 or E.shape[1] < 1:
        raise ValueError("pattern basis must have at least one column")
    n = E.shape[0]
    if H.shape[0] != n:
        raise ValueError(f"H has {H.shape[0]} rows, pattern basis expects {n}")
    V = E.T @ H @ Wvo
    diffs = V[:, None, :] - V[None, :, :]
    return float(np.sqrt(n) * np.sqrt((diffs ** 2).sum(axis=-1)).max())


def _head_vo(params: ModelParams, layer: int) -> list:
    lp = params.layer(layer)
    return [lp["wv"][h] @ lp["wo"][h] for h in range(params.config.heads)]


def normalized_capacity(trace: ForwardTrace, E: np.ndarray, params: ModelParams, layer: int) -> float:
    """Capacity at ``layer`` divided by the summed value-vector norms of the
    node tokens; averaged over heads."""
    if not 0 <= layer < params.config.n_layers:
        raise ValueError(f"layer {layer} out of range")
    n = trace.n
    H = trace.hidden[layer][:n]
    vals = []
    for wvo in _head_vo(params, layer):
        denom = float(np.linalg.norm(H @ wvo, axis=1).sum())
        if denom == 0.0:
            raise ValueError("zero value-vector norm; capacity undefined")
        vals.append(attention_capacity(H, E, wvo) / denom)
    return float(np.mean(vals))


def token_capacity(trace: ForwardTrace, params: ModelParams, layer: int) -> float:
    """Largest gap between substructure-token value vectors over their mean
    norm; averaged over heads. Needs at least two substructure tokens."""
    if trace.m < 2:
        raise ValueError("token capacity needs at least 2 substructure tokens")
    if not 0 <= layer < params.config.n_layers:
        raise ValueError(f"layer {layer} out of range")
    S = trace.hidden[layer][trace.n:]
    vals = []
    for wvo in _head_vo(params, layer):
        V = S @ wvo
        diffs = np.sqrt(((V[:, None, :] - V[None, :, :]) ** 2).sum(axis=-1))
        denom = float(np.linalg.norm(V, axis=1).mean())
        if denom == 0.0:
            raise ValueError("zero value-vector norm; token capacity undefined")
        vals.append(diffs.max() / denom)
    return float(np.mean(vals))


def _as_diag(D) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64)
    return np.diag(D) if D.ndim == 1 else D


def alpha_coefficient(H: np.ndarray, A: np.ndarray, Wvo: np.ndarray, b: np.ndarray, D) -> float:
    """Per-layer contraction ratio of the centered attention-module output.

    At most 1 by construction; equals 1 only when the module output carries
    no all-ones component, which random parameters never produce.
    """
    H = np.asarray(H)
    n = H.shape[0]
    D = _as_diag(D)
    P = centering(n)
    PH = P @ H
    ones_b = np.outer(np.ones(n), np.asarray(b))
    num = np.linalg.norm((PH + P @ A @ H @ Wvo) @ D)
    den = np.linalg.norm((PH + A @ PH @ Wvo - ones_b) @ D)
    if den == 0.0:
        raise ValueError("alpha denominator is zero")
    return float(num / den)


def lambda_coefficient(H: np.ndarray, A: np.ndarray, Wvo: np.ndarray, b: np.ndarray, D) -> float:
    """Norm-change ratio of one simplified attention layer (diagnostic)."""
    H = np.asarray(H)
    n = H.shape[0]
    D = _as_diag(D)
    P = centering(n)
    PH = P @ H
    ones_b = np.outer(np.ones(n), np.asarray(b))
    den = np.linalg.norm(PH)
    if den == 0.0:
        raise ValueError("lambda undefined for centered-zero input")
    return float(np.linalg.norm((PH + A @ PH @ Wvo - ones_b) @ D) / den)


def gamma_coefficient(D_prime, W_f1: np.ndarray, W_f2: np.ndarray,
                      tol: float = 1e-10, max_iter: int = 10000) -> float:
    """FFN amplification bound: |D'|_2 (1 + |W_F1|_2 |W_F2|_2)."""
    d_norm = spectral_norm(_as_diag(D_prime), tol, max_iter)
    return float(d_norm * (1.0 + spectral_norm(W_f1, tol, max_iter) * spectral_norm(W_f2, tol, max_iter)))


def _random_patterns(n: int, m: int, rng) -> list:
    memberships = []
    for _ in range(m):
        size = int(rng.integers(2, n + 1)) if n > 1 else 1
        memberships.append(tuple(sorted(rng.choice(n, size=size, replace=False).tolist())))
    return memberships


def _pattern_attention(E: np.ndarray, rng) -> np.ndarray:
    """Row-stochastic attention whose rows are convex combinations of the
    pattern columns; transposed columns lie in the pattern simplex."""
    n, m = E.shape
    C = rng.dirichlet(np.ones(m), size=n).T          # (m, n), simplex columns
    return (E @ C).T


def _scaled_diag_for_unit_lambda(H, A, Wvo, b, base_diag) -> np.ndarray:
    lam = lambda_coefficient(H, A, Wvo, b, base_diag)
    return base_diag / lam


@dataclass
class TrialReport:
    theorem: int
    trials: int
    violations: int
    max_ratio: float
    alphas_below_one: bool
    min_alpha: float
    max_alpha: float
    seed: Optional[int] = None
    details: dict = field(default_factory=dict)


def verify_theorem1(depth: int, n: int, m: int, d: int, trials: int,
                    rng=None, seed: Optional[int] = None) -> TrialReport:
    """Run random simplified attention stacks and check the capacity bound
    sqrt(2m) * prod(alpha_i) * |P_m E^T|_2 * |W_l|_2 * |P H_1|_F per layer.

    Arguments are per-trial maxima; each trial draws its own depth and
    sizes. The layer diagonals are rescaled so each layer preserves the
    centered norm exactly, matching the bound's normalization assumption.
    """
    rng = np.random.default_rng(seed) if rng is None else rng
    violations = 0
    max_ratio = 0.0
    min_alpha, max_alpha = np.inf, -np.inf
    checked = 0
    for _ in range(trials):
        L = int(rng.integers(1, depth + 1))
        n_t = int(rng.integers(2, n + 1))
        m_t = int(rng.integers(1, m + 1))
        d_t = max(d, n_t)  # full row rank of H W D needs d >= n
        E = pattern_basis(_random_patterns(n_t, m_t, rng), n_t)
        Pm_Et_norm = spectral_norm(centering(m_t) @ E.T)
        H = rng.standard_normal((n_t, d_t))
        PH1_norm = float(np.linalg.norm(centering(n_t) @ H))
        weights = [rng.standard_normal((d_t, d_t)) / np.sqrt(d_t) for _ in range(L)]
        alphas = []
        for layer in range(L):
            F = attention_capacity(H, E, weights[layer])
            bound = (np.sqrt(2 * m_t) * np.prod(alphas)
                     * Pm_Et_norm * spectral_norm(weights[layer]) * PH1_norm)
            checked += 1
            if bound > 0:
                max_ratio = max(max_ratio, F / bound)
            if F > bound * (1 + 1e-9):
                violations += 1
            if layer == L - 1:
                break
            A = _pattern_attention(E, rng)
            b = rng.standard_normal(d_t)
            D = _scaled_diag_for_unit_lambda(H, A, weights[layer], b,
                                             rng.uniform(0.5, 1.5, d_t))
            alpha = alpha_coefficient(H, A, weights[layer], b, D)
            alphas.append(alpha)
            min_alpha = min(min_alpha, alpha)
            max_alpha = max(max_alpha, alpha)
            H = (H + A @ H @ weights[layer] - np.outer(np.ones(n_t), b)) @ np.diag(D)
    return TrialReport(
        theorem=1, trials=trials, violations=violations, max_ratio=float(max_ratio),
        alphas_below_one=bool(max_alpha < 1.0), min_alpha=float(min_alpha),
        max_alpha=float(max_alpha), seed=seed,
        details={"layer_checks": checked, "max_depth": depth, "max_n": n, "max_m": m},
    )


def verify_theorem2(depth: int, n: int, m: int, d: int, trials: int,
                    rng=None, seed: Optional[int] = None) -> TrialReport:
    """Same stack as theorem 1 with an FFN sublayer per layer; the bound
    gains a gamma factor per layer."""
    rng = np.random.default_rng(seed) if rng is None else rng
    violations = 0
    max_ratio = 0.0
    min_alpha, max_alpha = np.inf, -np.inf
    checked = 0
    for _ in range(trials):
        L = int(rng.integers(1, depth + 1))
        n_t = int(rng.integers(2, n + 1))
        m_t = int(rng.integers(1, m + 1))
        d_t = max(d, n_t)
        E = pattern_basis(_random_patterns(n_t, m_t, rng), n_t)
        Pm_Et_norm = spectral_norm(centering(m_t) @ E.T)
        H = rng.standard_normal((n_t, d_t))
        PH1_norm = float(np.linalg.norm(centering(n_t) @ H))
        weights = [rng.standard_normal((d_t, d_t)) / np.sqrt(d_t) for _ in range(L)]
        factors = []
        for layer in range(L):
            F = attention_capacity(H, E, weights[layer])
            bound = (np.sqrt(2 * m_t) * np.prod(factors)
                     * Pm_Et_norm * spectral_norm(weights[layer]) * PH1_norm)
            checked += 1
            if bound > 0:
                max_ratio = max(max_ratio, F / bound)
            if F > bound * (1 + 1e-9):
                violations += 1
            if layer == L - 1:
                break
            A = _pattern_attention(E, rng)
            b = rng.standard_normal(d_t)
            D = _scaled_diag_for_unit_lambda(H, A, weights[layer], b,
                                             rng.uniform(0.5, 1.5, d_t))
            alpha = alpha_coefficient(H, A, weights[layer], b, D)
            min_alpha = min(min_alpha, alpha)
            max_alpha = max(max_alpha, alpha)
            H_mid = (H + A @ H @ weights[layer] - np.outer(np.ones(n_t), b)) @ np.diag(D)
            w1 = rng.standard_normal((d_t, d_t)) / np.sqrt(d_t)
            w2 = rng.standard_normal((d_t, d_t)) / np.sqrt(d_t)
            b1 = rng.standard_normal(d_t)
            b2 = rng.standard_normal(d_t)
            b_n2 = rng.standard_normal(d_t)
            D_prime = rng.uniform(0.5, 1.5, d_t)
            gamma = gamma_coefficient(D_prime, w1, w2)
            factors.append(alpha * gamma)
            hidden = np.maximum(H_mid @ w1 + b1, 0.0)
            H = (H_mid + hidden @ w2 + np.outer(np.ones(n_t), b2 - b_n2)) @ np.diag(D_prime)
    return TrialReport(
        theorem=2, trials=trials, violations=violations, max_ratio=float(max_ratio),
        alphas_below_one=bool(max_alpha < 1.0), min_alpha=float(min_alpha),
        max_alpha=float(max_alpha), seed=seed,
        details={"layer_checks": checked, "max_depth": depth, "max_n": n, "max_m": m},
    )


def block_layout(n: int, m: int, r_max: int) -> list:
    """Partition nodes into m blocks so co-membership stays within r_max."""
    if r_max >= n:
        raise ValueError("r_max must be below n")
    sizes = [n // m + (1 if i < n % m else 0) for i in range(m)]
    if max(sizes) - 1 > r_max:
        raise ValueError(f"blocks of size {max(sizes)} exceed co-membership bound {r_max}")
    blocks = []
    start = 0
    for s in sizes:
        blocks.append(tuple(range(start, start + s)))
        start += s
    return blocks


def local_attention_matrix(blocks, n: int, rng) -> np.ndarray:
    """Each node's attention row is a random distribution over its block."""
    A = np.zeros((n, n))
    for block in blocks:
        idx = list(block)
        for i in idx:
            A[i, idx] = rng.dirichlet(np.ones(len(idx)))
    return A


def adversarial_global_attention(n: int, target: int = 0) -> np.ndarray:
    """The worst-case global pattern: every node attends one node only."""
    A = np.zeros((n, n))
    A[:, target] = 1.0
    return A


def verify_theorem3(n: int, m: int, r_max: int, d: int, trials: int,
                    rng=None, seed: Optional[int] = None, adv_trials: int = 200) -> TrialReport:
    """Compare contraction coefficients of local vs unrestricted attention.

    Local attention is sampled ``trials`` times over an m-block layout with
    co-membership at most r_max. The global side is sampled the same number
    of times over unrestricted rows, plus the constructed worst case where
    every node attends one node (the pattern locality cannot express).
    Minima are sample estimates, so the result is an ordering check, not a
    proof.
    """
    rng = np.random.default_rng(seed) if rng is None else rng
    blocks = block_layout(n, m, r_max)
    full = [tuple(range(n))]

    def alpha_min(attention_factory, count):
        alphas = np.empty(count)
        for t in range(count):
            H = rng.standard_normal((n, d))
            W = rng.standard_normal((d, d))
            alphas[t] = alpha_coefficient(H, attention_factory(), W, np.zeros(d), np.ones(d))
        return alphas

    local_alphas = alpha_min(lambda: local_attention_matrix(blocks, n, rng), trials)
    global_alphas = alpha_min(lambda: local_attention_matrix(full, n, rng), trials)
    A_adv = adversarial_global_attention(n)
    adv_alphas = alpha_min(lambda: A_adv, adv_trials)

    local_min = float(local_alphas.min())
    global_min = float(min(global_alphas.min(), adv_alphas.min()))
    return TrialReport(
        theorem=3, trials=trials, violations=int(not local_min >= global_min),
        max_ratio=global_min / local_min if local_min else np.inf,
        alphas_below_one=bool(max(local_alphas.max(), global_alphas.max()) < 1.0),
        min_alpha=global_min, max_alpha=float(local_alphas.max()),
        seed=seed,
        details={
            "local_min": local_min, "local_mean": float(local_alphas.mean()),
            "global_random_min": float(global_alphas.min()),
            "global_random_mean": float(global_alphas.mean()),
            "adversarial_min": float(adv_alphas.min()),
            "adversarial_mean": float(adv_alphas.mean()),
            "global_min": global_min,
            "ordering_holds": bool(local_min >= global_min),
            "adversarial_strictly_below_local": bool(adv_alphas.min() < local_min),
            "r_max": r_max, "blocks": [list(b) for b in blocks],
            "adv_trials": adv_trials,
        },
    )


@dataclass
class LayerCapacity:
    layer: int
    capacity: float
    normalized: float
    token_capacity: float
    alpha: float
    gamma: float
    lam: float
    bound: float
    bound_ok: bool


@dataclass
class CapacityReport:
    layers: list
    n: int
    m: int

    def rows(self) -> list:
        return [(lc.layer, lc.capacity, lc.normalized, lc.token_capacity) for lc in self.layers]


def capacity_report(trace: ForwardTrace, params: ModelParams, E: np.ndarray) -> CapacityReport:
    """Per-layer capacity curve plus theorem coefficients for one forward pass.

    Coefficients map the model's per-token layer norm onto the theory's
    shared diagonal by averaging the per-token scales, so alpha/gamma/bound
    here are diagnostics, not certified bounds.
    """
    c = params.config
    n = trace.n
    layers = []
    sqrt_2m = np.sqrt(2 * E.shape[1])
    Pm_Et_norm = spectral_norm(centering(E.shape[1]) @ E.T)
    PH1_norm = float(np.linalg.norm(centering(n) @ trace.hidden[0][:n]))
    running = 1.0
    for layer in range(c.n_layers):
        lp = params.layer(layer)
        cache = trace.caches[layer]
        H = trace.hidden[layer][:n]
        head_vos = _head_vo(params, layer)
        cap = float(np.mean([attention_capacity(H, E, wvo) for wvo in head_vos]))
        norm_cap = normalized_capacity(trace, E, params, layer)
        tok_cap = token_capacity(trace, params, layer) if trace.m >= 2 else float("nan")
        d1 = lp["ln1.gain"] / float(cache["ln1"]["sigma"][:n].mean())
        d2 = lp["ln2.gain"] / float(cache["ln2"]["sigma"][:n].mean())
        alphas, lams = [], []
        for h in range(c.heads):
            A_h = trace.attention[layer][h][:n, :n]
            row_sums = A_h.sum(axis=1, keepdims=True)
            A_h = np.divide(A_h, row_sums, out=np.full_like(A_h, 1.0 / n), where=row_sums > 0)
            alphas.append(alpha_coefficient(H, A_h, head_vos[h], lp["ln1.bias"], d1))
            lams.append(lambda_coefficient(H, A_h, head_vos[h], lp["ln1.bias"], d1))
        alpha = float(np.mean(alphas))
        lam = float(np.mean(lams))
        gamma = gamma_coefficient(d2, lp["ffn.w1"], lp["ffn.w2"])
        w_norm = float(np.mean([spectral_norm(wvo) for wvo in head_vos]))
        bound = float(sqrt_2m * running * Pm_Et_norm * w_norm * PH1_norm)
        layers.append(LayerCapacity(
            layer=layer + 1, capacity=cap, normalized=norm_cap, token_capacity=tok_cap,
            alpha=alpha, gamma=gamma, lam=lam, bound=bound, bound_ok=bool(cap <= bound * (1 + 1e-9)),
        ))
        running *= alpha * gamma
    return CapacityReport(layers=layers, n=n, m=trace.m)
