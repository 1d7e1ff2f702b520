"""Independent oracles shared by the unit and acceptance tests.

Everything here deliberately avoids the library's own computation paths:
finite differences instead of the tape, direct loops instead of the
vectorized metric, explicit enumeration instead of the derivation logic.
"""

import math

import numpy as np


def finite_difference_gradients(f, params: dict, step: float = 1e-5) -> dict:
    """Central differences of a scalar function of named arrays."""
    grads = {}
    for name, base in params.items():
        g = np.zeros_like(base, dtype=np.float64)
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f(params)
            flat[i] = orig - step
            down = f(params)
            flat[i] = orig
            g.reshape(-1)[i] = (up - down) / (2.0 * step)
        grads[name] = g
    return grads


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Per-coordinate |a - n| / max(1, |a|, |n|), maximized."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(build_scalar, params: dict, tol: float, step: float = 1e-5) -> float:
    """Compare tape gradients of build_scalar(leaves) against finite differences.

    ``build_scalar`` gets a dict of tape leaves and returns a scalar Tensor.
    Returns the worst relative error across all parameters.
    """
    from mmnas.autodiff import Tape

    tape = Tape()
    leaves = {k: tape.leaf(v, k) for k, v in params.items()}
    loss = build_scalar(leaves)
    grads = tape.backward(loss)
    analytic = {k: grads.of(t) for k, t in leaves.items()}

    def scalar_fn(p):
        t2 = Tape()
        l2 = {k: t2.leaf(v, k) for k, v in p.items()}
        return float(build_scalar(l2).data)

    numeric = finite_difference_gradients(scalar_fn, params, step)
    worst = 0.0
    for k in params:
        err = max_rel_err(analytic[k], numeric[k])
        assert err < tol, f"gradient mismatch for {k}: rel err {err:.3e} >= {tol}"
        worst = max(worst, err)
    return worst


def naive_ntxent(z: np.ndarray, tau: float) -> float:
    """Direct, unstabilized two-view contrastive loss (rows paired (2k, 2k+1))."""
    n2 = z.shape[0]
    norms = np.linalg.norm(z, axis=1)
    sims = (z @ z.T) / np.outer(norms, norms)

    def l(i, j):
        denom = 0.0
        for k in range(n2):
            if k != i:
                denom += math.exp(sims[i, k] / tau)
        return -math.log(math.exp(sims[i, j] / tau) / denom)

    total = 0.0
    for k in range(n2 // 2):
        total += l(2 * k, 2 * k + 1) + l(2 * k + 1, 2 * k)
    return total / n2


def weighted_f1_oracle(pred: np.ndarray, truth: np.ndarray) -> float:
    """Loop-based confusion-matrix weighted F1."""
    n, num_labels = truth.shape
    scores, supports = [], []
    for label in range(num_labels):
        tp = fp = fn = 0
        for i in range(n):
            p, t = int(pred[i, label]), int(truth[i, label])
            if p == 1 and t == 1:
                tp += 1
            elif p == 1 and t == 0:
                fp += 1
            elif p == 0 and t == 1:
                fn += 1
        support = tp + fn
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        scores.append(f1)
        supports.append(support)
    mass = sum(supports)
    if mass == 0:
        return 0.0
    return sum(f * s for f, s in zip(scores, supports)) / mass


def derive_oracle(arch):
    """Enumerate-and-rank rendering of genotype derivation, written separately.

    Builds candidate rankings with explicit sorts and reproduces the pruning
    and re-indexing rules from first principles.
    """
    from mmnas.searchspace import (
        PRIMITIVES,
        CellGene,
        Genotype,
        StepGene,
        cell_candidate_names,
        ordered_pairs,
    )

    cfg = arch.config
    zero = PRIMITIVES.index("Zero")
    cells = []
    for c in range(cfg.num_cells):
        names = cell_candidate_names(cfg, c)
        ranked = sorted(enumerate(arch.alpha[c]), key=lambda kv: (-kv[1], kv[0]))
        inputs = (names[ranked[0][0]], names[ranked[1][0]])
        kept = []
        index_map = {}
        for s in range(cfg.steps_per_cell):
            weights = np.exp(arch.gamma[c][s] - arch.gamma[c][s].max())
            weights = weights / weights.sum()
            if weights[zero] > max(w for i, w in enumerate(weights) if i != zero):
                continue
            op_ranked = sorted(
                (i for i in range(len(PRIMITIVES)) if i != zero),
                key=lambda i: (-weights[i], i),
            )
            pairs = ordered_pairs(2 + s)
            ok = []
            for j, (u, v) in enumerate(pairs):
                endpoints_ok = True
                for p in (u, v):
                    if p >= 2 and (p - 2) not in index_map:
                        endpoints_ok = False
                if endpoints_ok:
                    ok.append(j)
            if not ok:
                continue
            ranked_pairs = sorted(ok, key=lambda j: (-arch.beta[c][s][j], j))
            u, v = pairs[ranked_pairs[0]]

            def name_of(p):
                if p == 0:
                    return inputs[0]
                if p == 1:
                    return inputs[1]
                return f"step:{index_map[p - 2]}"

            index_map[s] = len(kept)
            kept.append(StepGene(pair=(name_of(u), name_of(v)), op=PRIMITIVES[op_ranked[0]]))
        cells.append(CellGene(inputs=inputs, steps=tuple(kept)))
    return Genotype(cells=tuple(cells), config_hash=cfg.hash())


def sign_test_p(wins: int, trials: int) -> float:
    """One-sided exact binomial sign test: P(X >= wins | p = 1/2)."""
    return sum(math.comb(trials, k) for k in range(wins, trials + 1)) / 2.0 ** trials
