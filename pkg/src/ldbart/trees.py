"""Binary regression trees with hard or soft (logistic-gated) routing.

Nodes use heap numbering: the root is 0 and node ``i`` has children
``2i+1`` (left, taken when ``x_j <= c``) and ``2i+2``.  Leaves are always
listed in preorder, which fixes the column order of leaf-weight matrices
and of leaf-value vectors.

Text format of a serialized tree (preorder, one node per line)::

    tree soft 0.0731
    node 2 0.4975
    leaf -0.0125
    node 0 0.25
    leaf 0.031
    leaf 0.002

The header is ``tree hard`` for hard trees.  Floats are written with
``repr`` so they round-trip exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import expit


def depth(node: int) -> int:
    return (node + 1).bit_length() - 1


@dataclass
class Tree:
    split_var: dict[int, int] = field(default_factory=dict)
    cutpoint: dict[int, float] = field(default_factory=dict)
    leaf_value: dict[int, float] = field(default_factory=lambda: {0: 0.0})
    tau: float | None = None

    @classmethod
    def stump(cls, value: float = 0.0, tau: float | None = None) -> "Tree":
        return cls({}, {}, {0: float(value)}, tau)

    @property
    def soft(self) -> bool:
        return self.tau is not None

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_value)

    @property
    def n_internal(self) -> int:
        return len(self.split_var)

    def copy(self) -> "Tree":
        return Tree(dict(self.split_var), dict(self.cutpoint), dict(self.leaf_value), self.tau)

    def _preorder(self):
        stack = [0]
        while stack:
            node = stack.pop()
            yield node
            if node in self.split_var:
                stack.append(2 * node + 2)
                stack.append(2 * node + 1)

    def leaves(self) -> list[int]:
        return [v for v in self._preorder() if v in self.leaf_value]

    def internal(self) -> list[int]:
        return [v for v in self._preorder() if v in self.split_var]

    def nog_nodes(self) -> list[int]:
        """Internal nodes whose two children are leaves (the prunable ones)."""
        lv = self.leaf_value
        return [v for v in self.internal() if 2 * v + 1 in lv and 2 * v + 2 in lv]

    def values(self) -> np.ndarray:
        return np.array([self.leaf_value[v] for v in self.leaves()])

    def set_values(self, values) -> None:
        leaves = self.leaves()
        if len(values) != len(leaves):
            raise ValueError(f"expected {len(leaves)} leaf values, got {len(values)}")
        for v, mu in zip(leaves, values):
            self.leaf_value[v] = float(mu)

    def grow(self, leaf: int, var: int, cut: float) -> "Tree":
        if leaf not in self.leaf_value:
            raise ValueError(f"node {leaf} is not a leaf")
        new = self.copy()
        mu = new.leaf_value.pop(leaf)
        new.split_var[leaf] = int(var)
        new.cutpoint[leaf] = float(cut)
        new.leaf_value[2 * leaf + 1] = mu
        new.leaf_value[2 * leaf + 2] = mu
        return new

    def prune(self, node: int) -> "Tree":
        lv = self.leaf_value
        if node not in self.split_var or 2 * node + 1 not in lv or 2 * node + 2 not in lv:
            raise ValueError(f"node {node} does not have two leaf children")
        new = self.copy()
        a = new.leaf_value.pop(2 * node + 1)
        b = new.leaf_value.pop(2 * node + 2)
        del new.split_var[node], new.cutpoint[node]
        new.leaf_value[node] = 0.5 * (a + b)
        return new

    def change(self, node: int, var: int, cut: float) -> "Tree":
        if node not in self.split_var:
            raise ValueError(f"node {node} is not internal")
        new = self.copy()
        new.split_var[node] = int(var)
        new.cutpoint[node] = float(cut)
        return new

    def validate(self, P: int | None = None) -> None:
        nodes = list(self._preorder())
        if set(nodes) != set(self.split_var) | set(self.leaf_value):
            raise ValueError("tree has unreachable nodes")
        if set(self.split_var) & set(self.leaf_value):
            raise ValueError("node is both leaf and internal")
        if self.n_leaves != self.n_internal + 1:
            raise ValueError("leaf count must equal internal count + 1")
        if P is not None and any(not 0 <= j < P for j in self.split_var.values()):
            raise ValueError("split variable out of range")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("bandwidth must be positive")


def _as_matrix(X):
    X = np.asarray(X, dtype=float)
    return (X[None, :], True) if X.ndim == 1 else (X, False)


def leaf_index(tree: Tree, X) -> np.ndarray:
    """Preorder position of the leaf reached by each row under hard routing."""
    X, single = _as_matrix(X)
    out = np.empty(X.shape[0], dtype=np.intp)
    pos = {v: i for i, v in enumerate(tree.leaves())}

    def visit(node, idx):
        if node in tree.leaf_value:
            out[idx] = pos[node]
            return
        left = X[idx, tree.split_var[node]] <= tree.cutpoint[node]
        visit(2 * node + 1, idx[left])
        visit(2 * node + 2, idx[~left])

    visit(0, np.arange(X.shape[0]))
    return out[0] if single else out


def leaf_weights(tree: Tree, X) -> np.ndarray:
    """Probability of each row reaching each leaf, shape (n, L).

    Soft trees go left at node (j, c) with probability
    ``logistic((c - x_j) / tau)``; hard trees give one-hot rows.
    """
    X, single = _as_matrix(X)
    n = X.shape[0]
    leaves = tree.leaves()
    W = np.zeros((n, len(leaves)))
    if not tree.soft:
        W[np.arange(n), leaf_index(tree, X)] = 1.0
        return W[0] if single else W
    pos = {v: i for i, v in enumerate(leaves)}

    def visit(node, w):
        if node in tree.leaf_value:
            W[:, pos[node]] = w
            return
        g = expit((tree.cutpoint[node] - X[:, tree.split_var[node]]) / tree.tau)
        visit(2 * node + 1, w * g)
        visit(2 * node + 2, w * (1.0 - g))

    visit(0, np.ones(n))
    return W[0] if single else W


def predict_tree(tree: Tree, X):
    X, single = _as_matrix(X)
    if tree.soft:
        out = leaf_weights(tree, X) @ tree.values()
    else:
        out = tree.values()[leaf_index(tree, X)]
    return out[0] if single else out


@dataclass
class Ensemble:
    trees: list[Tree]

    @property
    def T(self) -> int:
        return len(self.trees)

    def predict(self, X) -> np.ndarray:
        X, single = _as_matrix(X)
        out = np.zeros(X.shape[0])
        for tree in self.trees:
            out += predict_tree(tree, X)
        return out[0] if single else out

    @property
    def n_leaves(self) -> int:
        return sum(t.n_leaves for t in self.trees)


# ---------------------------------------------------------------- likelihood

def hard_stats(index: np.ndarray, r: np.ndarray, L: int):
    counts = np.bincount(index, minlength=L).astype(float)
    sums = np.bincount(index, weights=r, minlength=L)
    return counts, sums


def log_marginal_likelihood_hard(counts, sums, rss, n, sigma2, sigma_mu2) -> float:
    """Per-leaf sufficient-statistic form of the collapsed likelihood."""
    prec = counts / sigma2 + 1.0 / sigma_mu2
    return float(
        -0.5 * n * math.log(2 * math.pi * sigma2)
        - 0.5 * np.sum(np.log(sigma_mu2 * prec))
        - 0.5 * (rss / sigma2 - np.sum((sums / sigma2) ** 2 / prec))
    )


def log_marginal_likelihood(W, r, sigma2, sigma_mu2) -> float:
    """log N(r | 0, sigma2 I + sigma_mu2 W W^T) through the L x L precision.

    With ``Omega = W^T W / sigma2 + I / sigma_mu2`` and ``b = W^T r / sigma2``
    this is ``-n/2 log(2 pi sigma2) - 1/2 log det(sigma_mu2 Omega)
    - 1/2 (r^T r / sigma2 - b^T Omega^{-1} b)``.
    """
    W = np.asarray(W, dtype=float)
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite residuals")
    n, L = W.shape
    omega = W.T @ W / sigma2 + np.eye(L) / sigma_mu2
    b = W.T @ r / sigma2
    chol = cholesky(omega, lower=True)
    z = solve_triangular(chol, b, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol))) + L * math.log(sigma_mu2)
    return float(
        -0.5 * n * math.log(2 * math.pi * sigma2)
        - 0.5 * logdet
        - 0.5 * (r @ r / sigma2 - z @ z)
    )


def tree_log_marginal_likelihood(tree: Tree, X, r, sigma2, sigma_mu2) -> float:
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite residuals")
    if tree.soft:
        return log_marginal_likelihood(leaf_weights(tree, X), r, sigma2, sigma_mu2)
    counts, sums = hard_stats(leaf_index(tree, X), r, tree.n_leaves)
    return log_marginal_likelihood_hard(counts, sums, r @ r, len(r), sigma2, sigma_mu2)


def draw_leaves_hard(counts, sums, sigma2, sigma_mu2, rng) -> np.ndarray:
    prec = counts / sigma2 + 1.0 / sigma_mu2
    mean = sums / sigma2 / prec
    return mean + rng.standard_normal(len(counts)) / np.sqrt(prec)


def draw_leaves_soft(W, r, sigma2, sigma_mu2, rng) -> np.ndarray:
    L = W.shape[1]
    omega = W.T @ W / sigma2 + np.eye(L) / sigma_mu2
    chol = cholesky(omega, lower=True)
    mean = cho_solve((chol, True), W.T @ r / sigma2)
    return mean + solve_triangular(chol.T, rng.standard_normal(L), lower=False)


def sample_leaf_values(tree: Tree, X, r, sigma2, sigma_mu2, rng) -> np.ndarray:
    """Draw leaf values from their Gaussian full conditional."""
    r = np.asarray(r, dtype=float)
    if tree.soft:
        return draw_leaves_soft(leaf_weights(tree, X), r, sigma2, sigma_mu2, rng)
    counts, sums = hard_stats(leaf_index(tree, X), r, tree.n_leaves)
    return draw_leaves_hard(counts, sums, sigma2, sigma_mu2, rng)


# ------------------------------------------------------------ prior and moves

@dataclass(frozen=True)
class TreePrior:
    """P(node at depth d splits) = gamma (1 + d)^(-beta), zero from ``max_depth`` on."""

    gamma: float = 0.95
    beta: float = 2.0
    max_depth: int | None = None

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    def p_split(self, d: int) -> float:
        if self.max_depth is not None and d >= self.max_depth:
            return 0.0
        return self.gamma * (1.0 + d) ** (-self.beta)

    def log_split_ratio(self, d: int) -> float:
        """log of p(d) (1 - p(d+1))^2 / (1 - p(d)): prior ratio of splitting a leaf."""
        p = self.p_split(d)
        if p == 0.0:
            return -math.inf
        return math.log(p) + 2 * math.log1p(-self.p_split(d + 1)) - math.log1p(-p)

    def log_prior(self, tree: Tree, log_probs, grid) -> float:
        """Log prior mass of a tree's structure and split rules."""
        total = 0.0
        for v in tree.internal():
            p = self.p_split(depth(v))
            if p == 0.0:
                return -math.inf
            j = tree.split_var[v]
            total += math.log(p) + log_probs[j] - math.log(len(grid[j]))
        for v in tree.leaves():
            total += math.log1p(-self.p_split(depth(v)))
        return total

    def sample(self, selector, grid, rng, sigma_mu2: float, tau: float | None = None) -> Tree:
        """Draw a tree (structure, rules and leaf values) from the prior."""
        tree = Tree({}, {}, {}, tau)
        stack = [0]
        while stack:
            v = stack.pop()
            if rng.random() < self.p_split(depth(v)):
                j = selector.draw_split_var(rng)
                tree.split_var[v] = j
                tree.cutpoint[v] = float(grid[j][rng.integers(len(grid[j]))])
                stack += [2 * v + 2, 2 * v + 1]
            else:
                tree.leaf_value[v] = float(rng.normal(0.0, math.sqrt(sigma_mu2)))
        return tree


MOVE_PROBS = {"grow": 0.4, "prune": 0.4, "change": 0.2}


def move_probabilities(tree: Tree) -> dict[str, float]:
    if tree.n_internal == 0:
        return {"grow": 1.0}
    return dict(MOVE_PROBS)


@dataclass
class TreeMove:
    kind: str
    tree: Tree
    node: int
    log_proposal_ratio: float
    log_prior_ratio: float


def propose_move(tree: Tree, selector, grid, prior: TreePrior, rng, kind: str | None = None) -> TreeMove:
    """Propose a grow, prune or change move.

    The returned ratios are log q(old | new) - log q(new | old) and
    log p(new) - log p(old); the split-variable probabilities of ``selector``
    enter both and cancel in the acceptance ratio.
    """
    probs = move_probabilities(tree)
    if kind is None:
        u = rng.random()
        for kind, p in probs.items():
            u -= p
            if u < 0:
                break
    elif kind not in probs:
        raise ValueError(f"no valid {kind} move for a tree with {tree.n_leaves} leaves")
    log_probs = selector.log_probs

    if kind == "grow":
        leaves = tree.leaves()
        leaf = leaves[rng.integers(len(leaves))]
        j = selector.draw_split_var(rng)
        cut = grid[j][rng.integers(len(grid[j]))]
        new = tree.grow(leaf, j, cut)
        rule = log_probs[j] - math.log(len(grid[j]))
        prior_ratio = prior.log_split_ratio(depth(leaf)) + rule
        forward = math.log(probs["grow"]) - math.log(len(leaves)) + rule
        backward = math.log(move_probabilities(new)["prune"]) - math.log(len(new.nog_nodes()))
        return TreeMove(kind, new, leaf, backward - forward, prior_ratio)

    if kind == "prune":
        nogs = tree.nog_nodes()
        node = nogs[rng.integers(len(nogs))]
        j = tree.split_var[node]
        new = tree.prune(node)
        rule = log_probs[j] - math.log(len(grid[j]))
        prior_ratio = -(prior.log_split_ratio(depth(node)) + rule)
        forward = math.log(probs["prune"]) - math.log(len(nogs))
        backward = (
            math.log(move_probabilities(new)["grow"]) - math.log(new.n_leaves) + rule
        )
        return TreeMove(kind, new, node, backward - forward, prior_ratio)

    internal = tree.internal()
    node = internal[rng.integers(len(internal))]
    j_old = tree.split_var[node]
    j = selector.draw_split_var(rng)
    cut = grid[j][rng.integers(len(grid[j]))]
    new = tree.change(node, j, cut)
    rule_new = log_probs[j] - math.log(len(grid[j]))
    rule_old = log_probs[j_old] - math.log(len(grid[j_old]))
    return TreeMove(kind, new, node, rule_old - rule_new, rule_new - rule_old)


# ------------------------------------------------------------- serialization

def dumps_tree(tree: Tree) -> str:
    lines = ["tree hard" if tree.tau is None else f"tree soft {tree.tau!r}"]
    for v in tree._preorder():
        if v in tree.split_var:
            lines.append(f"node {tree.split_var[v]} {tree.cutpoint[v]!r}")
        else:
            lines.append(f"leaf {tree.leaf_value[v]!r}")
    return "\n".join(lines)


def loads_trees(text: str) -> list[Tree]:
    """Parse one or more concatenated serialized trees."""
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    trees = []
    i = 0
    while i < len(lines):
        head = lines[i]
        if head[0] != "tree" or head[1] not in ("hard", "soft"):
            raise ValueError(f"expected tree header, got {' '.join(head)!r}")
        tree = Tree({}, {}, {}, float(head[2]) if head[1] == "soft" else None)
        i += 1
        stack = [0]
        while stack:
            if i >= len(lines):
                raise ValueError("truncated tree")
            v = stack.pop()
            tok = lines[i]
            if tok[0] == "node":
                tree.split_var[v] = int(tok[1])
                tree.cutpoint[v] = float(tok[2])
                stack += [2 * v + 2, 2 * v + 1]
            elif tok[0] == "leaf":
                tree.leaf_value[v] = float(tok[1])
            else:
                raise ValueError(f"bad tree line {' '.join(tok)!r}")
            i += 1
        trees.append(tree)
    return trees


def loads_tree(text: str) -> Tree:
    trees = loads_trees(text)
    if len(trees) != 1:
        raise ValueError(f"expected one tree, found {len(trees)}")
    return trees[0]
