"""BPR matrix factorization and LightGCN with analytic gradients and Hessian-vector products.

Both models store raw user and item embeddings as one ``ParamVector`` with
segments ``user_embedding`` and ``item_embedding``. Stacked, they form the
node matrix ``theta`` of shape ``(user_count + item_count, dim)``: user rows
first, then item rows. LightGCN scores with ``P theta`` where ``P`` is the
mean of powers of the symmetric-normalized bipartite adjacency; since ``P``
is linear and symmetric, gradients and HVPs pull back through ``P`` exactly.

Per-sample loss for ``(u, i, j)`` with scores ``s = E_u . E_i``::

    softplus(-(s_ui - s_uj)) + l2_reg / 2 * (|theta_u|^2 + |theta_i|^2 + |theta_j|^2)

Samples without a negative use ``softplus(-s_ui)`` and drop the ``j`` terms.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from ..core_math import ContractViolation, ParamVector
from .base import Checkpoint, ModelHyper, RecModel, SampleSet


def normalized_adjacency(dataset, user_count=None, item_count=None) -> sp.csr_matrix:
    """Symmetric-normalized bipartite adjacency ``D^-1/2 A D^-1/2`` of the current train set."""
    n_u = dataset.user_count if user_count is None else user_count
    n_i = dataset.item_count if item_count is None else item_count
    keys = dataset.interaction_keys()
    u = keys // dataset.item_count
    i = keys % dataset.item_count + n_u
    n = n_u + n_i
    rows = np.concatenate([u, i])
    cols = np.concatenate([i, u])
    adj = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(deg), 0.0)
    d = sp.diags(inv_sqrt)
    return (d @ adj @ d).tocsr()


def propagate(adj: sp.csr_matrix, x: np.ndarray, layers: int, return_layers: bool = False):
    out = [x]
    cur = x
    for _ in range(layers):
        cur = adj @ cur
        out.append(cur)
    if return_layers:
        return out
    return sum(out) / (layers + 1)


class BPRMF(RecModel):
    kind = "bpr_mf"

    def __init__(self, user_count: int, item_count: int, hyper: ModelHyper | None = None,
                 params: ParamVector | None = None, init_values: np.ndarray | None = None, seed: int = 0):
        self.user_count = int(user_count)
        self.item_count = int(item_count)
        self.hyper = hyper or ModelHyper()
        self.dim = int(self.hyper.embedding_dim)
        self.seed = int(seed)
        if params is None:
            rng = np.random.default_rng(seed)
            n = (self.user_count + self.item_count) * self.dim
            params = ParamVector(
                rng.normal(0.0, self.hyper.init_std, size=n),
                [
                    ("user_embedding", 0, self.user_count * self.dim),
                    ("item_embedding", self.user_count * self.dim, self.item_count * self.dim),
                ],
            )
        if params.size != (self.user_count + self.item_count) * self.dim:
            raise ContractViolation("parameter vector does not match model shape")
        self._params = params
        self.init_values = params.values.copy() if init_values is None else np.asarray(init_values, float)
        self.loss_history: list[float] = []
        self.provenance: dict = {}

    # -- parameters -------------------------------------------------------
    @property
    def params(self) -> ParamVector:
        return self._params

    @property
    def has_gradients(self) -> bool:
        return True

    @property
    def n_nodes(self) -> int:
        return self.user_count + self.item_count

    def with_values(self, values) -> "BPRMF":
        clone = self._clone()
        clone._params = self._params.with_values(values)
        return clone

    def _clone(self):
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.loss_history = list(self.loss_history)
        clone.provenance = dict(self.provenance)
        return clone

    def node_matrix(self, values=None) -> np.ndarray:
        values = self._params.values if values is None else values
        return np.asarray(values).reshape(self.n_nodes, self.dim)

    # -- propagation hooks (identity for MF) --------------------------------
    def forward(self, theta: np.ndarray) -> np.ndarray:
        return theta

    def backward(self, d_emb: np.ndarray) -> np.ndarray:
        return d_emb

    def embeddings(self) -> tuple[np.ndarray, np.ndarray]:
        e = self.forward(self.node_matrix())
        return e[: self.user_count], e[self.user_count:]

    def score_users(self, users) -> np.ndarray:
        eu, ei = self.embeddings()
        return eu[np.asarray(users, dtype=np.int64)] @ ei.T

    def score(self, user: int, item: int) -> float:
        eu, ei = self.embeddings()
        return float(eu[user] @ ei[item])

    # -- loss / gradient / HVP ---------------------------------------------
    def _index(self, samples: SampleSet):
        if len(samples):
            if samples.users.max() >= self.user_count or samples.pos.max() >= self.item_count:
                raise ContractViolation("sample index out of range")
        has = samples.neg >= 0
        u = samples.users
        i = samples.pos + self.user_count
        j = np.where(has, samples.neg, 0) + self.user_count
        return u, i, j, has

    def _reg_weights(self, u, i, j, has, c) -> np.ndarray:
        n = self.n_nodes
        return (
            np.bincount(u, weights=c, minlength=n)
            + np.bincount(i, weights=c, minlength=n)
            + np.bincount(j[has], weights=c[has], minlength=n)
        )

    def loss_grad(self, samples: SampleSet, coefficients=None, values=None) -> tuple[float, np.ndarray]:
        """Weighted loss ``sum_k c_k * loss_k`` and its exact gradient (flat)."""
        theta = self.node_matrix(values)
        if len(samples) == 0:
            return 0.0, np.zeros(theta.size)
        c = np.ones(len(samples)) if coefficients is None else np.asarray(coefficients, dtype=np.float64)
        if not np.all(np.isfinite(c)):
            raise ContractViolation("coefficients must be finite")
        u, i, j, has = self._index(samples)
        e = self.forward(theta)
        hm = has[:, None]
        diff = e[i] - np.where(hm, e[j], 0.0)
        x = np.einsum("kd,kd->k", e[u], diff)
        loss = float(np.sum(c * np.logaddexp(0.0, -x)))
        dx = c * (expit(x) - 1.0)

        d_e = np.zeros_like(e)
        np.add.at(d_e, u, dx[:, None] * diff)
        np.add.at(d_e, i, dx[:, None] * e[u])
        np.add.at(d_e, j[has], -dx[has, None] * e[u[has]])
        grad = self.backward(d_e)

        reg = self.hyper.l2_reg
        if reg:
            w = self._reg_weights(u, i, j, has, c)
            grad = grad + reg * w[:, None] * theta
            loss += 0.5 * reg * float(np.sum(w * np.einsum("nd,nd->n", theta, theta)))
        return loss, grad.reshape(-1)

    def hvp(self, samples: SampleSet, coefficients, v, damping: float = 0.0, values=None) -> np.ndarray:
        """``(H + damping I) v`` for the weighted loss of ``loss_grad``."""
        theta = self.node_matrix(values)
        v = np.asarray(v, dtype=np.float64)
        if v.size != theta.size:
            raise ContractViolation(f"vector has dimension {v.size}, parameters have {theta.size}")
        if len(samples) == 0:
            return damping * v
        c = np.ones(len(samples)) if coefficients is None else np.asarray(coefficients, dtype=np.float64)
        u, i, j, has = self._index(samples)
        e = self.forward(theta)
        vm = v.reshape(theta.shape)
        ve = self.forward(vm)
        hm = has[:, None]
        diff = e[i] - np.where(hm, e[j], 0.0)
        vdiff = ve[i] - np.where(hm, ve[j], 0.0)
        x = np.einsum("kd,kd->k", e[u], diff)
        sig = expit(x)
        dxv = np.einsum("kd,kd->k", ve[u], diff) + np.einsum("kd,kd->k", e[u], vdiff)
        a = c * sig * (1.0 - sig) * dxv
        b = c * (sig - 1.0)

        out = np.zeros_like(e)
        np.add.at(out, u, a[:, None] * diff + b[:, None] * vdiff)
        tmp_i = a[:, None] * e[u] + b[:, None] * ve[u]
        np.add.at(out, i, tmp_i)
        np.add.at(out, j[has], -tmp_i[has])
        out = self.backward(out)

        reg = self.hyper.l2_reg
        if reg:
            w = self._reg_weights(u, i, j, has, c)
            out = out + reg * w[:, None] * vm
        out = out.reshape(-1)
        if damping:
            out = out + damping * v
        return out

    def score_backward(self, users, d_scores) -> np.ndarray:
        """Parameter gradient given ``dL/dscores`` for ``scores = E_users @ E_items.T``."""
        users = np.asarray(users, dtype=np.int64)
        eu, ei = self.embeddings()
        d_e = np.zeros((self.n_nodes, self.dim))
        np.add.at(d_e, users, d_scores @ ei)
        d_e[self.user_count:] += d_scores.T @ eu[users]
        return self.backward(d_e).reshape(-1)

    def user_rep_backward(self, users, d_reps) -> np.ndarray:
        """Parameter gradient given ``dL/dE_u`` for the final user representations."""
        d_e = np.zeros((self.n_nodes, self.dim))
        np.add.at(d_e, np.asarray(users, dtype=np.int64), d_reps)
        return self.backward(d_e).reshape(-1)

    # -- scopes -----------------------------------------------------------
    def node_mask(self, nodes) -> np.ndarray:
        """Coordinate mask covering the embedding rows of the given node indices."""
        m = np.zeros((self.n_nodes, self.dim), dtype=bool)
        m[np.asarray(sorted(nodes), dtype=np.int64)] = True
        return m.reshape(-1)

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(
            kind=self.kind,
            hyper=self.hyper.to_dict(),
            params=self._params.copy(),
            tables={"init_snapshot": self.init_values.copy()},
            rng_state={"seed": self.seed},
            provenance=dict(self.provenance),
            shape={"user_count": self.user_count, "item_count": self.item_count},
        )


class LightGCN(BPRMF):
    kind = "lightgcn"

    def __init__(self, user_count, item_count, hyper=None, params=None, init_values=None, seed=0, dataset=None):
        super().__init__(user_count, item_count, hyper, params, init_values, seed)
        self.layers = int(self.hyper.layers)
        self.graph = None
        if dataset is not None:
            self.graph = normalized_adjacency(dataset, self.user_count, self.item_count)

    def rebuild_graph(self, dataset) -> "LightGCN":
        """Copy of this model propagating over ``dataset``'s current train graph."""
        clone = self._clone()
        clone.graph = normalized_adjacency(dataset, self.user_count, self.item_count)
        return clone

    def forward(self, theta):
        if self.graph is None:
            raise ContractViolation("LightGCN needs a graph; call rebuild_graph(dataset)")
        return propagate(self.graph, theta, self.layers)

    backward = forward  # propagation is symmetric


def lightgcn_propagate(model: BPRMF, dataset, layers: int, return_layers: bool = False):
    """Propagate ``model``'s raw embeddings over ``dataset``'s train graph.

    Returns ``(user_embeddings, item_embeddings)`` of the layer mean, or the
    list of per-layer node matrices with ``return_layers=True``.
    """
    if layers < 0:
        raise ValueError("layers must be >= 0")
    adj = normalized_adjacency(dataset, model.user_count, model.item_count)
    out = propagate(adj, model.node_matrix(), layers, return_layers)
    if return_layers:
        return out
    return out[: model.user_count], out[model.user_count:]
