"""Ridge-regression surrogate with the same gradient/HVP contract as the embedding models.

Sample ``k`` refers to row ``k`` of the design matrix (``SampleSet.users``);
its loss is ``0.5 * (x_k . w - y_k)^2 + 0.5 * l2_reg * |w|^2``. Because the
loss is quadratic, a Newton step lands exactly on the minimizer, which makes
it a convenient closed-form reference for the influence-based unlearning
updates.
"""

from __future__ import annotations

import numpy as np

from ..core_math import ContractViolation, ParamVector
from .base import SampleSet


class QuadraticModel:
    kind = "quadratic"

    def __init__(self, features, targets, l2_reg: float = 0.0, weights=None):
        self.features = np.asarray(features, dtype=np.float64)
        self.targets = np.asarray(targets, dtype=np.float64)
        self.l2_reg = float(l2_reg)
        p = self.features.shape[1]
        w = np.zeros(p) if weights is None else np.asarray(weights, dtype=np.float64)
        self._params = ParamVector(w.copy(), [("weights", 0, p)])
        self.init_values = np.zeros(p)

    @property
    def params(self) -> ParamVector:
        return self._params

    @property
    def has_gradients(self) -> bool:
        return True

    def with_values(self, values) -> "QuadraticModel":
        out = QuadraticModel(self.features, self.targets, self.l2_reg, values)
        out.init_values = self.init_values
        return out

    def _rows(self, samples: SampleSet):
        rows = samples.users
        if rows.size and (rows.min() < 0 or rows.max() >= self.features.shape[0]):
            raise ContractViolation("sample row out of range")
        return rows

    def loss_grad(self, samples: SampleSet, coefficients=None, values=None):
        w = self._params.values if values is None else np.asarray(values, dtype=np.float64)
        if len(samples) == 0:
            return 0.0, np.zeros_like(w)
        c = np.ones(len(samples)) if coefficients is None else np.asarray(coefficients, dtype=np.float64)
        x = self.features[self._rows(samples)]
        r = x @ w - self.targets[samples.users]
        loss = 0.5 * float(np.sum(c * r * r)) + 0.5 * self.l2_reg * float(c.sum()) * float(w @ w)
        grad = x.T @ (c * r) + self.l2_reg * float(c.sum()) * w
        return loss, grad

    def hvp(self, samples: SampleSet, coefficients, v, damping: float = 0.0, values=None):
        v = np.asarray(v, dtype=np.float64)
        if v.size != self._params.size:
            raise ContractViolation("dimension mismatch")
        if len(samples) == 0:
            return damping * v
        c = np.ones(len(samples)) if coefficients is None else np.asarray(coefficients, dtype=np.float64)
        x = self.features[self._rows(samples)]
        return x.T @ (c * (x @ v)) + (self.l2_reg * float(c.sum()) + damping) * v

    def hessian(self, samples: SampleSet, coefficients=None) -> np.ndarray:
        c = np.ones(len(samples)) if coefficients is None else np.asarray(coefficients, dtype=np.float64)
        x = self.features[samples.users]
        return (x * c[:, None]).T @ x + self.l2_reg * float(c.sum()) * np.eye(x.shape[1])
