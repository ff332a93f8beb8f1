from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from app.core.exceptions import ContractError
from app.core.tensor import Tensor
from app.schemas.training import AdamConfig


@dataclass
class AdamState:
    """First/second moments per parameter (keyed by tensor identity) and the step counter"""
    m: Dict[int, np.ndarray] = field(default_factory=dict)
    v: Dict[int, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def moments(self, param: Tensor) -> Tuple[np.ndarray, np.ndarray]:
        key = id(param)
        if key not in self.m:
            self.m[key] = np.zeros_like(param.data)
            self.v[key] = np.zeros_like(param.data)
        return self.m[key], self.v[key]


class OptimService:

    @staticmethod
    def adam_step(
        params: Sequence[Tensor],
        grads: Mapping[Tensor, np.ndarray],
        state: AdamState,
        cfg: AdamConfig,
    ) -> Tuple[Sequence[Tensor], AdamState]:
        """One bias-corrected Adam update, applied in place"""
        for p in params:
            if p not in grads:
                raise ContractError(f"no gradient for parameter {p.name or p.shape}")
            if grads[p].shape != p.shape:
                raise ContractError(f"gradient shape {grads[p].shape} != parameter shape {p.shape} ({p.name})")

        state.t += 1
        t = state.t
        bc1 = 1.0 - cfg.beta1 ** t
        bc2 = 1.0 - cfg.beta2 ** t
        for p in params:
            g = grads[p].astype(p.data.dtype, copy=False)
            m, v = state.moments(p)
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= (cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.data.dtype, copy=False)
        return params, state


optim_service = OptimService()
