"""Engine-independent container for posterior parameter draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from udeuq.errors import ContractError

METHODS = ("ensemble", "mcmc", "vi")


@dataclass
class PosteriorSamples:
    draws: np.ndarray  # (n_draws, total_dim), raw scale
    method: str
    weights: np.ndarray | None = None  # None means uniform

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        if self.method not in METHODS:
            raise ContractError(f"unknown method {self.method!r}")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (self.draws.shape[0],):
                raise ContractError("one weight per draw is required")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @classmethod
    def from_ensemble(cls, ens) -> "PosteriorSamples":
        """Exactly the accepted members' best parameters."""
        return cls(ens.accepted_thetas(), "ensemble")

    @classmethod
    def from_chain(cls, chain) -> "PosteriorSamples":
        return cls(chain.samples, "mcmc")
