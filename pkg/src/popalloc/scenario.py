"""The baseline two-covariate setting used by the bundled study and the demos."""

from __future__ import annotations

from dataclasses import dataclass

from .model import (
    Generalize,
    MixtureLaw,
    OutcomeModel,
    PostStratify,
    ProductLaw,
    Transport,
    Trial,
)
from .numerics import TruncatedNormal

STRATUM_WEIGHTS = (0.1, 0.2, 0.3, 0.4)


@dataclass(frozen=True)
class Setting:
    trial: ProductLaw
    transport_law: ProductLaw
    outcome: OutcomeModel
    mixture_weight: float = 0.5
    cutpoint: float = 0.5
    stratum_weights: tuple[float, ...] = STRATUM_WEIGHTS
    gamma: float = 0.5

    @property
    def generalize_law(self) -> MixtureLaw:
        return MixtureLaw(self.trial, self.transport_law, self.mixture_weight)

    def targets(self) -> dict:
        return {
            "trial": Trial(),
            "transport": Transport(self.transport_law),
            "generalize": Generalize(self.generalize_law, self.mixture_weight),
            "poststrat": PostStratify.quadrants(self.cutpoint, self.stratum_weights),
        }


def baseline_setting() -> Setting:
    """W1 ~ N(0, .75^2; -2, 2), W2 ~ B(.2); target W1 ~ N(.5, 1; -2, 2), W2 ~ B(.5).

    Outcomes: ``Y(0) ~ N(w1 + w2, exp(-2 + w1 + 2 w2))`` and
    ``Y(1) ~ N(1 + w2, exp(1 - w1 - 2 w2))``.
    """
    return Setting(
        trial=ProductLaw(TruncatedNormal(0.0, 0.75, -2.0, 2.0), 0.2),
        transport_law=ProductLaw(TruncatedNormal(0.5, 1.0, -2.0, 2.0), 0.5),
        outcome=OutcomeModel(
            mean1=(1.0, 0.0, 1.0),
            mean0=(0.0, 1.0, 1.0),
            log_variance1=(1.0, -1.0, -2.0),
            log_variance0=(-2.0, 1.0, 2.0),
        ),
    )
