"""
Registry of representation-network families.

Stage 0 looks families up by name instead of importing concrete classes,
so adding a learner means writing the class and registering it here.
"""
from typing import Dict, Type

from orlearners.errors import ConfigurationError
from orlearners.logging_config import get_logger
from orlearners.models import BNN, BWCFR, CFR, CFRISW, RCFR, TARNet
from orlearners.models.base import Family, RepLearnerSpec, RepresentationNetwork
from orlearners.random_streams import derive_seed, seeded

logger = get_logger(__name__)


class LearnerRegistry:
    def __init__(self):
        self._families: Dict[Family, Type[RepresentationNetwork]] = {}

    def register(self, network_class: Type[RepresentationNetwork]) -> None:
        """Register a class under its `family` key; re-registering replaces it."""
        family = Family(network_class.family)
        self._families[family] = network_class
        logger.debug(f"Registered learner family: {family.value}")

    def get(self, family: Family | str) -> Type[RepresentationNetwork]:
        """
        Raises:
            ConfigurationError: If the family is not registered
        """
        try:
            return self._families[Family(family)]
        except (KeyError, ValueError) as e:
            available = ", ".join(self.list_families())
            raise ConfigurationError(f"Unknown learner family: '{family}'. Available families: {available}") from e

    def build(self, spec: RepLearnerSpec, d_x: int, seed: int) -> RepresentationNetwork:
        """Instantiate with weights drawn from the seed's own torch stream."""
        network_class = self.get(spec.family)
        with seeded(derive_seed(seed, "stage0", "init")):
            network = network_class(d_x, spec)
        logger.debug(f"Built {network!r}")
        return network

    def list_families(self) -> list[str]:
        return [family.value for family in self._families]


_registry = LearnerRegistry()

for _network_class in (TARNet, BNN, CFR, RCFR, CFRISW, BWCFR):
    _registry.register(_network_class)


def get_learner(family: Family | str) -> Type[RepresentationNetwork]:
    return _registry.get(family)


def build_learner(spec: RepLearnerSpec, d_x: int, seed: int) -> RepresentationNetwork:
    return _registry.build(spec, d_x, seed)


def list_learner_families() -> list[str]:
    return _registry.list_families()
