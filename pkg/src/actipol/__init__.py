"""Activity-dependency policy engine: XACML-style policies, PDP/PIP/PEP pipeline and decision service."""

from importlib import resources

from .activity import ActionId, ActivityRecord, ActivityState, Decision, IllegalTransition, apply_transition
from .store import DependencySpec, DependencyStore, Phase, TransitionDependency, UnknownActivity

__version__ = "0.1.0"

__all__ = [
    "ActionId", "ActivityRecord", "ActivityState", "Decision", "DependencySpec", "DependencyStore",
    "IllegalTransition", "Phase", "TransitionDependency", "UnknownActivity", "apply_transition",
    "default_fixture_path", "default_policy_xml", "load_default_policies",
]


def default_policy_xml() -> str:
    return resources.files(__package__).joinpath("data/activity_policies.xml").read_text()


def default_fixture_path():
    return resources.files(__package__).joinpath("data/farm.json")


def load_default_policies():
    from .policy import parse_policy_set

    return parse_policy_set(default_policy_xml())
