"""Signatures of the condition functions a policy may apply.

The PDP supplies the implementations; the parser only needs names, arity and
whether arguments are booleans or string-valued attributes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class Signature:
    min_args: int
    max_args: Optional[int]  # None: variadic
    arg_kind: str  # "bool" | "string"


FUNCTIONS: dict[str, Signature] = {
    "and": Signature(0, None, "bool"),
    "or": Signature(0, None, "bool"),
    "not": Signature(1, 1, "bool"),
    "state-equal": Signature(2, 2, "string"),  # (activity, state)
    "is-mutable": Signature(1, 1, "string"),  # (activity)
    "dependency-set-empty": Signature(2, 2, "string"),  # (subject, phase)
    "all-in-desired-state": Signature(2, 2, "string"),  # (subject, phase)
    "chain-empty": Signature(2, 2, "string"),  # (activity, target state)
    "chain-all-in-required-state": Signature(2, 2, "string"),  # (activity, target state)
    "chain-has-immutable-unmet": Signature(2, 2, "string"),  # (activity, target state)
}
