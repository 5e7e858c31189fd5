from .canonical import JsonSyntaxError, from_canonical_json, to_canonical_json
from .lint import Diagnostic, validate_corpus
from .model import (
    Apply,
    AttributeDesignator,
    AttributeValue,
    CombiningAlg,
    ForAllBinding,
    Match,
    ObligationExpression,
    Policy,
    PolicySet,
    ProvisionalAction,
    Quantified,
    Rule,
    SchemaViolation,
    Target,
)
from .parser import XACML_AD_NS, XACML_NS, XmlSyntaxError, parse_policy_set, to_xml, validate_model

__all__ = [
    "Apply", "AttributeDesignator", "AttributeValue", "CombiningAlg", "Diagnostic", "ForAllBinding",
    "JsonSyntaxError", "Match", "ObligationExpression", "Policy", "PolicySet", "ProvisionalAction",
    "Quantified", "Rule", "SchemaViolation", "Target", "XACML_AD_NS", "XACML_NS", "XmlSyntaxError",
    "from_canonical_json", "parse_policy_set", "to_canonical_json", "to_xml", "validate_corpus",
    "validate_model",
]
