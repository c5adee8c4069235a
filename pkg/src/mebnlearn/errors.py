"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the command line
can print ``E_CODE: detail`` and exit nonzero.
"""


class MebnError(Exception):
    code = "E_GENERIC"


# relational data

class SchemaError(MebnError):
    code = "E_SCHEMA"


class MissingValue(SchemaError):
    code = "E_ASSUMPTION1"

    def __init__(self, relation, row, attribute):
        self.relation, self.row, self.attribute = relation, row, attribute
        super().__init__(f"missing value in {relation} row {row}, attribute {attribute}")


class DanglingForeignKey(SchemaError):
    code = "E_DANGLING_FK"


class DuplicatePrimaryKey(SchemaError):
    code = "E_DUPLICATE_PK"


class UnknownState(SchemaError):
    code = "E_UNKNOWN_STATE"


class NotNormalized(SchemaError):
    code = "E_NOT_NORMALIZED"


class MergeCardinalityError(SchemaError):
    code = "E_MERGE_CARDINALITY"


class MergeNameClash(SchemaError):
    code = "E_MERGE_NAME_CLASH"


class NotRelationship(SchemaError):
    code = "E_NOT_RELATIONSHIP"


class NonKeyAttributesPresent(SchemaError):
    code = "E_NONKEY_ATTRIBUTES"


class UnsupportedArity(SchemaError):
    code = "E_UNSUPPORTED_ARITY"


# model

class ModelError(MebnError):
    code = "E_MODEL"


class UnknownParentRef(ModelError):
    code = "E_UNKNOWN_PARENT_REF"


class WrongVariant(ModelError):
    code = "E_WRONG_VARIANT"


class NegativeProbability(ModelError):
    code = "E_NEGATIVE_PROBABILITY"


class Unnormalizable(ModelError):
    code = "E_UNNORMALIZABLE"


class UnknownFunction(ModelError):
    code = "E_UNKNOWN_FUNCTION"


class NoApplicableBranch(ModelError):
    code = "E_NO_BRANCH"


class UnsupportedCLDCategory(ModelError):
    code = "E_CLD_CATEGORY"


class InvalidDistribution(ModelError):
    code = "E_INVALID_DISTRIBUTION"


# script parsing

class ScriptError(MebnError):
    code = "E_SCRIPT"

    def __init__(self, message, line=0, col=0):
        self.line, self.col = line, col
        super().__init__(f"{message} (line {line}, column {col})")


class ScriptSyntaxError(ScriptError):
    code = "E_SYNTAX"

    def __init__(self, message, line=0, col=0, expected=None):
        self.expected = expected
        if expected:
            message = f"{message}; expected {expected}"
        super().__init__(message, line, col)


class UnknownBlockLetter(ScriptError):
    code = "E_UNKNOWN_BLOCK"


class UndeclaredOrdinaryVariable(ScriptError):
    code = "E_UNDECLARED_OV"


class DuplicateMFragName(ScriptError):
    code = "E_DUPLICATE_MFRAG"


class StatesNotCovered(ScriptError):
    code = "E_STATES_NOT_COVERED"


class BadDistributionForm(ScriptError):
    code = "E_BAD_DISTRIBUTION"


# mapping

class MappingError(MebnError):
    code = "E_MAPPING"


class NoPath(MappingError):
    code = "E_NO_PATH"


class AmbiguousHint(MappingError):
    code = "E_AMBIGUOUS_HINT"


class CycleIntroduced(MappingError):
    code = "E_CYCLE_INTRODUCED"


class UnknownParent(MappingError):
    code = "E_UNKNOWN_PARENT"


class TypeMismatch(MappingError):
    code = "E_TYPE_MISMATCH"


class RuleSyntaxError(MappingError):
    code = "E_RULE_SYNTAX"


# datasets and learning

class UnmatchedCase(MebnError):
    code = "E_UNMATCHED_CASE"


class UnsupportedJoinKind(MebnError):
    code = "E_UNSUPPORTED_JOIN"


class EmptyData(MebnError):
    code = "E_EMPTY_DATA"


class SingularDesign(MebnError):
    code = "E_SINGULAR_DESIGN"


class InsufficientRows(MebnError):
    code = "E_INSUFFICIENT_ROWS"


# grounding and inference

class InferenceError(MebnError):
    code = "E_INFERENCE"


class UnboundContext(InferenceError):
    code = "E_UNBOUND_CONTEXT"


class CycleAtGroundLevel(InferenceError):
    code = "E_GROUND_CYCLE"


class ContinuousInDiscreteQuery(InferenceError):
    code = "E_CONTINUOUS_IN_DISCRETE"


class NotCLG(InferenceError):
    code = "E_NOT_CLG"


class BadEvidence(InferenceError):
    code = "E_BAD_EVIDENCE"


# scoring

class LengthMismatch(MebnError):
    code = "E_LENGTH_MISMATCH"


class ConfigError(MebnError):
    code = "E_CONFIG"
