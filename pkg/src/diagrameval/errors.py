"""Exception hierarchy shared by every module in the package."""


class DiagramEvalError(Exception):
    """Base class for all errors raised by diagrameval."""


# document model
class MalformedInput(DiagramEvalError, ValueError):
    pass


class UnsupportedFeature(DiagramEvalError, ValueError):
    def __init__(self, feature: str, detail: str = ""):
        self.feature = feature
        msg = f"unsupported feature: {feature}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class EmptyDocument(DiagramEvalError, ValueError):
    pass


class DegenerateCanvas(DiagramEvalError, ValueError):
    pass


# metrics
class OutOfRange(DiagramEvalError, ValueError):
    pass


class NegativeCount(DiagramEvalError, ValueError):
    pass


# judge gateway
class JudgeError(DiagramEvalError):
    pass


class JudgeUnreachable(JudgeError):
    pass


class UnparseableVerdict(JudgeError):
    pass


# scoring
class WeightMismatch(DiagramEvalError, ValueError):
    pass


class MalformedTrace(DiagramEvalError, ValueError):
    pass


class NonpositiveK(DiagramEvalError, ValueError):
    pass


class UnfrozenSeason(DiagramEvalError):
    pass


class EmptySeason(DiagramEvalError, ValueError):
    pass


# sampling
class EmptySubset(DiagramEvalError, ValueError):
    pass


class CorpusTooSmall(DiagramEvalError, ValueError):
    pass


class InvalidCohortSize(DiagramEvalError, ValueError):
    pass


# registry
class DuplicateId(DiagramEvalError, ValueError):
    def __init__(self, item_id: str):
        self.item_id = item_id
        super().__init__(f"duplicate id: {item_id}")


class SeasonIncomplete(DiagramEvalError):
    pass


class InsufficientCorpus(DiagramEvalError, ValueError):
    pass


class ImmutableCohort(DiagramEvalError):
    pass
