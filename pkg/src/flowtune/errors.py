"""Exception hierarchy shared by all flowtune modules."""


class FlowtuneError(Exception):
    pass


class GraphError(FlowtuneError, ValueError):
    pass


class CycleDetected(GraphError):
    def __init__(self, stages):
        self.stages = list(stages)
        super().__init__(f"cycle detected through stages {self.stages}")


class DanglingConnector(GraphError):
    def __init__(self, pair):
        self.pair = tuple(pair)
        super().__init__(f"connector {self.pair} references an unknown stage")


class UnreachableStage(GraphError):
    def __init__(self, stage, reason="not on any source-to-sink path"):
        self.stage = stage
        super().__init__(f"stage {stage!r} is {reason}")


class MissingWeight(FlowtuneError, KeyError):
    def __init__(self, stage):
        self.stage = stage
        super().__init__(f"no weight for stage {stage!r}")

    def __str__(self):
        return self.args[0]


class DimensionMismatch(FlowtuneError, ValueError):
    pass


class NonFiniteObservation(FlowtuneError, ValueError):
    pass


class EmptySampleSet(FlowtuneError, ValueError):
    pass


class EmptySamples(EmptySampleSet):
    pass


class InsufficientVariation(FlowtuneError, ValueError):
    pass


class UntrainedStage(FlowtuneError, RuntimeError):
    def __init__(self, stage):
        self.stage = stage
        super().__init__(f"moving average for stage {stage!r} has no observations")


class EmptyActionSet(FlowtuneError, ValueError):
    pass


class InvalidGenerator(FlowtuneError, ValueError):
    pass


class IncompleteTrace(FlowtuneError, ValueError):
    pass


class ConfigError(FlowtuneError, ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""
