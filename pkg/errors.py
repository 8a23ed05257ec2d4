"""
Exceptions raised throughout the application.

Every error carries the process exit code the CLI reports for it.
"""

__all__ = [
    'LPIError', 'InputError', 'InvalidArgument', 'DegenerateInput', 'DisconnectedGraph', 'MalformedFile',
    'CorruptCheckpoint', 'NumericalError', 'EmptyBatch', 'EmptyMesh', 'MetricPreconditionError',
    'NonWatertight', 'DegenerateMesh', 'DegeneratePart'
]


class LPIError(Exception):
    exit_code = 1


# Exit code 2: bad input
class InputError(LPIError):
    exit_code = 2


class InvalidArgument(InputError, ValueError):
    pass


class DegenerateInput(InputError):
    pass


class DisconnectedGraph(InputError):
    def __init__(self, component_sizes: list[int], knn_k: int):
        self.component_sizes = component_sizes
        self.knn_k = knn_k
        super().__init__(
            f'kNN graph (k={knn_k}) has {len(component_sizes)} components of sizes {component_sizes}; '
            f'increase the neighbour count'
        )


class MalformedFile(InputError):
    pass


class CorruptCheckpoint(InputError):
    pass


# Exit code 3: numerical abort
class NumericalError(LPIError):
    exit_code = 3


class EmptyBatch(NumericalError):
    pass


class EmptyMesh(NumericalError):
    pass


# Exit code 4: a metric cannot be computed on the given input
class MetricPreconditionError(LPIError):
    exit_code = 4


class NonWatertight(MetricPreconditionError):
    pass


class DegenerateMesh(MetricPreconditionError):
    pass


# Never leaves the hull routine; the caller substitutes a flagged fallback
class DegeneratePart(LPIError):
    pass
