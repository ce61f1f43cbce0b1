"""Exception hierarchy shared by all geobrdf modules."""


class GeoBrdfError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(GeoBrdfError, ValueError):
    pass


class InvalidStatsError(GeoBrdfError, ValueError):
    pass


class DegenerateGeometryError(GeoBrdfError, ValueError):
    pass


class ModelArityError(GeoBrdfError, ValueError):
    pass


class AlignmentError(GeoBrdfError, ValueError):
    pass


class EmptyDomainError(GeoBrdfError, ValueError):
    pass


class ShapeError(GeoBrdfError, ValueError):
    pass


class UnderObservedError(GeoBrdfError):
    """Least-squares system has fewer independent observations than parameters."""

    def __init__(self, rank, n_params, cond=float("inf"), message=None):
        self.rank = int(rank)
        self.n_params = int(n_params)
        self.cond = float(cond)
        super().__init__(
            message or f"under-observed: rank {self.rank} < {self.n_params} parameters "
            f"(condition number {self.cond:.3g})"
        )


class DivergenceError(GeoBrdfError):
    def __init__(self, message, trajectory):
        self.trajectory = list(trajectory)
        super().__init__(message)


class TrainingInstabilityError(GeoBrdfError):
    def __init__(self, message, batch_id, epoch=None):
        self.batch_id = batch_id
        self.epoch = epoch
        super().__init__(message)
