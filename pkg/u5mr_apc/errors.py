"""Exception hierarchy shared by every module of the package."""


class U5mrError(Exception):
    """Base class for all errors raised by u5mr_apc."""


class RecordError(U5mrError):
    """A birth-history record violates its invariants."""


class GraphError(U5mrError):
    """The adjacency structure is malformed (asymmetric, self-loops, unknown ids)."""


class StructureError(U5mrError):
    """A precision structure does not have the declared rank or null space."""


class ParameterError(U5mrError):
    """A hyperparameter or probability lies outside its domain."""


class ModelAssemblyError(U5mrError):
    """The latent model cannot be assembled from the supplied inputs."""


class ConvergenceError(U5mrError):
    """An iterative procedure did not converge within its budget."""


class DesignError(U5mrError):
    """A survey design is infeasible for the population it is drawn from."""


class ConfigError(U5mrError):
    """A configuration file or option combination is invalid."""


class EstimateUndefinedError(U5mrError):
    """A direct estimate (or a series of them) is not defined."""
