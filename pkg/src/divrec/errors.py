"""Exception types raised across the pipeline."""


class DivrecError(Exception):
    """Base class for all package errors."""


class ConfigError(DivrecError, ValueError):
    """Invalid or incompatible configuration."""


class UnreadableStream(DivrecError):
    pass


class UnknownFormat(DivrecError, ValueError):
    pass


class EmptyInput(DivrecError, ValueError):
    pass


class DegenerateSplit(DivrecError, ValueError):
    pass


class EmptyVocab(DivrecError, ValueError):
    pass


class IndexOutOfRange(DivrecError, IndexError):
    pass


class ZeroVector(DivrecError, ValueError):
    """Cosine similarity is undefined for a zero vector."""


class EmptyNegativeSet(DivrecError, ValueError):
    pass


class NonFiniteError(DivrecError, FloatingPointError):
    pass


class NonFiniteUpdate(NonFiniteError):
    """Embedding training diverged; usually the learning rate is too high."""


class NonFiniteActivation(NonFiniteError):
    pass


class NonFiniteGradient(NonFiniteError):
    pass


class EmptyRun(DivrecError, ValueError):
    pass


class DegenerateCatalog(DivrecError, ValueError):
    pass


class ZeroExposure(DivrecError, ValueError):
    pass


class InvalidConfig(ConfigError):
    pass


class UnknownItems(DivrecError, KeyError):
    def __init__(self, items):
        self.items = list(items)
        super().__init__("unknown item ids: " + ", ".join(map(str, self.items)))

    def __str__(self):
        return self.args[0]
