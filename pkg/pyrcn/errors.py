class PyrcnError(ValueError):
    """Base class of every error raised by pyrcn. CLI maps it to exit code 2."""


class DomainError(PyrcnError):
    pass


class UnstableCounterError(DomainError):
    def __init__(self, lambda_, mu):
        self.lambda_ = lambda_
        self.mu = mu
        super().__init__(f"unstable counter: rho = {lambda_}/{mu} must be < 1")


class TruncationError(PyrcnError):
    pass


class NumericError(PyrcnError):
    pass


class ConfigError(PyrcnError):
    pass


class InfeasibleConstraintError(PyrcnError):
    pass


class SinkWithoutStorageError(PyrcnError):
    def __init__(self, cache):
        self.cache = cache
        super().__init__(f"sink without storage: cache {cache + 1} can miss but has no outgoing link")


class UnplacedContentError(PyrcnError):
    def __init__(self, content):
        self.content = content
        super().__init__(f"unplaced content: file {content + 1} is requested but absorbed nowhere")
