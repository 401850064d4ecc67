class SgedError(Exception):
    """
    Generic sged exception.
    """


class SceneError(SgedError, ValueError):
    """
    Exception raised when a scene graph cannot be built or parsed.
    """


class SceneVocabularyError(SceneError):
    """
    Raised when an attribute value is outside its vocabulary.
    """


class SceneVariantError(SceneError):
    """
    Raised when a graph breaks the invariants of its variant (grid/relational).
    """


class ProgramError(SgedError, ValueError):
    """
    Exception raised for invalid edit programs.
    """


class ProgramParseError(ProgramError):
    """
    Raised when program text cannot be parsed into tokens.
    """


class ProgramVariantError(ProgramError):
    """
    Raised when a program uses tokens that are illegal for a graph variant.
    """


class ExecutionError(SgedError):
    """
    Exception raised when the modifying engine cannot execute a program.
    """


class GEDError(SgedError, ValueError):
    """
    Exception raised for graph edit distance inputs that cannot be compared.
    """


class GEDSizeError(GEDError):
    """
    Raised when the brute-force oracle is asked to enumerate graphs that are too large.
    """


class PolicyError(SgedError):
    """
    Exception raised by the program policy (sampling, training, model files).
    """


class RetrievalError(SgedError):
    """
    Exception raised during ranking and recall evaluation.
    """


class DatagenError(SgedError):
    """
    Exception raised when a dataset cannot be generated.
    """


class ConfigError(SgedError, ValueError):
    """
    Exception raised for invalid run configuration.
    """
