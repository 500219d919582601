class LocalSurrogatesError(Exception):
    """Base class for every error raised by local_surrogates"""


class InvalidInputError(LocalSurrogatesError, ValueError):
    pass


class DegenerateWeightsError(LocalSurrogatesError, ValueError):
    pass


class UndefinedMetricError(LocalSurrogatesError, ValueError):
    pass


class LoadError(LocalSurrogatesError, ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column


class ConfigError(LocalSurrogatesError, ValueError):
    """Raised once with every validation problem found, not just the first"""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__(
            "invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems)
        )


class DivergedError(LocalSurrogatesError, RuntimeError):
    def __init__(self, message: str, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class StageError(LocalSurrogatesError, RuntimeError):
    def __init__(self, stage: int, name: str, cause: BaseException):
        super().__init__(f"Stage {stage} ({name}) failed: {cause}")
        self.stage = stage
        self.name = name


class ArtifactError(LocalSurrogatesError, FileNotFoundError):
    def __init__(self, path, reason: str = "not found"):
        super().__init__(f"Artifact {path} {reason}")
        self.path = path
