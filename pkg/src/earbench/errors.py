"""Exception types shared across the package."""


class EarbenchError(Exception):
    pass


# --- image I/O -------------------------------------------------------------

class UnsupportedFormat(EarbenchError):
    def __init__(self, path, detail=""):
        self.path = str(path)
        super().__init__(f"unsupported image format: {self.path} {detail}".rstrip())


class CorruptData(EarbenchError):
    def __init__(self, path, detail=""):
        self.path = str(path)
        super().__init__(f"corrupt image data: {self.path} {detail}".rstrip())


class InvalidDimensions(EarbenchError):
    pass


class ChannelMismatch(EarbenchError):
    pass


# --- descriptors -----------------------------------------------------------

class TooSmall(EarbenchError):
    pass


class NotGrayscale(EarbenchError):
    pass


class LayoutMismatch(EarbenchError):
    pass


# --- nn --------------------------------------------------------------------

class ShapeInferenceError(EarbenchError):
    pass


class ShapeMismatch(EarbenchError):
    pass


class LabelOutOfRange(EarbenchError):
    pass


class StaleCache(EarbenchError):
    pass


class NonFiniteGradient(EarbenchError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"non-finite gradient in parameter {name!r}; step aborted")


class PolicyMismatch(EarbenchError):
    pass


class CheckpointCorrupt(EarbenchError):
    pass


# --- evaluation protocol ---------------------------------------------------

class EmptyManifest(EarbenchError):
    pass


class EmptyRanks(EarbenchError):
    pass


class SubjectSetMismatch(EarbenchError):
    pass


# --- CLI / ingestion -------------------------------------------------------

class NoSubjects(EarbenchError):
    pass


class EmptySubject(EarbenchError):
    pass


class ConfigError(EarbenchError):
    pass
