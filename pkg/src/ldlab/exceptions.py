"""Exception hierarchy shared by all ldlab modules.

Every error carries a machine-readable ``code`` that the CLI prints to
stderr.
"""


class LdlabError(Exception):
    code = "error"


# landmarks
class WrongCount(LdlabError, ValueError):
    code = "wrong_count"


class NonFinite(LdlabError, ValueError):
    code = "non_finite"


class OutOfRange(LdlabError, ValueError):
    code = "out_of_range"


class DegenerateFace(LdlabError, ValueError):
    code = "degenerate_face"


class BadResolution(LdlabError, ValueError):
    code = "bad_resolution"


class UnsupportedVersion(LdlabError, ValueError):
    code = "unsupported_version"


# editing
class UnknownKind(LdlabError, ValueError):
    code = "unknown_kind"


class IllegalStrength(LdlabError, ValueError):
    code = "illegal_strength"


class TooFewKinds(LdlabError, ValueError):
    code = "too_few_kinds"


# diffusion / models
class BadRange(LdlabError, ValueError):
    code = "bad_range"


class ShapeMismatch(LdlabError, ValueError):
    code = "shape_mismatch"


class TimestepOutOfRange(LdlabError, ValueError):
    code = "timestep_out_of_range"


class BadTimestepPair(LdlabError, ValueError):
    code = "bad_timestep_pair"


class BadConfig(LdlabError, ValueError):
    code = "bad_config"


class CheckpointMismatch(LdlabError, ValueError):
    code = "checkpoint_mismatch"


class IncompatibleAutoencoder(CheckpointMismatch):
    code = "incompatible_autoencoder"


class WrongStage(LdlabError, ValueError):
    code = "wrong_stage"


class EmptyCorpus(LdlabError, ValueError):
    code = "empty_corpus"


class DegenerateMap(LdlabError, ValueError):
    code = "degenerate_map"


class FeatureNotFound(LdlabError, ValueError):
    code = "feature_not_found"


# evaluation
class CountMismatch(LdlabError, ValueError):
    code = "count_mismatch"


class EmptyList(LdlabError, ValueError):
    code = "empty_list"


class IoError(LdlabError, OSError):
    code = "io_error"
