"""Exception hierarchy shared by all mflgames modules."""


class MFLError(Exception):
    """Base class for every error raised by mflgames."""


# environment / state construction
class EmptySupport(MFLError, ValueError):
    pass


class NegativeWeight(MFLError, ValueError):
    pass


class WeightSumOutOfRange(MFLError, ValueError):
    pass


class BadInitializerSpec(MFLError, ValueError):
    pass


class FileFormatError(MFLError, ValueError):
    pass


class EnvironmentMismatch(MFLError, ValueError):
    pass


# integration
class NonFiniteDrift(MFLError, FloatingPointError):
    """The game oracle returned NaN or Inf.

    ``player``, ``env_index`` and ``particle`` locate the first offending value.
    """

    def __init__(self, player, env_index, particle, step=None):
        self.player = player
        self.env_index = env_index
        self.particle = particle
        self.step = step
        super().__init__(
            f"non-finite drift for player {player}, environment index {env_index}, "
            f"particle {particle} (step {step})"
        )


class NonFiniteState(MFLError, FloatingPointError):
    def __init__(self, player, env_index, particle, step=None, reason="non-finite"):
        self.player = player
        self.env_index = env_index
        self.particle = particle
        self.step = step
        super().__init__(
            f"{reason} state for player {player}, environment index {env_index}, "
            f"particle {particle} after step {step}"
        )


class MonitorFailure(MFLError, RuntimeError):
    pass


# metrics
class EmptySample(MFLError, ValueError):
    pass


class TooManyParticles(MFLError, ValueError):
    pass


class DimensionMismatch(MFLError, ValueError):
    pass


class DegenerateSample(MFLError, ValueError):
    pass


class ScoreEstimationFailure(MFLError, RuntimeError):
    pass


class EnergyUnavailable(MFLError, NotImplementedError):
    pass


# contraction
class KappaNotEventuallyNegative(MFLError, ValueError):
    pass


class QuadratureFailure(MFLError, RuntimeError):
    pass


# games
class OdeBlowup(MFLError, FloatingPointError):
    pass


# gan
class NonFiniteLogDensity(MFLError, FloatingPointError):
    pass


class EmptySampleSet(MFLError, ValueError):
    pass


# cli
class ConfigParseError(MFLError, ValueError):
    """Malformed or schema-violating experiment config.

    ``path`` is the dotted location of the offending key, when known.
    """

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
