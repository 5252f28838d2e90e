"""Exception hierarchy.

Every error carries a module-qualified ``code`` (``"ingest.MissingFrames"``)
so the CLI can emit a machine-readable failure record.
"""


class PulseBenchError(Exception):
    module = "pulsebench"
    name: str | None = None

    @property
    def code(self) -> str:
        return f"{self.module}.{self.name or type(self).__name__}"


# ingest
class IngestError(PulseBenchError):
    module = "ingest"


class MissingFrames(IngestError):
    pass


class LabelMismatch(IngestError):
    pass


class MalformedMeta(IngestError):
    pass


class EmptyTrace(IngestError):
    pass


class EmptyDataset(IngestError):
    pass


# preprocess
class PreprocessError(PulseBenchError):
    module = "preprocess"


class ClipTooLong(PreprocessError):
    pass


class RecordTooShort(PreprocessError):
    pass


# spectral
class SpectralError(PulseBenchError):
    module = "spectral"


class TraceTooShort(SpectralError):
    pass


class NoSpectralPeak(SpectralError):
    pass


class EmptyBand(SpectralError):
    pass


# model
class ModelError(PulseBenchError):
    module = "model"


class ShapeError(ModelError):
    pass


class UnfittedParams(ModelError):
    pass


# loss
class LossError(PulseBenchError):
    module = "loss"


class InvalidClass(LossError):
    pass


class ZeroResidual(LossError):
    pass


# baselines
class BaselineError(PulseBenchError):
    module = "baselines"


class DegenerateColor(BaselineError):
    pass


class BaselineTraceTooShort(BaselineError):
    name = "TraceTooShort"


# metrics
class MetricsError(PulseBenchError):
    module = "metrics"


class LengthMismatch(MetricsError):
    pass


class ZeroVariance(MetricsError):
    pass


class EmptyList(MetricsError):
    pass


# synthgen
class SynthError(PulseBenchError):
    module = "synthgen"


class ContourOutOfFrame(SynthError):
    pass


class IoFailure(SynthError):
    pass


# trainer
class TrainerError(PulseBenchError):
    module = "trainer"


class NonfiniteLoss(TrainerError):
    pass


class ShapeMismatch(TrainerError):
    pass


# cli
class CliError(PulseBenchError):
    module = "cli"


class UnknownCommand(CliError):
    pass


class ConfigError(CliError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key
