"""Enumerations for the VoI toolkit."""

from enum import Enum


class ExoKind(str, Enum):
    """How an exogenous-information process generates its samples.

    Attributes:
        IID: Draws independent of all past states, actions and draws
        DRIVEN: W_k = f^W(W~_k) with W~_k carried from step to step
        TRACE: Replay of a recorded sequence
    """

    IID = "iid"
    DRIVEN = "driven"
    TRACE = "trace"


class AugmentationKind(str, Enum):
    """State augmentation transforms."""

    WITH_W = "with_W"
    WITH_WTILDE = "with_Wtilde"
    RANDOM_DELAY = "random_delay"


class ObservationKind(str, Enum):
    """What the follower sees of the predecessor acceleration.

    Attributes:
        FULL: The true value
        MISSING_DUMMY: A fixed dummy value
        LAST_RECEIVED: The newest delivered value with its delay and action history
    """

    FULL = "full"
    MISSING_DUMMY = "missing_dummy"
    LAST_RECEIVED = "last_received"


class TrajectorySource(str, Enum):
    """Origin of a predecessor trajectory."""

    SYNTHETIC = "synthetic"
    FILE = "file"


class VoiKind(str, Enum):
    """VoI categories."""

    EVOMI = "EVoMI"
    EVOII = "EVoII"
    IVOMI = "IVoMI"
    IVOII = "IVoII"
    ITVOI = "ITVoI"


class VoiMethod(str, Enum):
    """Provenance of a VoI value."""

    EXACT_DP = "exactDP"
    MONTE_CARLO = "monteCarlo"
    A = "A"
    B = "B"
    C = "C"
    KL_BRUTE_FORCE = "klBruteForce"


class Activation(str, Enum):
    """Hidden-layer activations."""

    TANH = "tanh"
    RELU = "relu"
    IDENTITY = "identity"


class CommDecision(str, Enum):
    """Communication SSDP categories."""

    WHEN = "when"
    HOW = "how"


class ReceiverFallback(str, Enum):
    """Receiver behaviour when no CAM was delivered in the last control interval."""

    DUMMY = "dummy"
    LAST_RECEIVED = "last_received"


class Scenario(str, Enum):
    """Experiment presets."""

    CASE8_VOI = "case8_voi"
    CASE11_COMM = "case11_comm"
    TABULAR_PROPERTIES = "tabular_properties"
    CUSTOM = "custom"
