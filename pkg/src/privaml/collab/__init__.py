"""Multi-party encrypted scoring: wire format, coordinator, client roles."""

from .clients import (
    InquiryResult,
    ScoredRow,
    SubmissionReport,
    inquire,
    participate,
)
from .service import CollabServer
from .wire import (
    PROTOCOL_VERSION,
    Ack,
    BadFrame,
    ComputeDone,
    EncryptedBatch,
    Error,
    ProtocolError,
    QueryForward,
    QueryInit,
    Register,
    Session,
    SessionExpired,
    TierMismatch,
    UnknownModel,
    VersionMismatch,
)

__all__ = [
    "PROTOCOL_VERSION",
    "Ack",
    "BadFrame",
    "CollabServer",
    "ComputeDone",
    "EncryptedBatch",
    "Error",
    "InquiryResult",
    "ProtocolError",
    "QueryForward",
    "QueryInit",
    "Register",
    "ScoredRow",
    "Session",
    "SessionExpired",
    "SubmissionReport",
    "TierMismatch",
    "UnknownModel",
    "VersionMismatch",
    "inquire",
    "participate",
]
