"""Exception taxonomy.

Each error carries a short machine-readable ``code`` so ledger transaction
statuses and CLI output can name the failure without parsing messages.
"""

from __future__ import annotations


class CalTraceError(Exception):
    """Base class for all domain errors raised by this package."""

    code = "error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


class InvalidSeedError(CalTraceError):
    code = "invalid-seed"


class InvalidInputError(CalTraceError):
    code = "invalid-input"


class NotFoundError(CalTraceError):
    code = "not-found"


class AlreadyExistsError(CalTraceError):
    code = "already-exists"


class UntrustedCertificateError(CalTraceError):
    code = "untrusted-certificate"


class UnknownOrganisationError(CalTraceError):
    code = "unknown-organisation"


class UnknownTechnicianError(CalTraceError):
    code = "unknown-technician"


class ForgedParentError(CalTraceError):
    code = "forged-parent-signature"


class ForgedTechnicianError(CalTraceError):
    code = "forged-technician-signature"


class BrokenChainError(CalTraceError):
    code = "broken-chain"


class LevelViolationError(CalTraceError):
    code = "level-violation"


class AlreadyRevokedError(CalTraceError):
    code = "already-revoked"


class ForbiddenError(CalTraceError):
    code = "forbidden"


class UnknownCallError(CalTraceError):
    code = "unknown-call"


class ReadOnlyCallError(CalTraceError):
    code = "read-only-call"


class OversizedTransactionError(CalTraceError):
    code = "oversized-transaction"


class EmptyMempoolError(CalTraceError):
    code = "empty-mempool"


class ForkRejectedError(CalTraceError):
    code = "fork-rejected"


class InvalidPowError(CalTraceError):
    code = "invalid-pow"


class InvalidBlockError(CalTraceError):
    code = "invalid-block"


class ChainIntegrityError(CalTraceError):
    code = "chain-integrity"


class InfeasibleSpecError(CalTraceError):
    code = "infeasible-spec"


class IllConditionedError(CalTraceError):
    code = "ill-conditioned"
