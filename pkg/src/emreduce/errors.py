"""Error taxonomy shared by every engine.

Every numerical guard violation maps to a named exception carrying enough
payload (offending site, value) to reproduce the failure from a manifest.
"""

from __future__ import annotations


class EmreduceError(Exception):
    """Base class; carries an optional machine-readable payload dict."""

    def __init__(self, message: str, **payload):
        super().__init__(message)
        self.payload = dict(payload)

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self), **self.payload}


class ConfigInvalid(EmreduceError):
    pass


class LatticeMismatch(EmreduceError):
    pass


class NonConvergence(EmreduceError):
    pass


class NullSpace(EmreduceError):
    pass


class NonFinite(EmreduceError):
    pass


class PreconditionViolated(EmreduceError):
    pass


class SingularB0(EmreduceError):
    pass


class SingularPhi(EmreduceError):
    pass


class SingularF(EmreduceError):
    pass


class SingularPsi1(EmreduceError):
    pass


class NonPositiveDensity(EmreduceError):
    pass


class BranchCutAmbiguity(EmreduceError):
    pass


class ChainFailure(EmreduceError):
    pass


class TruncationTooSevere(EmreduceError):
    pass


class DegreeVsCutoff(EmreduceError):
    pass


class VacuumDepleted(EmreduceError):
    pass


class Instability(EmreduceError):
    pass


class Mismatch(EmreduceError):
    pass


class MissingQuantity(EmreduceError):
    pass
