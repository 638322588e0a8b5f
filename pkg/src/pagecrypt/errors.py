"""Exception types shared across the framework."""


class PageCryptError(Exception):
    """Base class for all framework errors."""


class ContractViolation(PageCryptError):
    """A caller broke a documented precondition (duplicate insert, bad lane
    count, toggle after first stack access, ...)."""


class ProtocolError(PageCryptError):
    """Malformed wire message or an out-of-order control/transfer exchange."""


class SegmentationViolation(PageCryptError):
    """Simulated SIGSEGV: access outside any registered region."""


class AllocationError(PageCryptError):
    """Simulated address-space exhaustion."""


class PoolError(PageCryptError):
    """Worker pool lifecycle error (double key install, submit after
    shutdown, shutdown with requests still in flight)."""


class TraceError(PageCryptError):
    """Unparseable trace line or a reference to an unknown region handle."""
