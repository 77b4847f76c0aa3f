"""Exception hierarchy shared across the gateway stack."""


class GatekeepError(Exception):
    """Base class for all errors raised by this package."""


class EmptyId(GatekeepError):
    pass


class DuplicateId(GatekeepError):
    pass


class UnknownIdentity(GatekeepError):
    pass


class IdentityBanned(GatekeepError):
    pass


class UnknownScope(GatekeepError):
    pass


class UnknownGrant(GatekeepError):
    pass


class GrantRevoked(GatekeepError):
    pass


class UnknownToken(GatekeepError):
    pass


class TokenExpired(GatekeepError):
    pass


class ScopeMismatch(GatekeepError):
    pass


class OutOfOrderTimestamp(GatekeepError):
    pass


class DuplicateService(GatekeepError):
    pass


class UpstreamFailure(GatekeepError):
    pass


class MalformedDestination(GatekeepError):
    pass


class ParseError(GatekeepError):
    pass


class BadVersion(ParseError):
    pass


class ScriptError(GatekeepError):
    pass


class ConfigError(GatekeepError):
    pass


class BindError(GatekeepError):
    pass


class IoError(GatekeepError):
    pass
