"""Security gateway stack for third-party apps on a container platform.

Subsystems: inbound gateway with token auth and behavior analytics,
egress filtering, certificate pinning, a tamper-evident audit chain,
dependency vulnerability scanning and a sandbox admission harness.
"""

__version__ = "0.1.0"
