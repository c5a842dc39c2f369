"""Sender/receiver protocols, wire format, FEC and rate control."""

from .baselines import BaselineSender
from .grace import GraceSender, select_rung
from .rate import DelayAIMD, OracleTrace, Replay, make_controller
from .receiver import BaselineReceiver, GraceReceiver, SvcOracle
from .wire import MTU, Feedback, Packet, ResendRequest, WireError

SCHEMES = ("grace", "fec", "svc", "skip")


def make_scheme(name: str, width: int, height: int, fps: float = 25.0, mtu: int = MTU, **opts):
    """Matched ``(sender, receiver)`` pair for a scheme name."""
    if name == "grace":
        return GraceSender(fps=fps, mtu=mtu, **opts), GraceReceiver(width, height)
    if name in ("fec", "skip"):
        return BaselineSender(name, fps=fps, mtu=mtu, **opts), BaselineReceiver(width, height, name)
    if name == "svc":
        oracle = SvcOracle()
        return (BaselineSender("svc", fps=fps, mtu=mtu, oracle=oracle, **opts),
                BaselineReceiver(width, height, "svc", oracle=oracle))
    raise ValueError(f"unknown scheme {name!r}; choose from {', '.join(SCHEMES)}")
