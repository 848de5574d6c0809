"""Communication network: delay/loss channels and the VTN/VEN module."""

from .channel import ChannelState, expected_retransmission_delay
from .module import ROLES, CommsModule, DrNodeRole

__all__ = ["ChannelState", "expected_retransmission_delay", "ROLES", "CommsModule", "DrNodeRole"]
