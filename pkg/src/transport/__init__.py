from typing import Optional

from src.transport.base import DatagramTransport, ImpairedTransport
from src.transport.impairment import ImpairmentConfig
from src.transport.qos import QosProfile
from src.transport.simulated import SimulatedNetwork


def create_transport(config: dict, clock, network: Optional[SimulatedNetwork] = None,
                     impairment: Optional[ImpairmentConfig] = None) -> DatagramTransport:
    """Simulated transport when `network` is given, real UDP otherwise;
    wrapped in the impairment layer when the configuration asks for it."""
    if network is not None:
        transport = network.attach()
    else:
        from src.transport.udp import UdpTransport
        transport = UdpTransport(config)
    impairment = impairment or ImpairmentConfig.from_config(config)
    if not impairment.is_noop:
        transport = ImpairedTransport(transport, impairment, clock)
    return transport


__all__ = ["DatagramTransport", "ImpairedTransport", "ImpairmentConfig", "QosProfile",
           "SimulatedNetwork", "create_transport"]
