from src.graph.context import Context
from src.graph.executor import SingleThreadedExecutor
from src.shared.clock import VirtualClock
from src.transport.simulated import SimulatedNetwork


class SimDomain:
    """Contexts on one simulated network, driven by one executor on a
    virtual clock."""

    def __init__(self):
        self.clock = VirtualClock()
        self.network = SimulatedNetwork(self.clock)
        self.executor = SingleThreadedExecutor()
        self.contexts = []

    def context(self, impairment=None, security=None, **config):
        ctx = Context(config=config, network=self.network, impairment=impairment, security=security)
        self.contexts.append(ctx)
        self.executor.add_context(ctx)
        return ctx

    def spin_until(self, predicate, timeout: float = 3.0) -> bool:
        return self.executor.spin_until(predicate, timeout)

    def spin(self, seconds: float) -> int:
        return self.executor.spin(seconds)

    def close(self) -> None:
        for ctx in self.contexts:
            ctx.shutdown()
