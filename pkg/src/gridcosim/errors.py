"""Exception types shared across modules.

``ConfigError`` covers anything wrong with the inputs to a run (bad scenario,
bad wiring, bad parameters); ``SimulationError`` covers failures while the
event loop is running.
"""


class ConfigError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass
