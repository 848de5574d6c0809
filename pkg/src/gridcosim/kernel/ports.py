"""Port and module descriptors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from ..errors import ConfigError

MODULE_KINDS = ("model-exchange", "co-simulation", "discrete-time", "delay-channel")
VALUE_KINDS = ("real", "integer", "boolean", "message")


@dataclass(frozen=True)
class PortRef:
    module: str
    port: str
    direction: str = "output"
    kind: str = "real"

    def __post_init__(self):
        if self.direction not in ("input", "output"):
            raise ConfigError(f"port direction must be input or output, got {self.direction!r}")
        if self.kind not in VALUE_KINDS:
            raise ConfigError(f"unknown value kind {self.kind!r}")

    @property
    def key(self) -> str:
        return f"{self.module}.{self.port}"

    def __str__(self) -> str:
        return self.key


@dataclass(frozen=True)
class PortSpec:
    """A port as declared by a module.

    ``default`` is used for unwired inputs. ``logged`` controls whether value
    changes on an output go to the event log (traces are unaffected).
    """

    name: str
    direction: str
    kind: str = "real"
    default: Any = None
    logged: bool = True

    def __post_init__(self):
        if self.direction not in ("input", "output"):
            raise ConfigError(f"port {self.name!r}: direction must be input or output")
        if self.kind not in VALUE_KINDS:
            raise ConfigError(f"port {self.name!r}: unknown value kind {self.kind!r}")


def inp(name: str, kind: str = "real", default: Any = None) -> PortSpec:
    return PortSpec(name, "input", kind, default)


def out(name: str, kind: str = "real", logged: bool = True) -> PortSpec:
    return PortSpec(name, "output", kind, logged=logged)


@dataclass
class ModuleDescriptor:
    """Static description of a module: kind, ports, direct feedthrough.

    ``feedthrough`` maps an input port to the outputs that depend on it
    algebraically. It must be given explicitly for co-simulation modules and
    must be empty for discrete-time and delay-channel modules.
    """

    module_id: str
    kind: str
    ports: list[PortSpec]
    feedthrough: Optional[Mapping[str, set]] = None
    period: Optional[float] = None
    n_states: int = 0
    _by_name: dict = field(init=False, repr=False)

    def __post_init__(self):
        if not self.module_id or "." in self.module_id:
            raise ConfigError(f"invalid module id {self.module_id!r}")
        if self.kind not in MODULE_KINDS:
            raise ConfigError(f"{self.module_id}: unknown module kind {self.kind!r}")
        self._by_name = {}
        for p in self.ports:
            if p.name in self._by_name:
                raise ConfigError(f"{self.module_id}: duplicate port {p.name!r}")
            self._by_name[p.name] = p
        if self.kind == "co-simulation" and self.feedthrough is None:
            raise ConfigError(f"{self.module_id}: co-simulation modules must declare feedthrough")
        ft = {k: set(v) for k, v in (self.feedthrough or {}).items()}
        for src, dests in ft.items():
            if src not in self.inputs:
                raise ConfigError(f"{self.module_id}: feedthrough names unknown input {src!r}")
            for d in dests:
                if d not in self.outputs:
                    raise ConfigError(f"{self.module_id}: feedthrough names unknown output {d!r}")
        self.feedthrough = ft
        if self.kind == "model-exchange" and self.n_states < 1:
            raise ConfigError(f"{self.module_id}: model-exchange modules need at least one state")
        if self.kind == "discrete-time":
            if self.period is None or not self.period > 0:
                raise ConfigError(f"{self.module_id}: discrete-time modules need period > 0")
        elif self.period is not None:
            raise ConfigError(f"{self.module_id}: only discrete-time modules take a period")
        if self.kind in ("discrete-time", "delay-channel") and any(ft.values()):
            raise ConfigError(f"{self.module_id}: {self.kind} modules cannot have direct feedthrough")

    @property
    def inputs(self) -> dict[str, PortSpec]:
        return {n: p for n, p in self._by_name.items() if p.direction == "input"}

    @property
    def outputs(self) -> dict[str, PortSpec]:
        return {n: p for n, p in self._by_name.items() if p.direction == "output"}

    def port(self, name: str) -> PortSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise ConfigError(f"{self.module_id} has no port {name!r}") from None

    def ref(self, name: str) -> PortRef:
        p = self.port(name)
        return PortRef(self.module_id, name, p.direction, p.kind)

    def feedthrough_outputs(self) -> set:
        """Outputs that depend directly on at least one input."""
        return set().union(*self.feedthrough.values()) if self.feedthrough else set()
