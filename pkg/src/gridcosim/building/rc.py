"""Lumped RC thermal networks and their state-space form.

State order: zone air temperatures, internal-mass temperatures, then wall
layer temperatures zone by zone. Temperatures are in K, heat flows in W,
irradiance in W/m². Each wall layer is a T-section: its node sits in the
middle of the layer with half the layer resistance on either side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import signal

from ..errors import ConfigError

DISTURBANCES = ("Q_IHG", "T_AMB", "T_GND", "S_E", "S_W", "S_N", "S_S")
FACADES = ("E", "W", "N", "S")
TEMPERATURE_INPUTS = (1, 2)


@dataclass
class WallSpec:
    """A wall, roof or slab bounding a zone.

    ``layers`` lists (capacitance J/K, resistance K/W) from the zone side
    outwards. ``boundary`` is ``"exterior"``, ``"ground"`` or the name of the
    adjacent zone (which must list the mirror wall). Solar gains are
    ``area * S_facade`` times ``solar_ext`` (to the outer layer) and
    ``solar_int`` (to the inner layer).
    """

    layers: list[tuple[float, float]]
    boundary: str = "exterior"
    facade: Optional[str] = None
    area: float = 0.0
    solar_int: float = 0.0
    solar_ext: float = 0.0
    r_inside: float = 0.0
    r_outside: float = 0.0

    def __post_init__(self):
        self.layers = [(float(c), float(r)) for c, r in self.layers]
        if len(self.layers) < 1:
            raise ConfigError("a wall needs at least one layer")
        for c, r in self.layers:
            if not c > 0:
                raise ConfigError(f"wall layer capacitance must be positive, got {c}")
            if not r > 0:
                raise ConfigError(f"wall layer resistance must be positive, got {r}")
        if self.r_inside < 0 or self.r_outside < 0:
            raise ConfigError("surface resistances cannot be negative")
        if self.facade is not None and self.facade not in FACADES:
            raise ConfigError(f"unknown facade {self.facade!r}; expected one of {FACADES}")
        if (self.solar_int or self.solar_ext) and self.facade is None:
            raise ConfigError("solar shares need a facade")


@dataclass
class ZoneSpec:
    """A thermal zone: air node, internal-mass node and bounding walls.

    ``gain_share`` is the zone's fraction of the building internal gains
    (None: by volume). ``im_split`` of those go to the internal mass, the rest
    to the air. Windows are a massless conductance to ambient plus a solar
    aperture per facade feeding the zone air.
    """

    name: str
    volume: float
    c_air: float
    c_im: float
    r_im: float
    walls: list[WallSpec] = field(default_factory=list)
    gain_share: Optional[float] = None
    im_split: float = 0.5
    ua_window: float = 0.0
    window_aperture: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.volume > 0:
            raise ConfigError(f"zone {self.name!r}: volume must be positive")
        if not (self.c_air > 0 and self.c_im > 0):
            raise ConfigError(f"zone {self.name!r}: capacitances must be positive")
        if not self.r_im > 0:
            raise ConfigError(f"zone {self.name!r}: internal-mass resistance must be positive")
        if not 0.0 <= self.im_split <= 1.0:
            raise ConfigError(f"zone {self.name!r}: im_split must lie in [0, 1]")
        for f in self.window_aperture:
            if f not in FACADES:
                raise ConfigError(f"zone {self.name!r}: unknown facade {f!r}")


@dataclass
class StateSpaceModel:
    """``dx/dt = A x + B_u u + B_v v``, ``y = C x + D_u u + D_v v``."""

    A: np.ndarray
    B_v: np.ndarray
    C: np.ndarray
    B_u: Optional[np.ndarray] = None
    D_u: Optional[np.ndarray] = None
    D_v: Optional[np.ndarray] = None
    state_labels: list[str] = field(default_factory=list)
    disturbance_labels: list[str] = field(default_factory=lambda: list(DISTURBANCES))
    output_labels: list[str] = field(default_factory=lambda: ["T_RET"])
    hankel_singular_values: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None
    zone_volumes: Optional[np.ndarray] = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B_v = np.atleast_2d(np.asarray(self.B_v, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B_v.shape[0] != n or self.C.shape[1] != n:
            raise ConfigError("inconsistent state-space dimensions")
        if not self.state_labels:
            self.state_labels = [f"x{i}" for i in range(n)]

    @property
    def n_zones(self) -> int:
        return 0 if self.zone_volumes is None else len(self.zone_volumes)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)

    def is_stable(self) -> bool:
        return bool(np.all(self.eigenvalues().real < 0))

    def derivative(self, x, v, u=None) -> np.ndarray:
        dx = self.A @ x + self.B_v @ v
        if u is not None and self.B_u is not None:
            dx = dx + self.B_u @ u
        return dx

    def output(self, x, v=None) -> np.ndarray:
        y = self.C @ x
        if v is not None and self.D_v is not None:
            y = y + self.D_v @ v
        return y

    def dc_gain(self) -> np.ndarray:
        """Steady-state output per unit of each disturbance."""
        g = -self.C @ np.linalg.solve(self.A, self.B_v)
        if self.D_v is not None:
            g = g + self.D_v
        return g

    def equilibrium(self, v) -> np.ndarray:
        return -np.linalg.solve(self.A, self.B_v @ np.asarray(v, dtype=float))

    def simulate(self, times, v, x0=None) -> tuple[np.ndarray, np.ndarray]:
        """Exact response to disturbances linear between samples.

        ``v`` has shape (len(times), p). Returns (y, x) with y of shape
        (len(times), outputs).
        """
        times = np.asarray(times, dtype=float)
        v = np.asarray(v, dtype=float)
        D = self.D_v if self.D_v is not None else np.zeros((self.C.shape[0], self.B_v.shape[1]))
        sys_ = signal.StateSpace(self.A, self.B_v, self.C, D)
        x0 = np.zeros(self.n_states) if x0 is None else x0
        _, y, x = signal.lsim(sys_, v, times, X0=x0, interp=True)
        return np.atleast_2d(y.T).T.reshape(len(times), -1), x


@dataclass
class _Assembly:
    cap: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    edges: list = field(default_factory=list)  # (i, j, G)
    bound: list = field(default_factory=list)  # (i, channel, G)
    heat: list = field(default_factory=list)  # (i, channel, coefficient)

    def node(self, c: float, label: str) -> int:
        self.cap.append(c)
        self.labels.append(label)
        return len(self.cap) - 1


def _check_adjacency(zones: Sequence[ZoneSpec], index: dict) -> None:
    pairs: dict[tuple[str, str], list[WallSpec]] = {}
    for z in zones:
        for w in z.walls:
            if w.boundary in ("exterior", "ground"):
                continue
            if w.boundary not in index:
                raise ConfigError(f"zone {z.name!r}: wall adjacent to unknown zone {w.boundary!r}")
            if w.boundary == z.name:
                raise ConfigError(f"zone {z.name!r}: wall adjacent to itself")
            pairs.setdefault((z.name, w.boundary), []).append(w)
    for (a, b), walls in pairs.items():
        mirror = pairs.get((b, a), [])
        if len(mirror) != len(walls):
            raise ConfigError(f"non-symmetric adjacency between zones {a!r} and {b!r}")
        for w, m in zip(walls, mirror):
            if not np.allclose(np.array(w.layers), np.array(m.layers[::-1]), rtol=1e-9, atol=0.0):
                raise ConfigError(f"walls between {a!r} and {b!r} do not mirror each other")


def assemble_rc(zones: Sequence[ZoneSpec]) -> StateSpaceModel:
    """Full RC model with per-zone HVAC heat inputs ``u`` (W into each zone air)."""
    zones = list(zones)
    if not zones:
        raise ConfigError("a building needs at least one zone")
    index = {z.name: i for i, z in enumerate(zones)}
    if len(index) != len(zones):
        raise ConfigError("zone names must be unique")
    _check_adjacency(zones, index)
    nz = len(zones)
    asm = _Assembly()
    for z in zones:
        asm.node(z.c_air, f"{z.name}.air")
    for i, z in enumerate(zones):
        im = asm.node(z.c_im, f"{z.name}.mass")
        asm.edges.append((i, im, 1.0 / z.r_im))

    volumes = np.array([z.volume for z in zones])
    shares = np.array([z.gain_share if z.gain_share is not None else np.nan for z in zones])
    if np.all(np.isnan(shares)):
        shares = volumes / volumes.sum()
    elif np.any(np.isnan(shares)):
        raise ConfigError("give gain_share for every zone or for none")
    elif not np.isclose(shares.sum(), 1.0, atol=1e-9):
        raise ConfigError(f"zone gain shares must sum to 1, got {shares.sum()}")

    for i, z in enumerate(zones):
        asm.heat.append((i, 0, shares[i] * (1.0 - z.im_split)))
        asm.heat.append((nz + i, 0, shares[i] * z.im_split))
        if z.ua_window > 0:
            asm.bound.append((i, 1, z.ua_window))
        for f, aperture in z.window_aperture.items():
            asm.heat.append((i, 3 + FACADES.index(f), float(aperture)))
        for k, w in enumerate(z.walls):
            adjacent = w.boundary not in ("exterior", "ground")
            if adjacent and index[w.boundary] < i:
                continue  # assembled from the other side
            nodes = [asm.node(c, f"{z.name}.wall{k}.layer{n}") for n, (c, _) in enumerate(w.layers)]
            rs = [r for _, r in w.layers]
            asm.edges.append((i, nodes[0], 1.0 / (w.r_inside + rs[0] / 2)))
            for n in range(len(nodes) - 1):
                asm.edges.append((nodes[n], nodes[n + 1], 1.0 / (rs[n] / 2 + rs[n + 1] / 2)))
            g_out = 1.0 / (rs[-1] / 2 + w.r_outside)
            if w.boundary == "exterior":
                asm.bound.append((nodes[-1], 1, g_out))
            elif w.boundary == "ground":
                asm.bound.append((nodes[-1], 2, g_out))
            else:
                asm.edges.append((nodes[-1], index[w.boundary], g_out))
            if w.facade is not None:
                col = 3 + FACADES.index(w.facade)
                if w.solar_ext:
                    asm.heat.append((nodes[-1], col, w.solar_ext * w.area))
                if w.solar_int:
                    asm.heat.append((nodes[0], col, w.solar_int * w.area))

    n = len(asm.cap)
    cap = np.array(asm.cap)
    G = np.zeros((n, n))
    for a, b, g in asm.edges:
        G[a, b] += g
        G[b, a] += g
        G[a, a] -= g
        G[b, b] -= g
    Bv = np.zeros((n, len(DISTURBANCES)))
    for node, ch, g in asm.bound:
        G[node, node] -= g
        Bv[node, ch] += g
    for node, ch, c in asm.heat:
        Bv[node, ch] += c
    _check_connected(G, np.array([np.any(Bv[i, list(TEMPERATURE_INPUTS)] > 0) for i in range(n)]), asm.labels)
    A = G / cap[:, None]
    Bv = Bv / cap[:, None]
    Bu = np.zeros((n, nz))
    for i in range(nz):
        Bu[i, i] = 1.0 / cap[i]
    C = np.zeros((1, n))
    C[0, :nz] = volumes / volumes.sum()
    return StateSpaceModel(A, Bv, C, B_u=Bu, D_u=np.zeros((1, nz)), D_v=np.zeros((1, len(DISTURBANCES))),
                           state_labels=list(asm.labels), zone_volumes=volumes)


def _check_connected(G: np.ndarray, grounded: np.ndarray, labels) -> None:
    """Every node must reach a fixed-temperature boundary through finite resistances."""
    n = G.shape[0]
    reach = grounded.copy()
    adj = (np.abs(G) > 0) & ~np.eye(n, dtype=bool)
    frontier = list(np.nonzero(reach)[0])
    while frontier:
        i = frontier.pop()
        for j in np.nonzero(adj[i] & ~reach)[0]:
            reach[j] = True
            frontier.append(j)
    if not reach.all():
        bad = [labels[i] for i in np.nonzero(~reach)[0]]
        raise ConfigError(f"thermal nodes not connected to any boundary: {bad[:5]}")


def strip_hvac_inputs(model: StateSpaceModel) -> StateSpaceModel:
    """Drop HVAC inputs; output becomes the volume-weighted return temperature."""
    volumes = model.zone_volumes
    C = model.C.copy()
    if volumes is not None:
        C = np.zeros((1, model.n_states))
        C[0, : len(volumes)] = np.asarray(volumes) / np.sum(volumes)
    return StateSpaceModel(model.A.copy(), model.B_v.copy(), C, state_labels=list(model.state_labels),
                           disturbance_labels=list(model.disturbance_labels), output_labels=["T_RET"],
                           zone_volumes=None if volumes is None else np.asarray(volumes))


def shift_inputs(v: np.ndarray, t_ref: float) -> np.ndarray:
    """Disturbance samples in deviation form (temperatures relative to ``t_ref``)."""
    v = np.array(v, dtype=float, copy=True)
    v[..., list(TEMPERATURE_INPUTS)] -= t_ref
    return v
