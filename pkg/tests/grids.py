"""Bundled small grids shared across the test suite (all <= 6 buses)."""

from __future__ import annotations

from analyse.grid import Bus, GridModel, Line, Load, Sgen


def two_bus(p_pu: float = 0.5, q_pu: float = 0.0) -> GridModel:
    """Slack feeding one PQ load over a purely reactive line (r=0, x=0.1)."""
    base = 10.0
    return GridModel(
        base_mva=base,
        buses=(Bus(1, "slack", 1.0), Bus(2)),
        lines=(Line(1, 2, 0.0, 0.1, 0.0, 10.0),),
        loads=(Load(2, p_pu * base, q_pu * base),),
    )


def feeder4(scale: float = 1.0, pv_q: tuple[float, float, float, float] = (0, 0, 0, 0)) -> GridModel:
    """The reference radial feeder: buses 1-2-3-4, two PV assets per load bus."""
    sgens = (
        Sgen(3, 0.0, pv_q[0], -1.2, 1.2),
        Sgen(3, 0.0, pv_q[1], -1.2, 1.2),
        Sgen(4, 0.0, pv_q[2], -1.2, 1.2),
        Sgen(4, 0.0, pv_q[3], -1.2, 1.2),
    )
    return GridModel(
        base_mva=10.0,
        buses=(Bus(1, "slack", 1.0), Bus(2), Bus(3), Bus(4)),
        lines=(
            Line(1, 2, 0.01, 0.03, 0.0, 5.0),
            Line(2, 3, 0.01, 0.03, 0.0, 5.0),
            Line(3, 4, 0.01, 0.03, 0.0, 5.0),
        ),
        loads=tuple(Load(b, 1.2 * scale, 0.4 * scale) for b in (2, 3, 4)),
        sgens=sgens,
    )


def mesh5() -> GridModel:
    """Five buses with a loop and a shunt-charged line."""
    return GridModel(
        base_mva=10.0,
        buses=(Bus(1, "slack", 1.02), Bus(2), Bus(3), Bus(4), Bus(5)),
        lines=(
            Line(1, 2, 0.02, 0.06, 0.02, 8.0),
            Line(1, 3, 0.08, 0.24, 0.02, 6.0),
            Line(2, 3, 0.06, 0.18, 0.01, 6.0),
            Line(2, 4, 0.06, 0.18, 0.01, 6.0),
            Line(2, 5, 0.04, 0.12, 0.01, 6.0),
            Line(3, 4, 0.01, 0.03, 0.0, 6.0),
            Line(4, 5, 0.08, 0.24, 0.02, 6.0),
        ),
        loads=(Load(2, 2.0, 1.0), Load(3, 4.5, 1.5), Load(4, 4.0, 0.5), Load(5, 6.0, 1.0)),
        sgens=(Sgen(3, 2.0, 0.0, -2.0, 2.0),),
    )


def chain6(scale: float = 1.0) -> GridModel:
    """Six-bus radial chain with mixed impedances and a mid-feeder generator."""
    return GridModel(
        base_mva=10.0,
        buses=(Bus(1, "slack", 1.0), Bus(2), Bus(3), Bus(4), Bus(5), Bus(6)),
        lines=(
            Line(1, 2, 0.01, 0.03, 0.0, 6.0),
            Line(2, 3, 0.02, 0.05, 0.01, 6.0),
            Line(3, 4, 0.01, 0.04, 0.0, 6.0),
            Line(4, 5, 0.03, 0.06, 0.01, 6.0),
            Line(5, 6, 0.01, 0.02, 0.0, 6.0),
        ),
        loads=tuple(Load(b, 0.9 * scale, 0.3 * scale) for b in (2, 3, 4, 5, 6)),
        sgens=(Sgen(4, 1.0, 0.2, -1.0, 1.0),),
    )


ALL_BUNDLED = {
    "two_bus": two_bus,
    "feeder4": feeder4,
    "mesh5": mesh5,
    "chain6": chain6,
}
