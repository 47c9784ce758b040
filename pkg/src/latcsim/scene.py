"""World model: room, optical anchors, RIS panels, AP, and codebooks."""

from __future__ import annotations

from dataclasses import dataclass, field

from .channel import OpticalAnchor
from .errors import InvalidVector
from .geometry import Room, Vec3
from .ris import Codebook, RisPanel


@dataclass(frozen=True)
class Scene:
    """Immutable environment every measurement and protocol run reads."""

    room: Room
    anchors: tuple[OpticalAnchor, ...]
    panels: tuple[RisPanel, ...]
    ap: Vec3
    codebooks: dict[int, Codebook] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "anchors", tuple(self.anchors))
        object.__setattr__(self, "panels", tuple(self.panels))
        ids = [a.id for a in self.anchors]
        if len(set(ids)) != len(ids):
            raise InvalidVector("anchor ids must be unique")
        if sorted(ids) != ids:
            raise InvalidVector("anchors must be listed in id order")
        panel_ids = [p.id for p in self.panels]
        if len(set(panel_ids)) != len(panel_ids):
            raise InvalidVector("panel ids must be unique")
        by_panel: dict[int, int] = {}
        panels = {p.id: p for p in self.panels}
        for a in self.anchors:
            if a.mount.startswith("leris:"):
                pid = int(a.mount.split(":", 1)[1])
                if pid not in panels:
                    raise InvalidVector(f"anchor {a.id} references unknown panel {pid}")
                panel = panels[pid]
                off = (a.position - panel.center).as_array()
                if abs(float(off @ panel.normal.as_array())) > 1e-9:
                    raise InvalidVector(f"LERIS anchor {a.id} is off its panel plane")
                by_panel[pid] = by_panel.get(pid, 0) + 1
        for pid, count in by_panel.items():
            if count != 4:
                raise InvalidVector(f"panel {pid} must carry exactly 4 LERIS LEDs, has {count}")

    def panel(self, panel_id: int) -> RisPanel:
        for p in self.panels:
            if p.id == panel_id:
                return p
        raise InvalidVector(f"no panel with id {panel_id}")

    def anchor(self, anchor_id: int) -> OpticalAnchor:
        for a in self.anchors:
            if a.id == anchor_id:
                return a
        raise InvalidVector(f"no anchor with id {anchor_id}")
