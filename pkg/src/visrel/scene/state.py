"""Ground-truth world state: blocks, gripper, table regions, cameras.

All length units are meters. The table surface is the z = 0 plane. Every
float that enters a :class:`SceneState` is quantized to 9 significant
digits (:func:`q9`) so that the decimal dataset serialization round-trips
to exactly the in-memory values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace


def q9(x: float) -> float:
    """Quantize to 9 significant digits (the serialization precision)."""
    return float(f"{float(x):.9g}")


@dataclass
class GeometryParams:
    """Thresholds for geometric predicate labeling.

    ``align_gap_max`` must stay below the smallest block edge plus the
    alignment hover gap, otherwise hovering over a tower would count as
    aligned with every block in it.
    """

    contact_tol: float = 0.005
    approach_radius_factor: float = 1.5
    approach_height: float = 0.15
    align_gap_max: float = 0.06


@dataclass
class TableRegions:
    """Axis-aligned partition of the table plane into 4 regions.

    left: x < -half_center; right: x > half_center; the middle column is
    split at y = center_depth into center (near side) and far. The three
    boundaries are half-open so the partition is exact.
    """

    x_min: float = -0.4
    x_max: float = 0.4
    y_min: float = -0.4
    y_max: float = 0.4
    half_center: float = 0.15
    center_depth: float = 0.15

    names: tuple[str, ...] = ("left", "right", "far", "center")

    def region_of(self, x: float, y: float) -> str:
        if x < -self.half_center:
            return "left"
        if x > self.half_center:
            return "right"
        return "far" if y > self.center_depth else "center"


@dataclass
class Block:
    color_name: str
    rgb: tuple[float, float, float]  # in [0, 1]
    size: float  # cube edge length
    x: float
    y: float
    z: float  # center height
    yaw: float

    @property
    def top(self) -> float:
        return self.z + self.size / 2.0

    @property
    def bottom(self) -> float:
        return self.z - self.size / 2.0

    def quantized(self) -> "Block":
        return replace(
            self,
            rgb=tuple(q9(c) for c in self.rgb),
            size=q9(self.size),
            x=q9(self.x), y=q9(self.y), z=q9(self.z), yaw=q9(self.yaw),
        )


@dataclass
class Gripper:
    x: float
    y: float
    z: float
    opening: float  # fraction in [0, 1]
    held: int | None = None  # block index

    def quantized(self) -> "Gripper":
        return replace(self, x=q9(self.x), y=q9(self.y), z=q9(self.z), opening=q9(self.opening))


# Outside every possible approach cylinder: blocks live in y >= -0.28 and
# cylinders reach 1.5 * 0.06 = 0.09 horizontally, so y = -0.38 clears any
# tower regardless of height.
HOME_POSE = (0.0, -0.38, 0.45)


@dataclass
class Camera:
    """Pinhole camera looking from ``position`` toward ``look_at``."""

    position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    width: int = 128
    height: int = 128
    fov_deg: float = 50.0

    def basis(self) -> tuple[list[float], list[float], list[float]]:
        """Rows (right, down, forward) of the world->camera rotation."""
        fx = [self.look_at[i] - self.position[i] for i in range(3)]
        n = math.sqrt(sum(v * v for v in fx))
        if n < 1e-9:
            raise ValueError("camera position coincides with look_at")
        fwd = [v / n for v in fx]
        up = (0.0, 0.0, 1.0)
        right = [
            fwd[1] * up[2] - fwd[2] * up[1],
            fwd[2] * up[0] - fwd[0] * up[2],
            fwd[0] * up[1] - fwd[1] * up[0],
        ]
        rn = math.sqrt(sum(v * v for v in right))
        if rn < 1e-9:
            raise ValueError("camera forward parallel to world up")
        right = [v / rn for v in right]
        down = [
            fwd[1] * right[2] - fwd[2] * right[1],
            fwd[2] * right[0] - fwd[0] * right[2],
            fwd[0] * right[1] - fwd[1] * right[0],
        ]
        return right, down, fwd

    @property
    def focal_px(self) -> float:
        return (self.width / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)


def default_camera_rig(width: int = 128, height: int = 128) -> tuple[Camera, ...]:
    """Three fixed viewpoints: front-high, left-high, right-high."""
    target = (0.0, 0.05, 0.0)
    return (
        Camera((0.0, -0.75, 0.55), target, width, height),
        Camera((-0.65, -0.45, 0.50), target, width, height),
        Camera((0.65, -0.45, 0.50), target, width, height),
    )


@dataclass
class SceneState:
    blocks: list[Block]
    gripper: Gripper
    table: TableRegions = field(default_factory=TableRegions)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def object_ids(self) -> list[str]:
        return [f"obj{i}" for i in range(len(self.blocks))]

    def copy(self) -> "SceneState":
        return SceneState([replace(b) for b in self.blocks], replace(self.gripper), self.table)

    def validate(self, geom: GeometryParams | None = None) -> None:
        """Assert the physical invariants of a well-formed state."""
        geom = geom or GeometryParams()
        held = self.gripper.held
        for i, b in enumerate(self.blocks):
            if i != held and b.bottom < -geom.contact_tol:
                raise ValueError(f"block {i} penetrates the table (bottom={b.bottom:.4f})")
        if held is not None:
            hb = self.blocks[held]
            if abs(hb.x - self.gripper.x) > 1e-9 or abs(hb.y - self.gripper.y) > 1e-9 \
                    or abs(hb.top - self.gripper.z) > 1e-6:
                raise ValueError("held block does not track the gripper")
        for i in range(len(self.blocks)):
            for j in range(i + 1, len(self.blocks)):
                if i == held or j == held:
                    continue
                a, b = self.blocks[i], self.blocks[j]
                min_gap = (a.size + b.size) / 2.0
                overlap_xy = abs(a.x - b.x) < min_gap - 1e-9 and abs(a.y - b.y) < min_gap - 1e-9
                overlap_z = abs(a.z - b.z) < min_gap - 1e-9
                if overlap_xy and overlap_z:
                    raise ValueError(f"blocks {i} and {j} interpenetrate")
