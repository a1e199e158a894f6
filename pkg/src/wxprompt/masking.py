"""Block-wise target masking.

Only target-role frames (prompt target, query target) ever receive mask
entries; input frames are retained entirely. Coverage unions random
axis-aligned rectangles until it reaches the configured ratio, so the
achieved ratio lands in [ratio, ratio + one block's area).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .prompts import ROLE_PROMPT_TARGET, ROLE_QUERY_TARGET, Canvas


def sample_block_mask(grid_h: int, grid_w: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Masked patch indices for one frame's (grid_h x grid_w) patch grid."""
    if grid_h < 1 or grid_w < 1:
        raise ConfigError(f"patch grid must be >= 1x1, got {grid_h}x{grid_w}")
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"mask ratio must be in (0, 1), got {ratio}")
    total = grid_h * grid_w
    needed = int(np.ceil(ratio * total))
    masked = np.zeros((grid_h, grid_w), dtype=bool)
    max_bh = max(grid_h // 2, 1)
    max_bw = max(grid_w // 2, 1)
    count = 0
    while count < needed:
        bh = int(rng.integers(1, max_bh + 1))
        bw = int(rng.integers(1, max_bw + 1))
        top = int(rng.integers(0, grid_h - bh + 1))
        left = int(rng.integers(0, grid_w - bw + 1))
        masked[top : top + bh, left : left + bw] = True
        count = int(masked.sum())
    return np.nonzero(masked.ravel())[0]


@dataclass
class MaskPlan:
    """Masked patch indices per target frame of one canvas."""

    frame_patches: dict[int, np.ndarray]  # canvas frame index -> patch indices
    configured_ratio: float
    achieved_ratio: float
    seed: int | None = None

    def token_mask(self, frame_count: int, tokens_per_frame: int) -> np.ndarray:
        """Flatten to a (frame_count * tokens_per_frame,) boolean token mask."""
        mask = np.zeros(frame_count * tokens_per_frame, dtype=bool)
        for frame_idx, patches in self.frame_patches.items():
            mask[frame_idx * tokens_per_frame + patches] = True
        return mask


def plan_for_canvas(
    canvas: Canvas,
    grid_side: int,
    ratio: float,
    rng: np.random.Generator | None,
    mask_prompt_target: bool = True,
    full_mask_query_target: bool = False,
    seed: int | None = None,
) -> MaskPlan:
    """Build one canvas's mask plan.

    Placeholder frames (inference query targets) are always fully masked.
    ``full_mask_query_target`` forces full masking of real query-target
    frames too (the inference contract); prompt targets can be exempted to
    mimic the inference-time fully-visible prompt.
    """
    frame_patches: dict[int, np.ndarray] = {}
    per_frame = grid_side * grid_side
    maskable = 0
    masked_total = 0
    for idx in range(canvas.frame_count):
        role = int(canvas.roles[idx])
        if role not in (ROLE_PROMPT_TARGET, ROLE_QUERY_TARGET):
            continue
        maskable += per_frame
        if canvas.placeholder[idx] or (role == ROLE_QUERY_TARGET and full_mask_query_target):
            patches = np.arange(per_frame)
        elif role == ROLE_PROMPT_TARGET and not mask_prompt_target:
            continue
        else:
            if rng is None:
                raise ConfigError("an rng is required to sample partial block masks")
            patches = sample_block_mask(grid_side, grid_side, ratio, rng)
        frame_patches[idx] = patches
        masked_total += len(patches)
    achieved = masked_total / maskable if maskable else 0.0
    return MaskPlan(
        frame_patches=frame_patches,
        configured_ratio=ratio,
        achieved_ratio=achieved,
        seed=seed,
    )


def inference_plan(canvas: Canvas, grid_side: int) -> MaskPlan:
    """Full mask on query targets, prompt side fully visible."""
    return plan_for_canvas(
        canvas,
        grid_side,
        ratio=0.5,  # unused: no partial masks are drawn
        rng=None,
        mask_prompt_target=False,
        full_mask_query_target=True,
    )
