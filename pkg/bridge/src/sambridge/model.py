"""Adapter around a real segment-anything checkpoint.

Imported lazily: the stub path must work on machines without torch or
model weights. The adapter exposes the same embed/decode surface as the
stub, with the checkpoint's native feature geometry advertised through
the stride attribute.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .oracle import NoObjectMatch, Proposal


class CheckpointModel:
    """embed/decode backed by segment_anything's predictor."""

    def __init__(self, weights: str, device: str = "cpu", model_type: str = ""):
        try:
            from segment_anything import SamPredictor, sam_model_registry
        except ImportError as exc:  # pragma: no cover - needs the model extra
            raise RuntimeError(
                "segment-anything is not installed; run the stub with --stub "
                "or install the 'model' extra"
            ) from exc
        if not model_type:
            model_type = self._guess_model_type(weights)
        sam = sam_model_registry[model_type](checkpoint=weights)
        sam.to(device)
        self._predictor = SamPredictor(sam)
        self.stride = 1.0  # recomputed per image in embed()

    @staticmethod
    def _guess_model_type(weights: str) -> str:
        for key in ("vit_h", "vit_l", "vit_b"):
            if key in weights:
                return key
        return "vit_h"

    def embed(self, image: np.ndarray) -> np.ndarray:  # pragma: no cover
        self._predictor.set_image(image)
        embedding = self._predictor.get_image_embedding()[0]  # (C, Hf, Wf)
        features = embedding.permute(1, 2, 0).cpu().numpy().astype(np.float32)
        self.stride = image.shape[0] / features.shape[0]
        return features

    def decode(  # pragma: no cover
        self,
        features: np.ndarray,
        points: Sequence[tuple[int, int, bool]],
        box: Optional[tuple[int, int, int, int]],
        mask_prompt: Optional[np.ndarray],
        proposals_requested: int,
    ) -> list[Proposal]:
        import torch

        coords = np.array([[x, y] for x, y, _ in points], dtype=np.float32)
        labels = np.array([1 if pos else 0 for _, _, pos in points], dtype=np.int64)
        box_arr = np.array(box, dtype=np.float32) if box is not None else None
        mask_input = None
        if mask_prompt is not None:
            # The decoder wants a 256x256 low-res logit map.
            low = torch.from_numpy(mask_prompt.astype(np.float32))[None, None]
            low = torch.nn.functional.interpolate(low, size=(256, 256), mode="nearest")
            mask_input = (low[0].numpy() * 20.0) - 10.0
        masks, scores, _ = self._predictor.predict(
            point_coords=coords if coords.size else None,
            point_labels=labels if labels.size else None,
            box=box_arr,
            mask_input=mask_input,
            multimask_output=proposals_requested > 1,
        )
        order = np.argsort(-scores)
        proposals = [
            Proposal(masks[i].astype(bool), float(np.clip(scores[i], 0.0, 1.0)))
            for i in order[:proposals_requested]
        ]
        if not proposals:
            raise NoObjectMatch("decoder returned no masks")
        while len(proposals) < proposals_requested:
            proposals.append(proposals[-1])
        return proposals
