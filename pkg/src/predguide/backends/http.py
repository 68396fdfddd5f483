"""HTTP clients for generator, editor and perception services.

The wire format is JSON; images travel as base64 strings and masks as
row-major RLE strings.

    POST /generate      {prompt, seed}              -> {image, width, height}
    POST /edit          {image, instruction, seed}  -> {image, width, height}
    POST /detect        {image, query}              -> {detections: [{score, box, mask}]}
    POST /region_score  {image, mask|null, text}    -> {score}
    POST /depth         {image}                     -> {width, height, values}
"""

from __future__ import annotations

import base64
from dataclasses import dataclass
from typing import Any

import httpx
import numpy as np

from ..errors import BackendFailure
from ..evidence import Detection, Region, mask_from_rle, mask_to_rle
from . import BackendSuite, UsageMeter


@dataclass(frozen=True)
class ImageRef:
    data: bytes
    width: int
    height: int


class ImageService:
    def __init__(self, base_url: str, timeout: float = 120.0, client: httpx.Client | None = None,
                 confidence: float = 0.30):
        self.base_url = base_url.rstrip("/")
        self.client = client or httpx.Client(timeout=timeout)
        self.confidence = confidence

    def _post(self, path: str, body: dict[str, Any]) -> dict[str, Any]:
        try:
            resp = self.client.post(self.base_url + path, json=body)
            resp.raise_for_status()
            return resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise BackendFailure(f"{path}: {exc}") from exc

    @staticmethod
    def _image(doc: dict[str, Any]) -> ImageRef:
        try:
            return ImageRef(base64.b64decode(doc["image"]), int(doc["width"]), int(doc["height"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise BackendFailure(f"bad image payload: {exc}") from exc

    @staticmethod
    def _b64(image: ImageRef) -> str:
        return base64.b64encode(image.data).decode("ascii")

    def generate(self, prompt: str, seed: int) -> ImageRef:
        return self._image(self._post("/generate", {"prompt": prompt, "seed": seed}))

    def edit(self, image: ImageRef, instruction: str, seed: int) -> ImageRef:
        return self._image(self._post("/edit", {"image": self._b64(image), "instruction": instruction, "seed": seed}))

    def detect(self, image: ImageRef, query: str) -> list[Detection]:
        doc = self._post("/detect", {"image": self._b64(image), "query": query})
        out = []
        for d in doc.get("detections", []):
            score = float(d["score"])
            if score < self.confidence:
                continue
            mask = mask_from_rle(d["mask"], image.width, image.height) if d.get("mask") else None
            out.append(Detection(query, score, tuple(float(v) for v in d["box"]), mask))
        return out

    def region_score(self, image: ImageRef, region: Region, text: str) -> float:
        mask = None if region.mask is None else mask_to_rle(region.mask)
        return float(self._post("/region_score", {"image": self._b64(image), "mask": mask, "text": text})["score"])

    def depth(self, image: ImageRef) -> np.ndarray:
        doc = self._post("/depth", {"image": self._b64(image)})
        return np.asarray(doc["values"], dtype=np.float64).reshape(int(doc["height"]), int(doc["width"]))


def http_suite(service: ImageService, mllm: Any, meter: UsageMeter) -> BackendSuite:
    """Live backends: image service plus an MLLM client for the judgment roles."""
    return BackendSuite(
        generator=service.generate,
        editor=service.edit,
        detector=service.detect,
        image_size=lambda im: (im.width, im.height),
        region_scorer=service.region_score,
        depth=service.depth,
        text_verifier=mllm.verify_text,
        crop_verifier=mllm.verify_crop,
        auditor=mllm.audit,
        parser=mllm.parse,
        rewriter=mllm.rewrite,
        reviewer=mllm.review,
        meter=meter,
    )
