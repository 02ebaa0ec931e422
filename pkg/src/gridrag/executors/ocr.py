"""Image transcription. The default provider echoes alt text."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from ..errors import ImageNotFound


@dataclass(frozen=True)
class Transcription:
    image_id: str
    text: str
    ocr: str = "stub"

    def to_dict(self) -> dict:
        return {"image_id": self.image_id, "text": self.text, "ocr": self.ocr}


class OcrProvider(Protocol):
    name: str

    def transcribe(self, payload: bytes, encoding: str, alt_text: str) -> str: ...


class AltTextOcr:
    """Placeholder provider: returns the alt text unchanged."""

    name = "stub"

    def transcribe(self, payload: bytes, encoding: str, alt_text: str) -> str:
        return alt_text


def transcribe_image(image_ref: str, images: dict, provider: OcrProvider | None = None) -> Transcription:
    """``images`` maps image_id to an EmbeddedImage."""
    provider = provider or AltTextOcr()
    img = images.get(image_ref)
    if img is None:
        raise ImageNotFound(f"no image with id {image_ref!r}")
    return Transcription(image_ref, provider.transcribe(img.payload, img.encoding, img.alt_text), provider.name)
