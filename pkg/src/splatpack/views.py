"""Ground-truth view sets on disk: a directory of PNGs plus a camera file.

cameras.json holds {"views": [{"image": name, ...Camera fields}]}; images
are 8-bit RGB PNGs converted to float in [0, 1] by dividing by 255.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .render import Camera

CAMERA_FILE = "cameras.json"


def save_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.rint(arr * 255.0).astype(np.uint8)
    PILImage.fromarray(data, mode="RGB").save(str(path), format="PNG")


def load_image(path) -> np.ndarray:
    with PILImage.open(str(path)) as img:
        data = np.asarray(img.convert("RGB"), dtype=np.float64)
    return data / 255.0


def save_views(directory, views) -> None:
    """Write views as numbered PNGs plus cameras.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    for i, (camera, image) in enumerate(views):
        name = f"view_{i:03d}.png"
        save_image(directory / name, image)
        record = camera.to_dict()
        record["image"] = name
        records.append(record)
    (directory / CAMERA_FILE).write_text(json.dumps({"views": records}, indent=2))


def load_views(directory):
    """Read a view directory back into [(Camera, image)] pairs."""
    directory = Path(directory)
    camera_path = directory / CAMERA_FILE
    if not camera_path.is_file():
        raise FileNotFoundError(f"camera file not found: {camera_path}")
    spec = json.loads(camera_path.read_text())
    views = []
    for record in spec["views"]:
        camera = Camera.from_dict(record)
        image = load_image(directory / record["image"])
        if image.shape != (camera.height, camera.width, 3):
            raise ValueError(
                f"{record['image']}: image shape {image.shape} does not match camera"
            )
        views.append((camera, image))
    return views


def load_camera(path, view_index: int = 0) -> Camera:
    """Read a camera from a single-camera JSON file or a cameras.json."""
    spec = json.loads(Path(path).read_text())
    if "views" in spec:
        return Camera.from_dict(spec["views"][view_index])
    return Camera.from_dict(spec)
