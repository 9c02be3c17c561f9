"""Random patch extraction from a directory of grayscale PGM images."""
from dataclasses import dataclass
import logging
import os

import numpy as np

from .io import FormatError, read_pgm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PatchRecipe:
    name: str
    per_image: int
    size: int


# 448 patches of 99x99 for models with deblocking, 977 of 33x33 without
RECIPES = {
    "set1": PatchRecipe("set1", 448, 99),
    "set2": PatchRecipe("set2", 977, 33),
}


def list_images(directory):
    return sorted(
        os.path.join(directory, f)
        for f in os.listdir(directory)
        if f.lower().endswith(".pgm")
    )


def extract_patches(dataset_dir, recipe, rng):
    """Uniformly placed random patches from every readable image.

    Returns ``(patches, manifest)``; the manifest lists each file with the
    number of patches taken or the reason it was skipped.
    """
    if isinstance(recipe, str):
        try:
            recipe = RECIPES[recipe]
        except KeyError:
            raise ValueError(f"unknown patch recipe {recipe!r}; choose from {sorted(RECIPES)}") from None
    patches, manifest = [], []
    for path in list_images(dataset_dir):
        name = os.path.basename(path)
        try:
            image = read_pgm(path)
        except (OSError, FormatError) as exc:
            log.warning("skipping %s: %s", name, exc)
            manifest.append({"file": name, "patches": 0, "skipped": str(exc)})
            continue
        h, w = image.shape
        s = recipe.size
        if h < s or w < s:
            reason = f"{h}x{w} is smaller than the {s}x{s} patch size"
            log.warning("skipping %s: %s", name, reason)
            manifest.append({"file": name, "patches": 0, "skipped": reason})
            continue
        rows = rng.integers(0, h - s + 1, size=recipe.per_image)
        cols = rng.integers(0, w - s + 1, size=recipe.per_image)
        patches.extend(image[r:r + s, c:c + s] for r, c in zip(rows, cols))
        manifest.append({"file": name, "patches": recipe.per_image})
    if not patches:
        return np.zeros((0, recipe.size, recipe.size)), manifest
    return np.stack(patches), manifest
