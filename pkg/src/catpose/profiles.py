"""Named size profiles.

``paper`` carries the published architecture constants (256x256 images,
1024-point clouds and priors). ``desk`` keeps every structural rule but
shrinks widths and counts so the full train/test loop runs on a laptop
CPU in minutes; observed-point counts are below the model-point count
because only z-buffer winners are observable (see the renderer).
"""

from __future__ import annotations

from dataclasses import dataclass

from .msa import MsaConfig
from .pixelformer import PixelformerConfig
from .pointformer import PointformerConfig
from .tensor import ConfigError


@dataclass(frozen=True)
class Profile:
    name: str
    image_size: int
    n_observed: int
    n_model: int
    pixel: PixelformerConfig
    point: PointformerConfig
    msa: MsaConfig


def paper_profile() -> Profile:
    return Profile(
        name="paper",
        image_size=256,
        n_observed=640,
        n_model=1024,
        pixel=PixelformerConfig(),
        point=PointformerConfig(),
        msa=MsaConfig(n_model=1024),
    )


def desk_profile() -> Profile:
    return Profile(
        name="desk",
        image_size=64,
        n_observed=160,
        n_model=256,
        pixel=PixelformerConfig(
            channels=(8, 16, 24, 32),
            heads=(1, 2, 3, 4),
            expansion=(8, 8, 4, 4),
            reduction=(8, 4, 2, 1),
        ),
        point=PointformerConfig(
            channels=(8, 16, 24, 32),
            heads=(1, 2, 3, 4),
            expansion=(8, 8, 4, 4),
            lift_dim=16,
        ),
        msa=MsaConfig(
            global_dim=128,
            inst_funnel=(128,),
            cat_funnel=(96,),
            deform_hidden=(256, 128),
            corr_hidden=(256, 128),
            n_model=256,
        ),
    )


def get_profile(name: str) -> Profile:
    if name == "paper":
        return paper_profile()
    if name == "desk":
        return desk_profile()
    raise ConfigError(f"unknown profile {name!r}; expected 'paper' or 'desk'")
