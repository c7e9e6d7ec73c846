"""
Weak and strong augmentation operators on single [C, H, W] images in [0, 1].

Every random draw comes from the torch.Generator passed in, so a fixed
generator state reproduces the output exactly.
"""

import math
from typing import Callable, Dict, Tuple

import torch
from torchvision.transforms import InterpolationMode
from torchvision.transforms import functional as TF

from requests_models.train_config import AugmentParams


def _uniform(generator: torch.Generator, low: float, high: float) -> float:
    return low + (high - low) * torch.rand(1, generator=generator).item()


def _randint(generator: torch.Generator, low: int, high: int) -> int:
    """Integer in [low, high)."""
    return int(torch.randint(low, high, (1,), generator=generator).item())


def _signed(generator: torch.Generator, value: float) -> float:
    return value if _uniform(generator, 0.0, 1.0) < 0.5 else -value


def random_box(height: int, width: int, scale: Tuple[float, float], ratio: Tuple[float, float],
               generator: torch.Generator, strictly_inside: bool = False) -> Tuple[int, int, int, int]:
    """(top, left, h, w) of a random area/aspect box; falls back to the whole image."""
    area = height * width
    log_ratio = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(10):
        target_area = area * _uniform(generator, *scale)
        aspect = math.exp(_uniform(generator, *log_ratio))
        box_w = int(round(math.sqrt(target_area * aspect)))
        box_h = int(round(math.sqrt(target_area / aspect)))
        fits = (box_h < height and box_w < width) if strictly_inside else (box_h <= height and box_w <= width)
        if box_h > 0 and box_w > 0 and fits:
            top = _randint(generator, 0, height - box_h + 1)
            left = _randint(generator, 0, width - box_w + 1)
            return top, left, box_h, box_w
    return 0, 0, height, width


def weak_augment(image: torch.Tensor, generator: torch.Generator, params: AugmentParams) -> torch.Tensor:
    """Random horizontal flip then random resized crop back to the input size."""
    out = image
    if _uniform(generator, 0.0, 1.0) < params.weak_flip_prob:
        out = TF.hflip(out)
    height, width = out.shape[-2:]
    top, left, box_h, box_w = random_box(height, width, params.weak_crop_scale, params.weak_crop_ratio, generator)
    if (top, left, box_h, box_w) != (0, 0, height, width):
        out = TF.resized_crop(out, top, left, box_h, box_w, [height, width],
                              interpolation=InterpolationMode.BILINEAR, antialias=True)
    return out.clamp(0.0, 1.0)


def _as_uint8(image: torch.Tensor) -> torch.Tensor:
    return (image * 255.0).round().clamp(0, 255).to(torch.uint8)


def _from_uint8(image: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return image.to(like.dtype) / 255.0


def _fill(image: torch.Tensor) -> list:
    return [0.5] * image.shape[0]


def _affine(image: torch.Tensor, translate=(0, 0), shear=(0.0, 0.0), angle: float = 0.0) -> torch.Tensor:
    return TF.affine(image, angle=angle, translate=list(translate), scale=1.0, shear=list(shear),
                     interpolation=InterpolationMode.BILINEAR, fill=_fill(image))


def _color(image: torch.Tensor, factor: float) -> torch.Tensor:
    # saturation needs RGB
    return TF.adjust_saturation(image, factor) if image.shape[0] == 3 else image


# op(image, magnitude in [0, 1], generator) -> image
StrongOp = Callable[[torch.Tensor, float, torch.Generator], torch.Tensor]

STRONG_OP_TABLE: Dict[str, StrongOp] = {
    "autocontrast": lambda img, m, g: TF.autocontrast(img),
    "equalize": lambda img, m, g: _from_uint8(TF.equalize(_as_uint8(img)), img),
    "rotate": lambda img, m, g: TF.rotate(img, _signed(g, 30.0 * m),
                                          interpolation=InterpolationMode.BILINEAR, fill=_fill(img)),
    "solarize": lambda img, m, g: TF.solarize(img, 1.0 - m),
    "color": lambda img, m, g: _color(img, 1.0 + _signed(g, 0.9 * m)),
    "posterize": lambda img, m, g: _from_uint8(TF.posterize(_as_uint8(img), 8 - int(round(4 * m))), img),
    "contrast": lambda img, m, g: TF.adjust_contrast(img, 1.0 + _signed(g, 0.9 * m)),
    "brightness": lambda img, m, g: TF.adjust_brightness(img, 1.0 + _signed(g, 0.9 * m)),
    "sharpness": lambda img, m, g: TF.adjust_sharpness(img, 1.0 + _signed(g, 0.9 * m)),
    "shear_x": lambda img, m, g: _affine(img, shear=(math.degrees(math.atan(_signed(g, 0.3 * m))), 0.0)),
    "shear_y": lambda img, m, g: _affine(img, shear=(0.0, math.degrees(math.atan(_signed(g, 0.3 * m))))),
    "translate_x": lambda img, m, g: _affine(img, translate=(int(round(_signed(g, 0.3 * m) * img.shape[-1])), 0)),
    "translate_y": lambda img, m, g: _affine(img, translate=(0, int(round(_signed(g, 0.3 * m) * img.shape[-2])))),
}


def random_erase(image: torch.Tensor, generator: torch.Generator, params: AugmentParams) -> torch.Tensor:
    height, width = image.shape[-2:]
    top, left, box_h, box_w = random_box(height, width, params.erase_scale, params.erase_ratio,
                                         generator, strictly_inside=True)
    if (box_h, box_w) == (height, width):
        return image
    value = torch.tensor(params.erase_value, dtype=image.dtype)
    return TF.erase(image, top, left, box_h, box_w, value)


def strong_augment(image: torch.Tensor, generator: torch.Generator, params: AugmentParams) -> torch.Tensor:
    """k ops drawn uniformly with random magnitudes, then random erasing."""
    out = image
    ops = params.strong_ops
    for _ in range(params.strong_num_ops if ops else 0):
        name = ops[_randint(generator, 0, len(ops))]
        magnitude = _uniform(generator, 0.0, params.strong_max_magnitude)
        out = STRONG_OP_TABLE[name](out, magnitude, generator).clamp(0.0, 1.0)
    if params.erase_prob > 0.0 and _uniform(generator, 0.0, 1.0) < params.erase_prob:
        out = random_erase(out, generator, params)
    return out.clamp(0.0, 1.0)


def augment_batch(images: torch.Tensor, op: Callable[[torch.Tensor, torch.Generator, AugmentParams], torch.Tensor],
                  generator: torch.Generator, params: AugmentParams) -> torch.Tensor:
    return torch.stack([op(image, generator, params) for image in images])
