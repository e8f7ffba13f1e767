"""Image plumbing: tensor to 8-bit RGB conversion and back, PNG bytes,
and sample-grid sheets (one row per input, columns for the input plus a
translation into every expression domain).

The grid's header band is drawn with a bundled 5 by 7 bitmap font so no
font files or text libraries are needed; covered characters are the
column header strings plus digits.
"""

import io

import numpy as np
from PIL import Image

from . import autodiff as ad
from . import dataset as ds

GUTTER = 2
HEADER_HEIGHT = 11  # 7 px glyphs with 2 px padding above and below
GRID_HEADERS = ("Input", "Angry", "Disgust", "Fear", "Happy", "Neutral", "Sad", "Surprised")

# each glyph is 7 rows of 5-bit masks, most significant bit leftmost
_GLYPHS = {
    " ": (0, 0, 0, 0, 0, 0, 0),
    "A": (0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001),
    "D": (0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110),
    "F": (0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000),
    "H": (0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001),
    "I": (0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110),
    "N": (0b10001, 0b11001, 0b11001, 0b10101, 0b10011, 0b10011, 0b10001),
    "S": (0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110),
    "a": (0, 0, 0b01110, 0b00001, 0b01111, 0b10001, 0b01111),
    "d": (0b00001, 0b00001, 0b01111, 0b10001, 0b10001, 0b10001, 0b01111),
    "e": (0, 0, 0b01110, 0b10001, 0b11111, 0b10000, 0b01110),
    "g": (0, 0b01111, 0b10001, 0b10001, 0b01111, 0b00001, 0b01110),
    "i": (0b00100, 0, 0b01100, 0b00100, 0b00100, 0b00100, 0b01110),
    "l": (0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110),
    "n": (0, 0, 0b10110, 0b11001, 0b10001, 0b10001, 0b10001),
    "p": (0, 0, 0b11110, 0b10001, 0b11110, 0b10000, 0b10000),
    "r": (0, 0, 0b10110, 0b11001, 0b10000, 0b10000, 0b10000),
    "s": (0, 0, 0b01111, 0b10000, 0b01110, 0b00001, 0b11110),
    "t": (0b01000, 0b01000, 0b11110, 0b01000, 0b01000, 0b01001, 0b00110),
    "u": (0, 0, 0b10001, 0b10001, 0b10001, 0b10011, 0b01101),
    "y": (0, 0, 0b10001, 0b10001, 0b01111, 0b00001, 0b01110),
    "0": (0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110),
    "1": (0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110),
    "2": (0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111),
    "3": (0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110),
    "4": (0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010),
    "5": (0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110),
    "6": (0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110),
    "7": (0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000),
    "8": (0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110),
    "9": (0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100),
}
_FALLBACK_GLYPH = (0b11111, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11111)
GLYPH_WIDTH = 5
GLYPH_HEIGHT = 7
GLYPH_ADVANCE = 6  # 5 px glyph plus 1 px spacing


def text_width(text):
    return max(0, GLYPH_ADVANCE * len(text) - 1)


def draw_text(canvas, x, y, text, clip_x=None):
    """Stamp ``text`` onto an HxWx3 uint8 canvas at (x, y) in black.

    ``clip_x`` is an optional (x0, x1) horizontal window; pixels outside
    it (or outside the canvas) are dropped, so overlong column headers
    clip instead of bleeding into neighbours.
    """
    h, w = canvas.shape[:2]
    x0, x1 = clip_x if clip_x is not None else (0, w)
    for ch in text:
        rows = _GLYPHS.get(ch, _FALLBACK_GLYPH)
        for r, mask in enumerate(rows):
            py = y + r
            if not 0 <= py < h:
                continue
            for c in range(GLYPH_WIDTH):
                if mask & (1 << (GLYPH_WIDTH - 1 - c)):
                    px = x + c
                    if max(0, x0) <= px < min(w, x1):
                        canvas[py, px] = 0
        x += GLYPH_ADVANCE


def tensor_to_image(t):
    """Map a (3, S, S) tensor with values in [-1, 1] to an (S, S, 3)
    8-bit RGB array. Values are clamped, then scaled so -1 becomes 0 and
    +1 becomes 255, rounding halves away from zero (0 encodes as 128)."""
    arr = t.data if isinstance(t, ad.Tensor) else np.asarray(t, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ad.ShapeError(f"expected a (3, S, S) tensor, got shape {arr.shape}")
    scaled = (np.clip(arr, -1.0, 1.0) + 1.0) * 127.5
    return np.floor(scaled + 0.5).astype(np.uint8).transpose(1, 2, 0)


def image_to_tensor(img):
    """Inverse of tensor_to_image: (S, S, 3) uint8 to a (3, S, S) tensor
    in [-1, 1]. Round trip error is bounded by the quantization step."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ad.ShapeError(f"expected an (S, S, 3) image, got shape {arr.shape}")
    return ad.Tensor(arr.astype(np.float64).transpose(2, 0, 1) / 127.5 - 1.0)


def encode_png(array):
    """Deterministic PNG bytes for an (H, W, 3) uint8 array."""
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(array), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data):
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"))


def _column_headers(domain_count):
    if domain_count == len(ds.EXPRESSION_NAMES):
        return ("Input",) + tuple(n.capitalize() for n in ds.EXPRESSION_NAMES)
    return ("Input",) + tuple(f"D{i}" for i in range(domain_count))


def grid_dimensions(tile_size, rows, domain_count=7):
    """Pixel (width, height) of a composed grid: one column per header,
    2 px gutters on every side of every tile, and a header band."""
    cols = 1 + domain_count
    width = GUTTER + cols * (tile_size + GUTTER)
    height = 2 * GUTTER + HEADER_HEIGHT + rows * (tile_size + GUTTER)
    return width, height


def compose_grid(inputs, generator, domain_count=7):
    """Render a sample sheet as PNG bytes.

    Row r holds the r-th input image followed by its translation into
    each expression domain in domain-index order. ``generator`` is any
    object with ``forward(images, labels)``; inputs are (3, S, S)
    tensors in [-1, 1] and are not mutated.
    """
    if not inputs:
        raise ValueError("compose_grid needs at least one input tensor")
    arrays = [t.data if isinstance(t, ad.Tensor) else np.asarray(t, dtype=np.float64) for t in inputs]
    size = arrays[0].shape[-1]
    for a in arrays:
        if a.shape != (3, size, size):
            raise ad.ShapeError(f"expected matching (3, {size}, {size}) inputs, got {a.shape}")

    width, height = grid_dimensions(size, len(arrays), domain_count)
    canvas = np.full((height, width, 3), 255, dtype=np.uint8)

    headers = _column_headers(domain_count)
    col_x = [GUTTER + c * (size + GUTTER) for c in range(1 + domain_count)]
    for c, name in enumerate(headers):
        tx = col_x[c] + (size - text_width(name)) // 2
        draw_text(canvas, tx, 2 * GUTTER, name, clip_x=(col_x[c], col_x[c] + size))

    y0 = 2 * GUTTER + HEADER_HEIGHT
    with ad.no_grad():
        for r, arr in enumerate(arrays):
            y = y0 + r * (size + GUTTER)
            canvas[y : y + size, col_x[0] : col_x[0] + size] = tensor_to_image(arr)
            batch = ad.Tensor(arr[None].copy())
            for c in range(domain_count):
                labels = np.zeros((1, domain_count))
                labels[0, c] = 1.0
                out = generator.forward(batch, ad.Tensor(labels))
                tile = tensor_to_image(out.data[0])
                x = col_x[1 + c]
                canvas[y : y + size, x : x + size] = tile
    return encode_png(canvas)
