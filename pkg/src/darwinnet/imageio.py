"""Netpbm readers and writers.

Grayscale scenes and masks travel as binary PGM (P5), color overlays as
binary PPM (P6). Instance maps use 16-bit PGM so more than 255 labels fit.
Round trips are bit exact: multi-byte samples are big endian as the format
prescribes, and writers emit a single canonical header.
"""

import numpy as np


class ImageFormatError(ValueError):
    pass


def _read_token(buf, pos):
    # whitespace-separated token, '#' starts a comment running to end of line
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ImageFormatError("unexpected end of header")
    return buf[start:pos], pos


def _read_header(buf, magic):
    tok, pos = _read_token(buf, 0)
    if tok != magic:
        raise ImageFormatError(f"expected {magic.decode()} file, got {tok!r}")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        fields.append(int(tok))
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"bad dimensions {width}x{height}")
    if maxval not in (255, 65535):
        raise ImageFormatError(f"unsupported maxval {maxval}")
    return width, height, maxval, pos + 1   # one whitespace byte after maxval


def write_pgm(path, image):
    """Write a 2D uint8 or uint16 array as binary PGM."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"expected 2D image, got shape {img.shape}")
    if img.dtype == np.uint8:
        maxval, payload = 255, img.tobytes()
    elif img.dtype == np.uint16:
        maxval, payload = 65535, img.astype(">u2").tobytes()
    else:
        raise ValueError(f"expected uint8 or uint16, got {img.dtype}")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header + payload)


def read_pgm(path):
    """Read a binary PGM; returns uint8 for maxval 255, uint16 for 65535."""
    buf = open(path, "rb").read()
    width, height, maxval, pos = _read_header(buf, b"P5")
    if maxval == 255:
        need, dtype = width * height, np.uint8
    else:
        need, dtype = width * height * 2, ">u2"
    data = buf[pos:pos + need]
    if len(data) != need:
        raise ImageFormatError(
            f"expected {need} pixel bytes, found {len(data)}")
    img = np.frombuffer(data, dtype=dtype).reshape(height, width)
    return img.astype(np.uint16) if maxval == 65535 else img.copy()


def write_ppm(path, image):
    """Write an (H, W, 3) uint8 array as binary PPM."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8, got {img.dtype}")
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    with open(path, "wb") as fh:
        fh.write(header + img.tobytes())


def read_ppm(path):
    buf = open(path, "rb").read()
    width, height, maxval, pos = _read_header(buf, b"P6")
    if maxval != 255:
        raise ImageFormatError("only 8-bit PPM is supported")
    need = width * height * 3
    data = buf[pos:pos + need]
    if len(data) != need:
        raise ImageFormatError(
            f"expected {need} pixel bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3).copy()
