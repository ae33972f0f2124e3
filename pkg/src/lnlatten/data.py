"""Synthetic planted-glyph dataset, portable-raster image I/O, and the
on-disk dataset manifest.

Class identity lives in a small set of designated "crucial" patch cells
(shared across classes, each class drawing its own glyph there); every
other cell carries distractor blobs.  The generator exports the crucial
cell indices so attention tests have ground truth.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError

# glyph painters: square canvases, values in [0,1]
def _glyph_plus(size):
    g = np.zeros((size, size))
    t = max(size // 4, 2)
    mid = size // 2
    g[mid - t // 2:mid + (t + 1) // 2, :] = 1.0
    g[:, mid - t // 2:mid + (t + 1) // 2] = 1.0
    return g


def _glyph_ring(size):
    g = np.ones((size, size))
    b = max(size // 4, 2)
    g[b:size - b, b:size - b] = 0.0
    return g


def _glyph_cross(size):
    g = np.zeros((size, size))
    w = max(size // 6, 1)
    for i in range(size):
        g[i, max(0, i - w):i + w + 1] = 1.0
        j = size - 1 - i
        g[i, max(0, j - w):j + w + 1] = 1.0
    return g


def _glyph_hbars(size):
    g = np.zeros((size, size))
    g[::3, :] = 1.0
    return g


def _glyph_vbars(size):
    g = np.zeros((size, size))
    g[:, ::3] = 1.0
    return g


def _glyph_disc(size):
    yy, xx = np.mgrid[:size, :size]
    c = (size - 1) / 2
    return ((yy - c) ** 2 + (xx - c) ** 2 <= (size / 2.4) ** 2).astype(float)


def _glyph_checker(size):
    yy, xx = np.mgrid[:size, :size]
    b = max(size // 4, 1)
    return (((yy // b) + (xx // b)) % 2).astype(float)


def _glyph_tri(size):
    g = np.zeros((size, size))
    for i in range(size):
        g[i, :i + 1] = 1.0
    return g


_GLYPHS = (_glyph_plus, _glyph_ring, _glyph_cross, _glyph_hbars,
           _glyph_vbars, _glyph_disc, _glyph_checker, _glyph_tri)


@dataclass
class Dataset:
    images: np.ndarray          # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray          # (N,) int64
    crucial_cells: tuple        # row-major patch-grid indices carrying class identity
    class_names: tuple = ()

    def __len__(self):
        return len(self.labels)


def default_crucial_cells(n):
    """Middle column of the n x n grid (flip-symmetric under mirroring)."""
    mid = n // 2
    return tuple(r * n + mid for r in range(n))[:max(2, min(3, n))]


def synth_dataset(class_count, samples_per_class, seed, layout, channels=1,
                  crucial_cells=None, distractor_level=0.45, noise_sigma=0.04):
    """Planted-glyph images on the patch grid of `layout`.

    Each crucial cell gets the class glyph (high amplitude, jittered by up
    to 2px); every other cell gets a random low-amplitude distractor blob.
    """
    if class_count < 2:
        raise ConfigurationError(f"class_count must be >= 2, got {class_count}")
    if class_count > len(_GLYPHS):
        raise ConfigurationError(
            f"at most {len(_GLYPHS)} synthetic classes supported, got {class_count}")
    rng = np.random.default_rng(seed)
    n = layout.n
    extent = layout.image_extent
    p = layout.patch_size
    if crucial_cells is None:
        crucial_cells = default_crucial_cells(n)
    cells = layout.cells()
    gsize = max(p * 3 // 5, 4)          # glyph canvas inside the patch core
    glyphs = [fn(gsize) for fn in _GLYPHS[:class_count]]

    total = class_count * samples_per_class
    images = np.zeros((total, extent, extent, channels), dtype=np.float32)
    labels = np.repeat(np.arange(class_count), samples_per_class).astype(np.int64)

    for idx in range(total):
        img = np.full((extent, extent), 0.08)
        label = labels[idx]
        for ci, (r, c) in enumerate(cells):
            if ci in crucial_cells:
                amp = rng.uniform(0.75, 1.0)
                jr = rng.integers(-2, 3)
                jc = rng.integers(-2, 3)
                r0 = np.clip(r + (p - gsize) // 2 + jr, 0, extent - gsize)
                c0 = np.clip(c + (p - gsize) // 2 + jc, 0, extent - gsize)
                region = img[r0:r0 + gsize, c0:c0 + gsize]
                np.maximum(region, amp * glyphs[label], out=region)
            elif distractor_level > 0:
                # distractor blob: random small rectangle, class-independent
                bh = rng.integers(3, max(p // 2, 4))
                bw = rng.integers(3, max(p // 2, 4))
                r0 = r + rng.integers(0, p - bh)
                c0 = c + rng.integers(0, p - bw)
                amp = rng.uniform(min(0.2, distractor_level), distractor_level)
                region = img[r0:r0 + bh, c0:c0 + bw]
                np.maximum(region, amp, out=region)
        img = img + rng.normal(0.0, noise_sigma, size=img.shape)
        np.clip(img, 0.0, 1.0, out=img)
        images[idx] = img[:, :, None].repeat(channels, axis=2)

    perm = rng.permutation(total)
    return Dataset(images=images[perm], labels=labels[perm],
                   crucial_cells=tuple(crucial_cells),
                   class_names=tuple(f"class{i}" for i in range(class_count)))


def nearest_centroid_accuracy(train, test, cell_mask=None):
    """Oracle classifier: nearest class-mean in (optionally masked) pixel space."""
    xtr = train.images.reshape(len(train), -1)
    xte = test.images.reshape(len(test), -1)
    if cell_mask is not None:
        flat = cell_mask.reshape(-1)
        xtr = xtr[:, flat]
        xte = xte[:, flat]
    classes = np.unique(train.labels)
    cents = np.stack([xtr[train.labels == c].mean(axis=0) for c in classes])
    d = ((xte[:, None, :] - cents[None]) ** 2).sum(axis=2)
    pred = classes[d.argmin(axis=1)]
    return (pred == test.labels).mean()


def crucial_cell_mask(layout, crucial_cells, channels=1):
    """Boolean (H, W, C) mask covering the crucial patch cells."""
    extent = layout.image_extent
    mask = np.zeros((extent, extent, channels), dtype=bool)
    p = layout.patch_size
    for ci, (r, c) in enumerate(layout.cells()):
        if ci in crucial_cells:
            mask[r:r + p, c:c + p, :] = True
    return mask


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def augment_batch(images, rng, horizontal_flip=True, random_crop=True,
                  patch_blank_fraction=0.0, layout=None):
    """Flip half the batch; reflect-pad and re-crop for random shifts.

    The pad width scales with the image extent (8px at 144).

    With patch_blank_fraction > 0, that fraction of images additionally
    gets one random grid cell of `layout` overwritten — usually with
    zeros, sometimes with low random noise.  Cutout-style regularization:
    it exposes the gates to uninformative patches so they learn to close
    on missing content instead of treating occlusion as a free direction.
    """
    out = images
    if horizontal_flip:
        flip = rng.random(len(out)) < 0.5
        out = out.copy()
        out[flip] = out[flip, :, ::-1]
    if random_crop:
        extent = out.shape[1]
        pad = max(2, round(extent / 18))
        padded = np.pad(out, ((0, 0), (pad, pad), (pad, pad), (0, 0)), mode="reflect")
        shifted = np.empty_like(out)
        for i in range(len(out)):
            dr = rng.integers(0, 2 * pad + 1)
            dc = rng.integers(0, 2 * pad + 1)
            shifted[i] = padded[i, dr:dr + extent, dc:dc + extent]
        out = shifted
    if patch_blank_fraction > 0.0:
        if layout is None:
            raise DataError("patch_blank_fraction requires a patch layout")
        if out is images:
            out = out.copy()
        cells = layout.cells()
        p = layout.patch_size
        for i in range(len(out)):
            if rng.random() >= patch_blank_fraction:
                continue
            r, c = cells[int(rng.integers(len(cells)))]
            if rng.random() < 0.6:
                out[i, r:r + p, c:c + p] = 0.0
            else:
                amp = rng.uniform(0.0, 1.0)
                out[i, r:r + p, c:c + p] = (
                    amp * rng.random((p, p, out.shape[3]))).astype(out.dtype)
    return out


# ---------------------------------------------------------------------------
# portable raster I/O and the on-disk manifest
# ---------------------------------------------------------------------------

def write_raster(path, image):
    """8-bit binary PGM (1 channel) or PPM (3 channels) from floats in [0,1]."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    data = np.round(arr * 255).astype(np.uint8)
    if data.ndim != 3 or data.shape[2] not in (1, 3):
        raise DataError(f"raster image must be (H,W,1) or (H,W,3), got {data.shape}")
    magic = b"P5" if data.shape[2] == 1 else b"P6"
    h, w = data.shape[:2]
    payload = magic + f"\n{w} {h}\n255\n".encode() + data.tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def read_raster(path):
    """Read a binary PGM/PPM into float32 (H, W, C) in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        magic = blob[:2]
        if magic not in (b"P5", b"P6"):
            raise DataError(f"{path}: not a binary PGM/PPM file")
        # header: magic, width, height, maxval; '#' comments allowed
        tokens = []
        i = 2
        while len(tokens) < 3:
            while i < len(blob) and blob[i:i + 1].isspace():
                i += 1
            if blob[i:i + 1] == b"#":
                while i < len(blob) and blob[i] != 0x0A:
                    i += 1
                continue
            j = i
            while j < len(blob) and not blob[j:j + 1].isspace():
                j += 1
            tokens.append(int(blob[i:j]))
            i = j
        i += 1   # single whitespace after maxval
        w, h, maxval = tokens
        c = 1 if magic == b"P5" else 3
        raw = np.frombuffer(blob, dtype=np.uint8, count=h * w * c, offset=i)
        return (raw.reshape(h, w, c).astype(np.float32) / maxval)
    except (ValueError, IndexError) as e:
        raise DataError(f"{path}: malformed raster file ({e})") from e


@dataclass
class DatasetManifest:
    root: str
    class_dirs: list = field(default_factory=list)
    files: dict = field(default_factory=dict)   # class dir -> sorted file list


def write_dataset_tree(dataset, root):
    """Materialize a Dataset as root/<class>/<index>.pgm|ppm plus cell metadata."""
    os.makedirs(root, exist_ok=True)
    ext = "pgm" if dataset.images.shape[-1] == 1 else "ppm"
    counters = {}
    for img, label in zip(dataset.images, dataset.labels):
        name = dataset.class_names[label] if dataset.class_names else f"class{label}"
        d = os.path.join(root, name)
        os.makedirs(d, exist_ok=True)
        k = counters.get(name, 0)
        counters[name] = k + 1
        write_raster(os.path.join(d, f"{k:05d}.{ext}"), img)
    meta = os.path.join(root, "crucial_cells.txt")
    tmp = meta + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(" ".join(str(c) for c in dataset.crucial_cells) + "\n")
    os.replace(tmp, meta)


def load_dataset_tree(root, image_extent, channels):
    """Load a class-subdirectory tree of rasters, validating extents."""
    if not os.path.isdir(root):
        raise DataError(f"dataset root {root!r} is not a directory")
    class_dirs = sorted(d for d in os.listdir(root)
                        if os.path.isdir(os.path.join(root, d)))
    if not class_dirs:
        raise DataError(f"dataset root {root!r} has no class subdirectories")
    images, labels = [], []
    for label, d in enumerate(class_dirs):
        full = os.path.join(root, d)
        names = sorted(f for f in os.listdir(full) if f.endswith((".pgm", ".ppm")))
        if not names:
            raise DataError(f"class directory {full!r} contains no images")
        for name in names:
            img = read_raster(os.path.join(full, name))
            if img.shape[0] != image_extent or img.shape[1] != image_extent:
                raise DataError(
                    f"{name}: image is {img.shape[1]}x{img.shape[0]}, "
                    f"config expects {image_extent}x{image_extent}")
            if img.shape[2] != channels:
                raise DataError(
                    f"{name}: image has {img.shape[2]} channels, config expects {channels}")
            images.append(img)
            labels.append(label)
    crucial = ()
    meta = os.path.join(root, "crucial_cells.txt")
    if os.path.exists(meta):
        with open(meta, encoding="utf-8") as fh:
            crucial = tuple(int(t) for t in fh.read().split())
    return Dataset(images=np.stack(images), labels=np.asarray(labels, dtype=np.int64),
                   crucial_cells=crucial, class_names=tuple(class_dirs))
