"""Dataset directory layout and file formats.

A dataset directory holds:
    manifest.json   view ids, resolution, near/far
    cam_%03d.txt    one camera record per view (see geometry.camera_record)
    img_%03d.png    8-bit RGB
    depth_%03d.pfm  32-bit float grayscale PFM, little-endian (scale -1.0),
                    camera-z depth, 0 where no surface was hit
"""

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import geometry as geo
from . import scene as sc
from .errors import DataError


def write_pfm(path, data):
    """Grayscale PFM, rows written bottom-to-top per the format spec."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise DataError("PFM writer expects a 2-d array")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{data.shape[1]} {data.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(data[::-1], dtype="<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise DataError(f"{path}: not a grayscale PFM")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(4 * w * h), dtype=dtype).reshape(h, w)
    return np.ascontiguousarray(data[::-1]).astype(np.float32)


def save_png(path, img):
    """img: float [h,w,3] in [0,1] -> 8-bit PNG."""
    arr = np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_png(path):
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    return arr / 255.0


@dataclass
class Dataset:
    root: str
    ids: list
    width: int
    height: int
    near: float
    far: float
    images: np.ndarray  # [V,H,W,3] float32
    depths: np.ndarray  # [V,H,W] float32
    cameras: list

    def view_index(self, view_id):
        try:
            return self.ids.index(view_id)
        except ValueError:
            raise DataError(f"view id {view_id} not in dataset {self.root}") from None


def export_dataset(scene, cameras, out_dir, width, height, near, far):
    """Render every camera and write the dataset directory."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create dataset dir: {e}") from e
    ids = list(range(len(cameras)))
    for i, cam in zip(ids, cameras):
        img, depth, _ = sc.render_view(scene, cam, width, height)
        save_png(os.path.join(out_dir, f"img_{i:03d}.png"), img)
        write_pfm(os.path.join(out_dir, f"depth_{i:03d}.pfm"), depth)
        with open(os.path.join(out_dir, f"cam_{i:03d}.txt"), "w") as f:
            f.write(geo.camera_record(cam, near, far) + "\n")
    manifest = {
        "views": ids,
        "width": width,
        "height": height,
        "near": near,
        "far": far,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
    return out_dir


def load_dataset(root):
    mpath = os.path.join(root, "manifest.json")
    if not os.path.isfile(mpath):
        raise DataError(f"no manifest.json under '{root}'")
    with open(mpath) as f:
        manifest = json.load(f)
    ids = manifest["views"]
    width, height = manifest["width"], manifest["height"]
    images, depths, cameras = [], [], []
    near = far = None
    for i in ids:
        ipath = os.path.join(root, f"img_{i:03d}.png")
        dpath = os.path.join(root, f"depth_{i:03d}.pfm")
        cpath = os.path.join(root, f"cam_{i:03d}.txt")
        for p in (ipath, dpath, cpath):
            if not os.path.isfile(p):
                raise DataError(f"dataset file missing: {p}")
        images.append(load_png(ipath))
        depths.append(read_pfm(dpath))
        with open(cpath) as f:
            cam, near, far = geo.parse_camera_record(f.read())
        cameras.append(cam)
    return Dataset(
        root=root,
        ids=ids,
        width=width,
        height=height,
        near=manifest.get("near", near),
        far=manifest.get("far", far),
        images=np.stack(images),
        depths=np.stack(depths),
        cameras=cameras,
    )
