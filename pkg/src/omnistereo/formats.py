"""File formats: cost volumes (OCSV), spherical images (OSPH), rig calibration
JSON, depth maps with grid sidecars, PLY point clouds, and grayscale images.

Binary headers are little-endian u32 fields after a 4-byte magic. Payloads are
float32 followed by one validity byte per element. Writers emit canonical
bytes so that write(read(f)) reproduces f exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import FisheyeIntrinsics
from .pose import Pose
from .sgm import InverseDepthMap
from .sweep import RigFrame, SphereGrid, SphericalImage, inverse_depth

__all__ = [
    "FormatError", "write_ocsv", "read_ocsv", "write_osph", "read_osph",
    "write_rig", "read_rig", "write_volume", "read_volume",
    "write_depth", "read_depth", "write_ply", "read_ply",
    "write_corners", "read_corners", "write_intrinsics", "read_intrinsics",
    "load_image", "save_image",
]

OCSV_MAGIC = b"OCSV"
OSPH_MAGIC = b"OSPH"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}: expected {n} bytes, got {len(data)}")
    return data


def _check_magic(f, magic):
    got = f.read(4)
    if got != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {got!r}")


def _check_version(version):
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version} (expected {FORMAT_VERSION})")


# ---------------------------------------------------------------------------
# OCSV cost volumes / cost maps

def write_ocsv(path, data, mask, check_range=True):
    """Write a (N, H, W) or (H, W) float volume with validity bytes."""
    data = np.asarray(data)
    mask = np.asarray(mask, dtype=bool)
    if data.ndim == 2:
        data = data[None]
        mask = mask[None]
    if data.ndim != 3 or data.shape != mask.shape:
        raise FormatError("cost data must be (N, H, W) with a matching mask")
    if check_range and data.size:
        vals = data[mask]
        if vals.size and (vals.min() < 0.0 or vals.max() > 1.0):
            raise FormatError("valid costs must lie in [0, 1]")
    n, h, w = data.shape
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    validity = mask.astype(np.uint8).tobytes()
    with open(path, "wb") as f:
        f.write(OCSV_MAGIC)
        f.write(struct.pack("<IIII", FORMAT_VERSION, w, h, n))
        f.write(payload)
        f.write(validity)


def read_ocsv(path):
    """Read an OCSV file: (data float32 (N, H, W), mask bool)."""
    with open(path, "rb") as f:
        _check_magic(f, OCSV_MAGIC)
        version, w, h, n = struct.unpack("<IIII", _read_exact(f, 16, "header"))
        _check_version(version)
        count = w * h * n
        payload = _read_exact(f, 4 * count, "float payload")
        validity = _read_exact(f, count, "validity bytes")
        extra = f.read(1)
        if extra:
            raise FormatError("trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(n, h, w).copy()
    mask = np.frombuffer(validity, dtype=np.uint8).reshape(n, h, w) != 0
    return data, mask


# ---------------------------------------------------------------------------
# OSPH spherical images

def write_osph(path, sph: SphericalImage):
    data = np.asarray(sph.data)
    if data.ndim != 2:
        raise FormatError("spherical image data must be 2-D")
    if sph.camera_id < 0 or sph.sphere_index < 0:
        raise FormatError("camera_id and sphere_index must be non-negative for OSPH")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(OSPH_MAGIC)
        f.write(struct.pack("<IIIII", FORMAT_VERSION, w, h,
                            int(sph.camera_id), int(sph.sphere_index)))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
        f.write(np.asarray(sph.mask, dtype=np.uint8).tobytes())


def read_osph(path) -> SphericalImage:
    with open(path, "rb") as f:
        _check_magic(f, OSPH_MAGIC)
        version, w, h, cam, sphere = struct.unpack("<IIIII", _read_exact(f, 20, "header"))
        _check_version(version)
        count = w * h
        payload = _read_exact(f, 4 * count, "float payload")
        validity = _read_exact(f, count, "validity bytes")
        extra = f.read(1)
        if extra:
            raise FormatError("trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w).copy()
    mask = np.frombuffer(validity, dtype=np.uint8).reshape(h, w) != 0
    return SphericalImage(data=data, mask=mask, camera_id=cam, sphere_index=sphere)


# ---------------------------------------------------------------------------
# rig calibration JSON

def _intr_to_dict(intr: FisheyeIntrinsics):
    return {
        "poly": [float(v) for v in intr.poly],
        "affine": {"c": intr.c, "d": intr.d, "e": intr.e, "cx": intr.cx, "cy": intr.cy},
        "image_size": [intr.width, intr.height],
        "fov_deg": intr.fov_deg,
    }


def _intr_from_dict(d):
    aff = d["affine"]
    return FisheyeIntrinsics(
        poly=np.array(d["poly"], dtype=float),
        c=float(aff["c"]), d=float(aff["d"]), e=float(aff["e"]),
        cx=float(aff["cx"]), cy=float(aff["cy"]),
        width=int(d["image_size"][0]), height=int(d["image_size"][1]),
        fov_deg=float(d["fov_deg"]))


def _pose_to_dict(p: Pose):
    return {"r": [float(v) for v in p.r], "t": [float(v) for v in p.t]}


def _pose_from_dict(d):
    return Pose(np.array(d["r"], dtype=float), np.array(d["t"], dtype=float))


def write_rig(path, intrinsics, poses, rig_frame: RigFrame | None = None, report=None):
    doc = {
        "format": "omnistereo-rig",
        "version": FORMAT_VERSION,
        "cameras": [
            dict(_intr_to_dict(intr), pose=_pose_to_dict(pose))
            for intr, pose in zip(intrinsics, poses)
        ],
        "rig_frame": None,
    }
    if rig_frame is not None:
        doc["rig_frame"] = {
            "origin": [float(v) for v in rig_frame.origin],
            "rotation": [[float(v) for v in row] for row in rig_frame.rotation],
            "cam_from_rig": [_pose_to_dict(p) for p in rig_frame.cam_from_rig],
        }
    if report is not None:
        doc["report"] = {
            "rmse_px": report.rmse_px,
            "per_camera_rmse_px": {str(k): v for k, v in report.per_camera_rmse_px.items()},
            "iterations": report.iterations,
            "converged": report.converged,
        }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_rig(path):
    """Returns (intrinsics list, poses list, RigFrame or None)."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != "omnistereo-rig":
        raise FormatError(f"not a rig file: format field is {doc.get('format')!r}")
    _check_version(doc.get("version"))
    intrinsics = [_intr_from_dict(c) for c in doc["cameras"]]
    poses = [_pose_from_dict(c["pose"]) for c in doc["cameras"]]
    frame = None
    if doc.get("rig_frame"):
        rf = doc["rig_frame"]
        frame = RigFrame(
            origin=np.array(rf["origin"], dtype=float),
            rotation=np.array(rf["rotation"], dtype=float),
            cam_from_rig=[_pose_from_dict(p) for p in rf["cam_from_rig"]])
    return intrinsics, poses, frame


# ---------------------------------------------------------------------------
# fused cost volumes with grid sidecars

def write_volume(path, volume):
    write_ocsv(path, volume.data, volume.mask, check_range=True)
    doc = {"format": "omnistereo-volume", "version": FORMAT_VERSION,
           "grid": volume.grid.to_dict()}
    with open(str(path) + ".json", "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_volume(path):
    from .cost import CostVolume
    data, mask = read_ocsv(path)
    try:
        with open(str(path) + ".json") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise FormatError(f"missing volume sidecar {path}.json") from None
    if doc.get("format") != "omnistereo-volume":
        raise FormatError("sidecar is not a volume descriptor")
    _check_version(doc.get("version"))
    grid = SphereGrid.from_dict(doc["grid"])
    want = (grid.n_spheres, grid.height, grid.width)
    if data.shape != want:
        raise FormatError(f"volume shape {data.shape} does not match sidecar grid {want}")
    return CostVolume(data=data, mask=mask, grid=grid)


# ---------------------------------------------------------------------------
# depth maps: OCSV (N=1, index payload) + JSON grid sidecar

def depth_sidecar_path(path):
    return str(path) + ".json"


def write_depth(path, depth: InverseDepthMap, grid: SphereGrid):
    write_ocsv(path, depth.index.astype(np.float32), depth.mask, check_range=False)
    doc = {"format": "omnistereo-depth", "version": FORMAT_VERSION, "grid": grid.to_dict()}
    with open(depth_sidecar_path(path), "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_depth(path):
    """Returns (InverseDepthMap, SphereGrid); requires the JSON sidecar."""
    data, mask = read_ocsv(path)
    if data.shape[0] != 1:
        raise FormatError(f"depth file must have N=1 slice, got {data.shape[0]}")
    sidecar = depth_sidecar_path(path)
    try:
        with open(sidecar) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise FormatError(f"missing depth sidecar {sidecar}") from None
    if doc.get("format") != "omnistereo-depth":
        raise FormatError("sidecar is not a depth descriptor")
    _check_version(doc.get("version"))
    grid = SphereGrid.from_dict(doc["grid"])
    index = np.rint(data[0]).astype(np.int32)
    if index.min() < 0 or index.max() >= grid.n_spheres:
        raise FormatError("depth indices outside [0, n_spheres)")
    inv = np.asarray(inverse_depth(index, grid), dtype=float)
    return InverseDepthMap(index=index, inv_depth=inv, depth=1.0 / inv,
                           mask=mask[0]), grid


# ---------------------------------------------------------------------------
# PLY point clouds

def write_ply(path, points, intensity, binary=True):
    """Point cloud with double x/y/z and intensity, ASCII or binary LE."""
    points = np.asarray(points, dtype="<f8").reshape(-1, 3)
    intensity = np.asarray(intensity, dtype="<f8").reshape(-1)
    if intensity.shape[0] != points.shape[0]:
        raise FormatError("points and intensity lengths differ")
    n = points.shape[0]
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {n}\n"
        "property double x\n"
        "property double y\n"
        "property double z\n"
        "property double intensity\n"
        "end_header\n"
    )
    rows = np.concatenate([points, intensity[:, None]], axis=1)
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        if binary:
            f.write(np.ascontiguousarray(rows, dtype="<f8").tobytes())
        else:
            for row in rows:
                f.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))


def read_ply(path):
    """Returns (points (M, 3) float64, intensity (M,) float64)."""
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply\n") or end < 0:
        raise FormatError("not a PLY file")
    header = blob[:end].decode("ascii").splitlines()
    body = blob[end + len(b"end_header\n"):]
    fmt = None
    count = None
    props = []
    for line in header[1:]:
        parts = line.split()
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element" and parts[1] == "vertex":
            count = int(parts[2])
        elif parts[0] == "property":
            props.append((parts[1], parts[2]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"unsupported PLY format {fmt!r}")
    if count is None:
        raise FormatError("PLY header is missing the vertex element")
    if [p[1] for p in props] != ["x", "y", "z", "intensity"]:
        raise FormatError(f"unexpected PLY properties {props}")
    if fmt == "binary_little_endian":
        if any(p[0] != "double" for p in props):
            raise FormatError("binary PLY must store doubles")
        need = count * 4 * 8
        if len(body) < need:
            raise FormatError(f"truncated PLY payload: expected {need} bytes, got {len(body)}")
        rows = np.frombuffer(body[:need], dtype="<f8").reshape(count, 4)
    else:
        rows = np.loadtxt(body.decode("ascii").splitlines(), dtype=float, ndmin=2)
        if rows.shape != (count, 4):
            raise FormatError(f"ASCII PLY payload has shape {rows.shape}, expected ({count}, 4)")
    return rows[:, :3].copy(), rows[:, 3].copy()


# ---------------------------------------------------------------------------
# corner observations and initial intrinsics (JSON)

def write_corners(path, board, observations):
    doc = {
        "format": "omnistereo-corners",
        "version": FORMAT_VERSION,
        "board": {"cols": board.cols, "rows": board.rows, "square_m": board.square_m},
        "observations": [
            {"camera": i, "capture": k,
             "corners": [[int(cid), float(u), float(v)]
                         for cid, (u, v) in zip(ids, pix)]}
            for (i, k), (ids, pix) in observations.items()
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_corners(path):
    """Returns (CheckerboardSpec, ObservationSet)."""
    from .calibration import CheckerboardSpec, ObservationSet
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != "omnistereo-corners":
        raise FormatError("not a corner observations file")
    _check_version(doc.get("version"))
    b = doc["board"]
    board = CheckerboardSpec(cols=int(b["cols"]), rows=int(b["rows"]),
                             square_m=float(b["square_m"]))
    obs = ObservationSet()
    for rec in doc["observations"]:
        corners = np.array(rec["corners"], dtype=float)
        obs.add(int(rec["camera"]), int(rec["capture"]),
                corners[:, 0].astype(int), corners[:, 1:3])
    return board, obs


def write_intrinsics(path, intrinsics):
    doc = {
        "format": "omnistereo-intrinsics",
        "version": FORMAT_VERSION,
        "cameras": [_intr_to_dict(i) for i in intrinsics],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_intrinsics(path):
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != "omnistereo-intrinsics":
        raise FormatError("not an intrinsics file")
    _check_version(doc.get("version"))
    return [_intr_from_dict(c) for c in doc["cameras"]]


# ---------------------------------------------------------------------------
# grayscale images (PNG via Pillow, PGM native)

def load_image(path):
    """Load an 8/16-bit grayscale (or color, converted by luminance) image to [0, 1]."""
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".ppm"):
        return _read_pnm(path)
    img = Image.open(path)
    if img.mode in ("RGB", "RGBA"):
        arr = np.asarray(img).astype(np.float64)
        lum = 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
        return lum / 255.0
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    if arr.dtype in (np.uint16, np.int32):
        return arr.astype(np.float64) / 65535.0
    raise FormatError(f"unsupported image mode {img.mode!r} in {path}")


def save_image(path, data, bits=8):
    """Save float [0, 1] data as grayscale PNG or PGM."""
    path = Path(path)
    data = np.clip(np.asarray(data, dtype=float), 0.0, 1.0)
    if bits == 8:
        q = np.rint(data * 255.0).astype(np.uint8)
    elif bits == 16:
        q = np.rint(data * 65535.0).astype(np.uint16)
    else:
        raise ValueError("bits must be 8 or 16")
    if path.suffix.lower() == ".pgm":
        _write_pgm(path, q)
        return
    if bits == 8:
        Image.fromarray(q, mode="L").save(path)
    else:
        Image.frombytes("I;16", (q.shape[1], q.shape[0]),
                        q.astype("<u2").tobytes()).save(path)


def _write_pgm(path, q):
    maxval = 255 if q.dtype == np.uint8 else 65535
    h, w = q.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        if maxval == 255:
            f.write(q.tobytes())
        else:
            f.write(q.astype(">u2").tobytes())


def _read_pnm(path):
    with open(path, "rb") as f:
        blob = f.read()
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(blob):
        # skip whitespace and comments
        while i < len(blob) and blob[i:i + 1].isspace():
            i += 1
        if blob[i:i + 1] == b"#":
            while i < len(blob) and blob[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(blob) and not blob[j:j + 1].isspace():
            j += 1
        tokens.append(blob[i:j])
        i = j
    if len(tokens) < 4:
        raise FormatError(f"malformed PNM header in {path}")
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    i += 1  # single whitespace after maxval
    if magic == b"P5":
        dtype = np.uint8 if maxval < 256 else ">u2"
        count = w * h
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=i).reshape(h, w)
        return arr.astype(np.float64) / maxval
    if magic == b"P2":
        vals = np.array(blob[i:].split(), dtype=np.float64)
        if vals.size != w * h:
            raise FormatError(f"P2 payload has {vals.size} values, expected {w * h}")
        return vals.reshape(h, w) / maxval
    raise FormatError(f"unsupported PNM magic {magic!r}")
