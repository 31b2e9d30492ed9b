"""File formats: ASCII PLY, pose files, correspondence / result JSON, pair dirs."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .features import CorrespondenceSet
from .geometry import PointCloud, RigidTransform, is_rotation, nearest_rotation


def read_ply(path) -> PointCloud:
    """Read an ASCII PLY; only vertex x/y/z and optional nx/ny/nz are kept."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    elements = []  # (name, count, [property names])
    fmt = None
    pos = 1
    while pos < len(lines):
        tok = lines[pos].split()
        pos += 1
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise ValueError(f"{path}: property before element")
            elements[-1][2].append(tok[-1])
        elif tok[0] == "end_header":
            break
    else:
        raise ValueError(f"{path}: missing end_header")
    if fmt != "ascii":
        raise ValueError(f"{path}: only ASCII PLY is supported")

    points = normals = None
    for name, count, props in elements:
        body = lines[pos:pos + count]
        pos += count
        if name != "vertex":
            continue
        if len(body) < count:
            raise ValueError(f"{path}: truncated vertex list")
        try:
            cols = [props.index(p) for p in ("x", "y", "z")]
        except ValueError:
            raise ValueError(f"{path}: vertex lacks x/y/z") from None
        data = np.array([[float(v) for v in row.split()[:len(props)]] for row in body]).reshape(count, len(props))
        points = data[:, cols]
        if all(p in props for p in ("nx", "ny", "nz")):
            n = data[:, [props.index(p) for p in ("nx", "ny", "nz")]]
            norm = np.linalg.norm(n, axis=1, keepdims=True)
            if np.all(norm > 0):
                normals = n / norm
    if points is None:
        raise ValueError(f"{path}: no vertex element")
    return PointCloud(points, normals)


def ply_text(cloud: PointCloud) -> str:
    has_n = cloud.normals is not None
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
              "property float x", "property float y", "property float z"]
    if has_n:
        header += ["property float nx", "property float ny", "property float nz"]
    header.append("end_header")
    data = cloud.points if not has_n else np.hstack([cloud.points, cloud.normals])
    body = [" ".join(format(float(v), ".17g") for v in row) for row in data]
    return "\n".join(header + body) + "\n"


def write_ply(path, cloud: PointCloud):
    Path(path).write_text(ply_text(cloud))


def read_poses(path) -> list[RigidTransform]:
    """Pose file: one pose per line, row-major R (9 values) then t (3 values)."""
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) != 12:
                raise ValueError(f"{path}:{lineno}: expected 12 values, got {len(vals)}")
            R = np.array(vals[:9]).reshape(3, 3)
            if not is_rotation(R):
                # tolerate poses printed with limited precision
                if not is_rotation(R, 1e-4):
                    raise ValueError(f"{path}:{lineno}: not a rotation")
                R = nearest_rotation(R)
            poses.append(RigidTransform(R, vals[9:]))
    return poses


def read_pose(path) -> RigidTransform:
    poses = read_poses(path)
    if len(poses) != 1:
        raise ValueError(f"{path}: expected exactly one pose, found {len(poses)}")
    return poses[0]


def write_poses(path, poses, comment: str | None = None):
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        for T in poses:
            vals = list(T.rotation.ravel()) + list(T.translation)
            fh.write(" ".join(format(float(v), ".17g") for v in vals) + "\n")


def correspondences_to_json(cset: CorrespondenceSet) -> list[dict]:
    out = []
    for i in range(len(cset)):
        item = {
            "src": [float(v) for v in cset.src[i]],
            "dst": [float(v) for v in cset.dst[i]],
            "sim": float(cset.sim[i]),
            "ratio": float(cset.ratio[i]),
            "src_idx": int(cset.src_idx[i]),
            "dst_idx": int(cset.dst_idx[i]),
        }
        if cset.has_lrfs:
            item["src_lrf"] = [float(v) for v in cset.src_lrf[i].ravel()]
            item["dst_lrf"] = [float(v) for v in cset.dst_lrf[i].ravel()]
        out.append(item)
    return out


def correspondences_from_json(items, source_cloud=None, target_cloud=None) -> CorrespondenceSet:
    if not isinstance(items, list):
        raise ValueError("correspondence JSON must be an array")
    try:
        with_lrf = bool(items) and all("src_lrf" in c and "dst_lrf" in c for c in items)
        return CorrespondenceSet(
            src=[c["src"] for c in items],
            dst=[c["dst"] for c in items],
            sim=[c["sim"] for c in items],
            ratio=[c["ratio"] for c in items],
            src_idx=[c["src_idx"] for c in items],
            dst_idx=[c["dst_idx"] for c in items],
            src_lrf=[c["src_lrf"] for c in items] if with_lrf else None,
            dst_lrf=[c["dst_lrf"] for c in items] if with_lrf else None,
            source_cloud=source_cloud,
            target_cloud=target_cloud,
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed correspondence entry: {exc}") from None


def correspondences_text(cset: CorrespondenceSet) -> str:
    # json emits the shortest repr, which round-trips doubles exactly
    return json.dumps(correspondences_to_json(cset))


def save_correspondences(path, cset: CorrespondenceSet):
    Path(path).write_text(correspondences_text(cset))


def load_correspondences(path, source_cloud=None, target_cloud=None) -> CorrespondenceSet:
    return correspondences_from_json(json.loads(Path(path).read_text()), source_cloud, target_cloud)


GROUPING_RESULT_KEYS = {"method": str, "selected": list, "scores": list, "elapsed_s": float}


def validate_grouping_json(obj) -> None:
    """Raise ValueError unless ``obj`` matches the GroupingResult JSON layout."""
    if not isinstance(obj, dict) or set(obj) != set(GROUPING_RESULT_KEYS):
        raise ValueError("grouping result must have exactly: method, selected, scores, elapsed_s")
    for key, typ in GROUPING_RESULT_KEYS.items():
        if typ is float:
            ok = isinstance(obj[key], (int, float)) and not isinstance(obj[key], bool)
        else:
            ok = isinstance(obj[key], typ)
        if not ok:
            raise ValueError(f"grouping result field {key!r} has the wrong type")
    if any(not isinstance(i, int) for i in obj["selected"]):
        raise ValueError("selected must hold integers")
    if len(set(obj["selected"])) != len(obj["selected"]) or obj["selected"] != sorted(obj["selected"]):
        raise ValueError("selected must be unique and sorted")
    if any(i < 0 or i >= len(obj["scores"]) for i in obj["selected"]):
        raise ValueError("selected index out of range")


def save_pair(directory, pair, correspondences: CorrespondenceSet | None = None):
    """Write source.ply, target.ply, gt.txt and meta.json (+ corr.json)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_ply(d / "source.ply", pair.source)
    write_ply(d / "target.ply", pair.target)
    write_poses(d / "gt.txt", [pair.gt], "ground-truth pose: R (row-major) then t")
    meta = {k: v for k, v in pair.meta.items() if isinstance(v, (int, float, str, bool))}
    meta.setdefault("nuisance", "none")
    meta.setdefault("level", 0.0)
    meta.setdefault("seed", 0)
    if pair.labels is not None:
        meta["labels"] = [bool(v) for v in pair.labels]
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    cset = correspondences if correspondences is not None else pair.correspondences
    if cset is not None:
        save_correspondences(d / "corr.json", cset)


def load_pair(directory):
    from .synthdata import SyntheticPair

    d = Path(directory)
    source = read_ply(d / "source.ply")
    target = read_ply(d / "target.ply")
    gt = read_pose(d / "gt.txt")
    meta = json.loads((d / "meta.json").read_text()) if (d / "meta.json").exists() else {}
    labels = np.array(meta.pop("labels"), dtype=bool) if "labels" in meta else None
    cset = load_correspondences(d / "corr.json", source, target) if (d / "corr.json").exists() else None
    return SyntheticPair(source, target, gt, labels, meta, cset)
