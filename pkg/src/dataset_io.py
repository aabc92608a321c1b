"""Dataset and checkpoint persistence.

A dataset directory holds `manifest.json` plus one FWT1 tensor file per
scene. FWT1 layout: b"FWT1", u32 LE rank, rank x u32 LE extents, then the
row-major float32 LE payload.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .audio_synth import AudioEvent
from .errors import CorruptFileError, MalformedManifestError, TaxonomyError
from .scene import BoundingBox, ClassTaxonomy, Detection, GroundTruth, LayerConfig, Scene
from .vit import ViTConfig, ViTModel

logger = logging.getLogger(__name__)

MAGIC = b"FWT1"
MANIFEST = "manifest.json"
FORMAT_VERSION = 1
PathLike = Union[str, Path]


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array, dtype="<f4")
    header = MAGIC + struct.pack("<I", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    return header + array.tobytes()


def decode_tensor(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise CorruptFileError(f"{source}: missing FWT1 magic")
    (rank,) = struct.unpack_from("<I", blob, 4)
    offset = 8 + 4 * rank
    if len(blob) < offset:
        raise CorruptFileError(f"{source}: truncated header (rank {rank})")
    shape = struct.unpack_from(f"<{rank}I", blob, 8)
    expected = offset + 4 * int(np.prod(shape, dtype=np.int64))
    if len(blob) != expected:
        raise CorruptFileError(f"{source}: {len(blob)} bytes, header {shape} implies {expected}")
    return np.frombuffer(blob, dtype="<f4", offset=offset).reshape(shape).astype(np.float32)


def write_tensor(path: PathLike, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path: PathLike) -> np.ndarray:
    path = Path(path)
    return decode_tensor(path.read_bytes(), str(path))


def _dump_json(path: Path, payload: Dict[str, Any]) -> None:
    with open(path, "w", encoding="utf8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _scene_record(scene: Scene, taxonomy: ClassTaxonomy, tensor_name: str, detections: Optional[Sequence[Detection]]) -> dict:
    record = {
        "id": scene.scene_id,
        "tensor": tensor_name,
        "ground_truth": [{"box": gt.box.to_list(), "class": taxonomy.name(gt.class_index)} for gt in scene.ground_truth],
        "events": [e.to_dict() for e in scene.events],
    }
    if detections is not None:
        record["detections"] = [
            {"box": d.box.to_list(), "class": taxonomy.name(d.class_index), "confidence": d.confidence} for d in detections
        ]
    return record


def save_dataset(
    scenes: Sequence[Scene],
    path: PathLike,
    taxonomy: ClassTaxonomy,
    provenance: Optional[Dict[str, Any]] = None,
    detections: Optional[Sequence[Sequence[Detection]]] = None,
) -> Path:
    """Write scenes (and optionally their detector outputs) under `path`."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    if not scenes:
        raise ValueError("refusing to save an empty dataset")
    first = scenes[0]
    records = []
    for n, scene in enumerate(scenes):
        scene.validate(taxonomy)
        name = f"scene_{scene.scene_id:06d}.fwt"
        write_tensor(root / name, scene.features)
        records.append(_scene_record(scene, taxonomy, name, None if detections is None else detections[n]))
    manifest = {
        "format_version": FORMAT_VERSION,
        "taxonomy": {"names": list(taxonomy.names), "rejection": taxonomy.rejection},
        "layer": first.layer.to_dict(),
        "duration": first.duration,
        "image": {"width": first.image_width, "height": first.image_height},
        "provenance": provenance or {},
        "scenes": records,
    }
    _dump_json(root / MANIFEST, manifest)
    logger.info("saved %d scenes to %s", len(scenes), root)
    return root


def load_manifest(path: PathLike) -> dict:
    manifest_path = Path(path) / MANIFEST
    try:
        with open(manifest_path, "r", encoding="utf8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedManifestError(f"{manifest_path}: {exc}") from exc
    for key in ("taxonomy", "layer", "duration", "image", "scenes"):
        if key not in manifest:
            raise MalformedManifestError(f"{manifest_path}: missing key {key!r}")
    return manifest


def load_dataset(path: PathLike, with_detections: bool = False):
    """(scenes, taxonomy), or (scenes, taxonomy, detections) when `with_detections`."""
    root = Path(path)
    manifest = load_manifest(root)
    try:
        taxonomy = ClassTaxonomy(tuple(manifest["taxonomy"]["names"]), manifest["taxonomy"].get("rejection", "Nothing"))
        layer_d = manifest["layer"]
        layer = LayerConfig(layer_d["layer_id"], layer_d["width"], layer_d["height"], layer_d["channels"])
        width, height = manifest["image"]["width"], manifest["image"]["height"]
        duration = float(manifest["duration"])
    except (KeyError, TypeError) as exc:
        raise MalformedManifestError(f"{root / MANIFEST}: {exc!r}") from exc

    scenes: List[Scene] = []
    all_detections: List[List[Detection]] = []
    for record in manifest["scenes"]:
        try:
            ground_truth = [
                GroundTruth(BoundingBox.from_list(g["box"]), taxonomy.index(g["class"])) for g in record["ground_truth"]
            ]
            events = [AudioEvent.from_dict(e) for e in record.get("events", [])]
            tensor_name = record["tensor"]
            scene_id = int(record["id"])
            detections = [
                Detection(BoundingBox.from_list(d["box"]), taxonomy.index(d["class"]), float(d["confidence"]))
                for d in record.get("detections", [])
            ] if with_detections else []
        except TaxonomyError:
            raise
        except (KeyError, TypeError) as exc:
            raise MalformedManifestError(f"scene record {record!r}: {exc!r}") from exc
        features = read_tensor(root / tensor_name)
        scene = Scene(scene_id, width, height, layer, features, ground_truth, events, duration)
        scene.validate(taxonomy)
        scenes.append(scene)
        if with_detections:
            all_detections.append(detections)
    logger.info("loaded %d scenes from %s", len(scenes), root)
    if with_detections:
        return scenes, taxonomy, all_detections
    return scenes, taxonomy


def save_checkpoint(path: PathLike, state: Dict[str, np.ndarray], header: Dict[str, Any]) -> Path:
    """One FWT1 file per parameter plus `checkpoint.json`; stored as float32."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    names = list(state)
    for i, name in enumerate(names):
        write_tensor(root / f"param_{i:03d}.fwt", state[name])
    _dump_json(root / "checkpoint.json", {**header, "parameters": names})
    return root


def load_checkpoint(path: PathLike) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    root = Path(path)
    try:
        with open(root / "checkpoint.json", "r", encoding="utf8") as fh:
            header = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedManifestError(f"{root / 'checkpoint.json'}: {exc}") from exc
    if not isinstance(header, dict):
        raise MalformedManifestError(f"{root}: checkpoint header is not an object")
    names = header.pop("parameters", None)
    if names is None:
        raise MalformedManifestError(f"{root}: checkpoint header has no parameter list")
    state = {name: read_tensor(root / f"param_{i:03d}.fwt").astype(np.float64) for i, name in enumerate(names)}
    return state, header


def save_model(model: ViTModel, path: PathLike) -> Path:
    header = {
        "config": asdict(model.config),
        "num_classes": model.num_classes,
        "height": model.height,
        "width": model.width,
    }
    return save_checkpoint(path, model.state_dict(), header)


def load_model(path: PathLike) -> ViTModel:
    state, header = load_checkpoint(path)
    try:
        model = ViTModel(ViTConfig(**header["config"]), header["num_classes"], header["height"], header["width"])
    except (KeyError, TypeError) as exc:
        raise MalformedManifestError(f"{path}: bad checkpoint header ({exc!r})") from exc
    model.load_state_dict(state)
    return model
