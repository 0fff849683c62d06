"""JSON checkpoint container for encoder and MF parameters.

Floats are written with ``repr`` precision so a save/load/save cycle is
byte-identical.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from .data import atomic_write_text
from .ranker import MfParams, Recommender

FORMAT = "hinrec-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(v) for v in a.reshape(-1)]}


def _unpack(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def _side(encoder) -> dict:
    return {
        "global_attention": bool(encoder.global_attention),
        "attention": _pack(encoder.attention),
        "paths": [{"name": s.path, "widths": s.widths, "weights": [_pack(w) for w in s.weights]}
                  for s in encoder.stacks],
    }


@dataclass
class Checkpoint:
    payload: dict

    @property
    def users(self) -> List[str]:
        return self.payload["entities"]["users"]

    @property
    def concepts(self) -> List[str]:
        return self.payload["entities"]["concepts"]

    @property
    def exclude(self) -> Dict[str, List[int]]:
        return self.payload.get("exclude", {})

    def mf(self) -> MfParams:
        m = self.payload["mf"]
        return MfParams(_unpack(m["x"]), _unpack(m["y"]), _unpack(m["t_u"]), _unpack(m["t_k"]),
                        np.array(float(m["beta_u"])), np.array(float(m["beta_k"])))

    def recommender(self) -> Recommender:
        reps = self.payload["representations"]
        return Recommender(self.mf(), _unpack(reps["user"]), _unpack(reps["concept"]))

    def apply_to(self, model) -> None:
        """Copy stored weights into a model built with the same layout."""
        for side_name, enc in (("user", model.user), ("concept", model.concept)):
            side = self.payload["encoder"][side_name]
            if [p["name"] for p in side["paths"]] != enc.paths:
                raise CheckpointError(f"{side_name}: meta-path layout differs from checkpoint")
            for stack, p in zip(enc.stacks, side["paths"]):
                for w, packed in zip(stack.weights, p["weights"]):
                    arr = _unpack(packed)
                    if arr.shape != w.shape:
                        raise CheckpointError(f"{side_name}.{stack.path}: shape mismatch")
                    w[...] = arr
            enc.attention[...] = _unpack(side["attention"])
        src = self.mf()
        for name, arr in model.mf.tensors().items():
            arr[...] = getattr(src, name)

    def dumps(self) -> str:
        return json.dumps(self.payload, indent=1, sort_keys=True) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        atomic_write_text(path, self.dumps())


def make_checkpoint(model, users: List[str], concepts: List[str], seed: int,
                    config: Optional[Dict[str, str]] = None,
                    exclude: Optional[Dict[str, List[int]]] = None) -> Checkpoint:
    rec = model.freeze()
    mf = model.mf
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "seed": int(seed),
        "config": dict(sorted((config or {}).items())),
        "entities": {"users": list(users), "concepts": list(concepts)},
        "encoder": {"user": _side(model.user), "concept": _side(model.concept)},
        "mf": {"D": int(mf.x.shape[1]), "d": int(mf.t_u.shape[1]), "x": _pack(mf.x), "y": _pack(mf.y),
               "t_u": _pack(mf.t_u), "t_k": _pack(mf.t_k),
               "beta_u": float(mf.beta_u), "beta_k": float(mf.beta_k)},
        "representations": {"user": _pack(rec.e_u), "concept": _pack(rec.e_k)},
        "exclude": exclude or {},
    }
    return Checkpoint(payload)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if payload.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if payload.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported version {payload.get('version')}")
    return Checkpoint(payload)
