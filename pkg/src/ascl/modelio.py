"""Model files: ``.npz`` archives holding every parameter array plus the
effective training config as text."""

from __future__ import annotations

import json
import zipfile

import numpy as np

from .config import TrainConfig, parse_config_text
from .errors import FormatError
from .matcher import CrossAttentionParams, GlobalProjectionParams, ModelParams


def save_model(path, params, config=None):
    arrays = {}
    for prefix, p in (("i2t", params.i2t), ("t2i", params.t2i)):
        arrays.update({f"{prefix}.zx": p.zx, f"{prefix}.zy": p.zy, f"{prefix}.zo": p.zo})
    arrays.update({"global.xw": params.glob.xw, "global.xv": params.glob.xv,
                   "global.xg": params.glob.xg, "global.lam": params.glob.lam})
    meta = {"heads": params.i2t.heads, "u1": params.u1, "tied": params.tied,
            "positional_encoding": params.positional_encoding,
            "positional_scale": params.positional_scale,
            "learn_lambda": params.learn_lambda, "fusion": params.fusion}
    arrays["meta"] = np.array(json.dumps(meta))
    arrays["config"] = np.array(config.dumps() if config is not None else "")
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path):
    """Returns ``(params, config or None)``."""
    try:
        with np.load(path, allow_pickle=False) as z:
            a = {k: z[k] for k in z.files}
    except (zipfile.BadZipFile, ValueError, EOFError) as exc:
        raise FormatError(f"{path}: not a model archive ({exc})", 0) from exc
    try:
        meta = json.loads(str(a["meta"]))
        heads = int(meta["heads"])
        i2t = CrossAttentionParams(a["i2t.zx"], a["i2t.zy"], a["i2t.zo"], heads)
        t2i = i2t if meta["tied"] else CrossAttentionParams(a["t2i.zx"], a["t2i.zy"], a["t2i.zo"], heads)
        glob = GlobalProjectionParams(a["global.xw"], a["global.xv"], a["global.xg"], float(a["global.lam"]))
        params = ModelParams(i2t, t2i, glob, float(meta["u1"]), bool(meta["positional_encoding"]),
                             float(meta["positional_scale"]), bool(meta["learn_lambda"]),
                             bool(meta["fusion"]))
    except (KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: missing entry {exc}", 0) from exc
    text = str(a.get("config", ""))
    config = TrainConfig.from_dict(parse_config_text(text)) if text.strip() else None
    return params, config
