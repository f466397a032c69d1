"""Training checkpoints: parameters, masks and the resolved run config in one ``.npz``."""
from __future__ import annotations

import io
import zipfile
from pathlib import Path

import numpy as np
import yaml

from .block import ALFBlock
from .config import RunConfig, parse_config
from .errors import FormatError
from .model import Model


def save_checkpoint(path, model: Model, config: RunConfig, schedules=None) -> bytes:
    spec = config.to_dict()
    spec.pop("out_dir")  # where it was written is not part of the model
    arrays = {"config": np.array(yaml.safe_dump(spec, sort_keys=True))}
    arrays.update(model.named_parameters())
    for i, block in model.alf_blocks():
        arrays[f"layer{i}.mask"] = block.mask
        arrays[f"layer{i}.soft_scores"] = block.soft_scores
        if schedules and i in schedules:
            arrays[f"layer{i}.step"] = np.array(schedules[i].step)
    buf = io.BytesIO()
    # np.savez stamps wall-clock times into the zip; fixed entries keep it byte-reproducible
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            member = io.BytesIO()
            np.lib.format.write_array(member, np.asarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), member.getvalue())
    data = buf.getvalue()
    if path is not None:
        Path(path).write_bytes(data)
    return data


def load_checkpoint(path):
    """Returns ``(model, config)``."""
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if "config" not in arrays:
        raise FormatError(f"{path} has no embedded config")
    config = parse_config(yaml.safe_load(str(arrays.pop("config"))))
    model = Model.from_arch(config.arch, rng=0)
    for name in model.named_parameters():
        if name not in arrays:
            raise FormatError(f"checkpoint is missing parameter {name}")
        model.set_parameter(name, np.array(arrays[name], dtype=np.float32))
    for i, block in model.alf_blocks():
        block.mask = np.array(arrays[f"layer{i}.mask"], dtype=np.float32)
        block.soft_scores = np.array(arrays[f"layer{i}.soft_scores"], dtype=np.float32)
        if not isinstance(block, ALFBlock) or not block.mask.any():
            raise FormatError(f"layer {i}: checkpoint mask has no active channel")
    return model, config
