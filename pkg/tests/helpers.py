import hashlib
import json
from pathlib import Path

import numpy as np

from hiresseg.tensor_io import write_tensor


def tree_digest(root) -> dict[str, str]:
    root = Path(root)
    return {
        p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def write_hand_built(root):
    """Two samples on a 10x10 token grid: (I=80, U=100) and (I=1, U=10)."""
    def m(cells):
        a = np.zeros((10, 10), np.uint8)
        a.flat[list(cells)] = 1
        return a

    pairs = {"a": (m(range(90)), m(range(10, 100))), "b": (m([0]), m(range(10)))}
    samples, records = [], []
    (root / "run" / "pred").mkdir(parents=True)
    feats_g = np.zeros((10, 10, 2), np.float32)
    write_tensor(feats_g, root / "g.hrtf")
    write_tensor(np.zeros((10, 10, 2), np.float32), root / "l.hrtf")
    write_tensor(np.zeros(4, np.float32), root / "seg.hrtf")
    for sid, (pred, gt) in pairs.items():
        write_tensor(gt, root / f"{sid}_gt.hrtf")
        write_tensor(pred[None], root / f"{sid}_masks.hrtf")
        write_tensor(pred, root / "run" / "pred" / f"{sid}.hrtf")
        samples.append({"id": sid, "global_features": "g.hrtf", "local_features": "l.hrtf",
                        "masks": f"{sid}_masks.hrtf", "gt": f"{sid}_gt.hrtf", "seg_embedding": "seg.hrtf"})
        records.append({"id": sid, "chosen": [0], "pred_mask": f"pred/{sid}.hrtf"})
    cfg = {"base_side": 10, "mag": 1, "token_side": 10, "dim": 2, "seg_dim": 4}
    (root / "manifest.json").write_text(json.dumps({"config": cfg, "seed": 0, "samples": samples}))
    (root / "run" / "run.json").write_text(json.dumps({"samples": records}))
