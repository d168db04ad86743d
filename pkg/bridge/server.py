"""Stdio bridge server: exposes batch simulation and the reference losses
to foreign training loops over a length-prefixed binary frame protocol.

Frame layout (both directions):

    uint32 LE header length | UTF-8 JSON header | raw payloads

The header's "payloads" field lists the byte length of each trailing
payload. Arrays cross the boundary as little-endian C-order buffers;
float64 end to end, so values are bit-identical to the in-process
results. Errors come back as {"ok": false, "error": {"type", "message"}}
and never crash the server.

Sessions: "create_session" loads a multi-parametric map and its
gold-standard segmentation once and returns an integer handle;
"simulate_batch" can then be called many times against it. "release"
frees the session (idempotent). "stats" reports active sessions and RSS
for leak checks.

Run: python3 server.py   (normally spawned by the TypeScript client)
"""

import json
import struct
import sys

import numpy as np

from physimri import (
    PhysimriError,
    RngStream,
    ValidationError,
    attenuated_ce_loss,
    load_mpm,
    load_prior,
    load_range,
    make_stratified_batch,
    pgs_segment,
    stratification_feature_loss,
)
from physimri.augment import range_from_dict
from physimri.grids import PatchSpec

_sessions = {}
_next_handle = 1


def _read_exact(stream, n):
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream):
    raw_len = _read_exact(stream, 4)
    if raw_len is None:
        return None
    (header_len,) = struct.unpack("<I", raw_len)
    header = json.loads(_read_exact(stream, header_len).decode("utf-8"))
    payloads = []
    for size in header.get("payloads", []):
        payloads.append(_read_exact(stream, int(size)))
    return header, payloads


def write_frame(stream, header, payloads=()):
    header = dict(header)
    header["payloads"] = [len(p) for p in payloads]
    blob = json.dumps(header).encode("utf-8")
    stream.write(struct.pack("<I", len(blob)))
    stream.write(blob)
    for p in payloads:
        stream.write(p)
    stream.flush()


def op_create_session(header, payloads):
    global _next_handle
    mpm = load_mpm(header["mpm_path"])
    prior = load_prior(header["prior_path"])
    gold = pgs_segment(mpm, prior)
    handle = _next_handle
    _next_handle += 1
    _sessions[handle] = (mpm, gold)
    return {"ok": True, "handle": handle, "dims": list(mpm.grid.dims)}, []


def _get_session(header):
    handle = header.get("handle")
    if handle not in _sessions:
        raise ValidationError(f"unknown session handle {handle!r}")
    return _sessions[handle]


def op_simulate_batch(header, payloads):
    mpm, gold = _get_session(header)
    if header.get("preset") is not None:
        range_ = load_range(header["preset"])
    elif header.get("range") is not None:
        range_ = range_from_dict(header["range"])
    else:
        raise ValidationError("simulate_batch needs 'preset' or 'range'")
    patch = None
    if header.get("patch") is not None:
        ox, oy, oz, px, py, pz = (int(v) for v in header["patch"])
        patch = PatchSpec((ox, oy, oz), (px, py, pz))
    batch = make_stratified_batch(
        mpm,
        gold,
        range_,
        n=int(header["n"]),
        patch=patch,
        rng=RngStream(int(header.get("seed", 0)), int(header.get("stream", 0))),
        patch_size=tuple(header["patch_size"]) if header.get("patch_size") else None,
    )
    intensity = np.ascontiguousarray(batch.intensity_stack())
    physics = np.ascontiguousarray(batch.physics_matrix())
    target = np.ascontiguousarray(np.moveaxis(batch.target.probs, -1, 0))
    meta = {
        "ok": True,
        "shapes": {
            "intensity": list(intensity.shape),
            "physics": list(physics.shape),
            "target": list(target.shape),
        },
        "patch": [*batch.patch.origin, *batch.patch.size],
        "params": [
            {k: float(v) for k, v in vars(p).items()} | {"seq": p.seq}
            for p in (item.params for item in batch.items)
        ],
    }
    return meta, [intensity.tobytes(), physics.tobytes(), target.tobytes()]


def op_reference_losses(header, payloads):
    shapes = header["shapes"]
    logits = np.frombuffer(payloads[0], dtype="<f8").reshape(shapes["logits"])
    sigma = np.frombuffer(payloads[1], dtype="<f8").reshape(shapes["sigma"])
    target = np.frombuffer(payloads[2], dtype="<i8").reshape(shapes["target"])
    loss, _ = attenuated_ce_loss(
        logits,
        sigma,
        target,
        int(header["t_passes"]),
        RngStream(int(header.get("seed", 0)), int(header.get("stream", 0))),
    )
    strat = float("nan")
    if shapes.get("features") is not None:
        features = np.frombuffer(payloads[3], dtype="<f8").reshape(shapes["features"])
        strat = stratification_feature_loss(features)
    values = np.array([loss, strat], dtype="<f8")
    return {"ok": True, "attenuated_ce": loss, "stratification_loss": None if np.isnan(strat) else strat}, [values.tobytes()]


def op_release(header, payloads):
    handle = header.get("handle")
    released = _sessions.pop(handle, None) is not None
    return {"ok": True, "released": released}, []


def op_stats(header, payloads):
    rss = 0
    try:
        with open("/proc/self/statm") as f:
            rss = int(f.read().split()[1]) * 4096
    except OSError:
        pass
    return {"ok": True, "active_sessions": len(_sessions), "rss_bytes": rss}, []


_OPS = {
    "create_session": op_create_session,
    "simulate_batch": op_simulate_batch,
    "reference_losses": op_reference_losses,
    "release": op_release,
    "stats": op_stats,
}


def main():
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    while True:
        frame = read_frame(stdin)
        if frame is None:
            break
        header, payloads = frame
        op = header.get("op")
        if op == "shutdown":
            write_frame(stdout, {"ok": True})
            break
        handler = _OPS.get(op)
        try:
            if handler is None:
                raise ValidationError(f"unknown op {op!r}")
            meta, out_payloads = handler(header, payloads)
            write_frame(stdout, meta, out_payloads)
        except (ValidationError, PhysimriError) as exc:
            write_frame(stdout, {"ok": False, "error": {"type": "validation", "message": str(exc)}})
        except FileNotFoundError as exc:
            write_frame(stdout, {"ok": False, "error": {"type": "not_found", "message": str(exc)}})
        except Exception as exc:  # surface anything else without dying
            write_frame(stdout, {"ok": False, "error": {"type": "internal", "message": f"{type(exc).__name__}: {exc}"}})


if __name__ == "__main__":
    main()
