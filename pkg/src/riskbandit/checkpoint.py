"""Checkpoint files: a numpy ``.npz`` archive plus a JSON header.

The header stores a format version and a SHA-256 digest over every array
(name, dtype, shape and bytes, in sorted name order); loading recomputes
the digest and refuses files that do not match.
"""
import hashlib
import io
import json
import os

import numpy as np

from .errors import CheckpointError

FORMAT = "riskbandit-checkpoint"
VERSION = 1
_META_KEY = "__meta__"


def _digest(arrays):
    h = hashlib.sha256()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def save(path, meta, arrays):
    arrays = {k: np.asarray(v) for k, v in arrays.items()}
    header = {"format": FORMAT, "version": VERSION, "digest": _digest(arrays), "meta": meta}
    blob = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays, **{_META_KEY: blob})
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load(path):
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
        header = json.loads(arrays.pop(_META_KEY).tobytes().decode())
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    if _digest(arrays) != header.get("digest"):
        raise CheckpointError(f"{path}: integrity check failed")
    return header["meta"], arrays


def agent_state(agent):
    """Everything mutable about an agent, split into JSON metadata and arrays."""
    arrays = {}
    for i, net in enumerate(agent.networks()):
        for j, p in enumerate(net.params):
            arrays[f"net{i}_p{j}"] = p
    steps = []
    for i, opt in enumerate(agent.optimizers()):
        for j, a in enumerate(opt.state_arrays()):
            arrays[f"opt{i}_s{j}"] = a
        steps.append(opt.t)
    buf = agent.buffer
    arrays.update({"noise_x": agent.noise.x, "buf_s": buf.s, "buf_a": buf.a, "buf_c": buf.c})
    meta = {
        "kind": agent.kind,
        "opt_steps": steps,
        "buf_ptr": buf.ptr,
        "buf_size": buf.size,
        "discarded": agent.discarded,
        "updates": agent.updates,
        "noise_rng": agent.noise.rng.bit_generator.state,
        "replay_rng": agent.replay_rng.bit_generator.state,
        "dims": [agent.context_dim, agent.action_dim, agent.M],
    }
    return meta, arrays


def restore_agent(agent, meta, arrays):
    if meta["kind"] != agent.kind:
        raise CheckpointError(f"checkpoint holds a {meta['kind']} agent, not {agent.kind}")
    if list(meta["dims"]) != [agent.context_dim, agent.action_dim, agent.M]:
        raise CheckpointError("checkpoint dimensions do not match the agent")
    try:
        for i, net in enumerate(agent.networks()):
            for j, p in enumerate(net.params):
                src = arrays[f"net{i}_p{j}"]
                if src.shape != p.shape:
                    raise CheckpointError(f"parameter net{i}_p{j} has shape {src.shape}, "
                                          f"expected {p.shape}")
                p[...] = src
        for i, opt in enumerate(agent.optimizers()):
            n = len(opt.state_arrays())
            opt.load_state_arrays([arrays[f"opt{i}_s{j}"] for j in range(n)],
                                  meta["opt_steps"][i])
        agent.noise.x = np.array(arrays["noise_x"])
        buf = agent.buffer
        buf.s[...] = arrays["buf_s"]
        buf.a[...] = arrays["buf_a"]
        buf.c[...] = arrays["buf_c"]
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing array {exc}") from exc
    except ValueError as exc:
        raise CheckpointError(f"checkpoint arrays do not fit the agent: {exc}") from exc
    buf.ptr, buf.size = int(meta["buf_ptr"]), int(meta["buf_size"])
    agent.discarded = int(meta["discarded"])
    agent.updates = int(meta["updates"])
    agent.noise.rng.bit_generator.state = meta["noise_rng"]
    agent.replay_rng.bit_generator.state = meta["replay_rng"]
