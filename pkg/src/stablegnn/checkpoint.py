"""Plain-text checkpoints.

Layout::

    # stablegnn checkpoint v1
    features = 1,64,1
    taps = 5
    activation = relu
    readout_taps = none
    lambda = 0.0              (optional trainer state, any key = value)
    matrix H <bank> <tap> <rows> <cols>
    <rows lines of cols floats>
    ...

Adam moments, when present, follow as ``matrix M ...`` and ``matrix V ...``
blocks with the same indexing.  Floats are written with ``repr`` so a
save/load round trip is exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import GnnConfig, GnnParams, ShapeMismatch
from .optim import AdamState

HEADER = "# stablegnn checkpoint v1"
_CONFIG_KEYS = ("features", "taps", "activation", "readout_taps")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: GnnParams
    meta: dict = field(default_factory=dict)
    adam: AdamState | None = None


def _write_matrices(fh, tag, banks):
    for l, bank in enumerate(banks):
        for k, mat in enumerate(bank):
            fh.write(f"matrix {tag} {l} {k} {mat.shape[0]} {mat.shape[1]}\n")
            for row in mat:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def save_checkpoint(path, params: GnnParams, meta: dict | None = None,
                    adam: AdamState | None = None) -> None:
    cfg = params.config
    meta = dict(meta or {})
    if adam is not None:
        meta.update({"adam.lr": adam.lr, "adam.beta1": adam.beta1, "adam.beta2": adam.beta2,
                     "adam.eps_hat": adam.eps_hat, "adam.step": adam.step})
    with open(path, "w") as fh:
        fh.write(HEADER + "\n")
        fh.write(f"features = {','.join(map(str, cfg.features))}\n")
        fh.write(f"taps = {cfg.taps}\n")
        fh.write(f"activation = {cfg.activation}\n")
        fh.write(f"readout_taps = {'none' if cfg.readout_taps is None else cfg.readout_taps}\n")
        for key, val in meta.items():
            fh.write(f"{key} = {val!r}\n" if isinstance(val, float) else f"{key} = {val}\n")
        _write_matrices(fh, "H", params.h)
        if adam is not None and adam.m:
            _write_matrices(fh, "M", adam.m)
            _write_matrices(fh, "V", adam.v)


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return None if text == "none" else text


def load_checkpoint(path, config: GnnConfig | None = None) -> Checkpoint:
    """Read a checkpoint; if ``config`` is given, its shapes must match the file."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise CheckpointError(f"{path}: not a stablegnn checkpoint")
    head, mats = {}, {"H": {}, "M": {}, "V": {}}
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if line.startswith("matrix "):
            try:
                _, tag, l, k, r, c = line.split()
                r, c = int(r), int(c)
                rows = [np.array(lines[i + j].split(), dtype=np.float64) for j in range(r)]
                mat = np.vstack(rows) if r else np.zeros((0, c))
            except (ValueError, IndexError):
                raise CheckpointError(f"{path}: malformed block at line {i}") from None
            if tag not in mats:
                raise CheckpointError(f"{path}: unknown matrix tag {tag!r}")
            i += r
            if mat.shape != (r, c):
                raise CheckpointError(f"{path}: matrix {tag} {l} {k} is not {r}x{c}")
            mats[tag][(int(l), int(k))] = mat
        else:
            key, _, val = line.partition("=")
            head[key.strip()] = val.strip()
    try:
        stored = GnnConfig(
            features=tuple(int(v) for v in head["features"].split(",")),
            taps=int(head["taps"]),
            activation=head["activation"],
            readout_taps=None if head["readout_taps"] == "none" else int(head["readout_taps"]),
        )
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing header key {exc}") from None
    if config is not None and config != stored:
        raise ShapeMismatch(
            f"checkpoint architecture features={list(stored.features)} taps={stored.taps} "
            f"readout_taps={stored.readout_taps} does not match configured "
            f"features={list(config.features)} taps={config.taps} "
            f"readout_taps={config.readout_taps}; bank shapes "
            f"{stored.bank_shapes()} vs {config.bank_shapes()}")

    def banks(tag):
        out = []
        for l, (k, fin, fout) in enumerate(stored.bank_shapes()):
            try:
                taps = [mats[tag][(l, j)] for j in range(k)]
            except KeyError:
                raise CheckpointError(f"{path}: missing {tag} matrices for bank {l}") from None
            for j, t in enumerate(taps):
                if t.shape != (fin, fout):
                    raise ShapeMismatch(
                        f"{path}: {tag}[{l}][{j}] has shape {t.shape}, expected {(fin, fout)}")
            out.append(np.stack(taps))
        return out

    params = GnnParams(stored, banks("H"))
    meta = {k: _parse_scalar(v) for k, v in head.items() if k not in _CONFIG_KEYS}
    adam = None
    if mats["M"]:
        adam = AdamState(lr=float(meta.pop("adam.lr")), beta1=float(meta.pop("adam.beta1")),
                         beta2=float(meta.pop("adam.beta2")),
                         eps_hat=float(meta.pop("adam.eps_hat")),
                         step=int(meta.pop("adam.step")), m=banks("M"), v=banks("V"))
    return Checkpoint(params, meta, adam)
