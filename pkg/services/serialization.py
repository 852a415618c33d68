"""
Binary artifacts and CSV reports.

Every binary file starts with a 16-byte header: the magic b"RFNE", a
4-byte kind tag (DSGN, OPER, MEAS, MGGD), the format version and a
reserved word (both unsigned 32-bit little-endian). Dimensions follow as
unsigned 32-bit little-endian integers, then each matrix in row-major
order as 64-bit little-endian floats.
"""
import csv
import logging
import os
import struct
from typing import Iterable, List, Sequence

import numpy as np

from models.design import SensingDesign, SensingOperatorPair, SvtHistoryEntry
from models.evaluation import EvalRecord, EvalSummaryRow
from models.ggd import BetaFitReport, MggdModel
from models.pipeline import DeltaTargets, Measurements
from models.transforms import BlockLayout
from utils.errors import FormatError

logger = logging.getLogger(__name__)

MAGIC = b"RFNE"
FORMAT_VERSION = 1
KIND_DESIGN = b"DSGN"
KIND_OPERATOR = b"OPER"
KIND_MEASUREMENTS = b"MEAS"
KIND_MODEL = b"MGGD"

_HEADER = struct.Struct("<4s4sII")


def _header(kind: bytes) -> bytes:
    return _HEADER.pack(MAGIC, kind, FORMAT_VERSION, 0)


def _floats(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, data: bytes, kind: bytes, path: str):
        self.data = data
        self.path = path
        self.offset = 0
        if len(data) < _HEADER.size:
            raise FormatError(f"{path}: file too short for a header")
        magic, found, version, _ = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if found != kind:
            raise FormatError(f"{path}: expected a {kind.decode()} file, found {found!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        self.offset = _HEADER.size

    def _take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise FormatError(f"{self.path}: truncated at byte {self.offset}")
        chunk = self.data[self.offset: self.offset + size]
        self.offset += size
        return chunk

    def uints(self, count: int) -> tuple:
        return struct.unpack(f"<{count}I", self._take(4 * count))

    def raw(self, size: int) -> bytes:
        return self._take(size)

    def floats(self, *shape: int) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self._take(8 * count), dtype="<f8").astype(float).reshape(shape)

    def finish(self):
        if self.offset != len(self.data):
            raise FormatError(f"{self.path}: {len(self.data) - self.offset} trailing bytes")


def _write(path: str, payload: bytes):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(payload)
    logger.debug(f"Wrote {len(payload)} bytes to {path}")


def _read(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def write_design(path: str, design: SensingDesign):
    n = design.n
    payload = b"".join([
        _header(KIND_DESIGN),
        struct.pack("<4I", n, design.rank_p, design.rank_q, int(design.converged)),
        _floats(design.q),
        _floats(design.left_vectors),
        _floats(design.right_vectors),
        _floats(design.feasibility_margins),
        _floats(np.array([design.ones_residual])),
        _floats(design.singular_values),
    ])
    _write(path, payload)


def read_design(path: str) -> SensingDesign:
    reader = _Reader(_read(path), KIND_DESIGN, path)
    n, rank_p, rank_q, converged = reader.uints(4)
    q = reader.floats(n, n)
    left = reader.floats(n, n)
    right = reader.floats(n, n)
    margins = reader.floats(n)
    ones_residual = float(reader.floats(1)[0])
    singular_values = reader.floats(n)
    reader.finish()
    return SensingDesign(
        q=q,
        singular_values=singular_values,
        left_vectors=left,
        right_vectors=right,
        feasibility_margins=margins,
        rank_p=rank_p,
        rank_q=rank_q,
        ones_residual=ones_residual,
        converged=bool(converged),
    )


def write_operator(path: str, op: SensingOperatorPair):
    has_values = op.singular_values is not None
    payload = [
        _header(KIND_OPERATOR),
        struct.pack("<4I", op.rank, op.n, op.block_side, int(has_values)),
        _floats(op.phi),
        _floats(op.phi_dual),
    ]
    if has_values:
        payload.append(_floats(op.singular_values))
    _write(path, b"".join(payload))


def read_operator(path: str) -> SensingOperatorPair:
    reader = _Reader(_read(path), KIND_OPERATOR, path)
    rank, n, block_side, has_values = reader.uints(4)
    phi = reader.floats(rank, n)
    phi_dual = reader.floats(rank, n)
    values = reader.floats(rank) if has_values else None
    reader.finish()
    return SensingOperatorPair(phi=phi, phi_dual=phi_dual, rank=rank, block_side=block_side,
                               singular_values=values)


def write_measurements(path: str, meas: Measurements):
    layout = meas.layout
    payload = b"".join([
        _header(KIND_MEASUREMENTS),
        struct.pack("<9I", layout.image_rows, layout.image_cols, layout.block_side, meas.rank,
                    layout.block_count, layout.source_rows, layout.source_cols,
                    layout.crop_top, layout.crop_left),
        bytes.fromhex(meas.operator_id),
        _floats(meas.per_block),
    ])
    _write(path, payload)


def read_measurements(path: str) -> Measurements:
    reader = _Reader(_read(path), KIND_MEASUREMENTS, path)
    rows, cols, block_side, rank, blocks, source_rows, source_cols, top, left = reader.uints(9)
    digest = reader.raw(16)
    per_block = reader.floats(blocks, rank)
    reader.finish()
    layout = BlockLayout(image_rows=rows, image_cols=cols, block_side=block_side,
                         source_rows=source_rows, source_cols=source_cols,
                         crop_top=top, crop_left=left)
    return Measurements(per_block=per_block, layout=layout, operator_id=digest.hex())


def write_model(path: str, model: MggdModel):
    payload = b"".join([
        _header(KIND_MODEL),
        struct.pack("<I", model.dim),
        _floats(np.array([model.beta, model.factor])),
        _floats(model.scatter),
    ])
    _write(path, payload)


def read_model(path: str) -> MggdModel:
    reader = _Reader(_read(path), KIND_MODEL, path)
    (dim,) = reader.uints(1)
    beta, factor = (float(v) for v in reader.floats(2))
    scatter = reader.floats(dim, dim)
    reader.finish()
    return MggdModel(beta=beta, scatter=scatter, factor=factor)


# CSV reports

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_csv(path: str) -> List[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_beta_report_csv(path: str, report: BetaFitReport):
    write_csv(path, ["beta", "distance"], zip(report.beta_grid, report.distances))


def write_delta_csv(path: str, targets: DeltaTargets):
    write_csv(path, ["index", "delta"], enumerate(targets.delta))


def write_design_summary_csv(path: str, design: SensingDesign):
    lam = design.singular_values
    top = lam[0] if lam.size and lam[0] > 0 else 1.0
    write_csv(
        path,
        ["index", "singular_value", "relative_singular_value", "feasibility_margin"],
        ((i, lam[i], lam[i] / top, design.feasibility_margins[i]) for i in range(design.n)),
    )


def write_design_info_csv(path: str, info: dict):
    write_csv(path, ["key", "value"], sorted(info.items()))


def write_history_csv(path: str, history: Sequence[SvtHistoryEntry]):
    write_csv(path, ["iteration", "violation", "rel_change", "nuclear_norm"],
              ((h.iteration, h.violation, h.rel_change, h.nuclear_norm) for h in history))


def eval_columns(filters: Sequence[int]) -> List[str]:
    return (["image_id", "method", "m_rank", "block_side", "measurement_rate", "rsnr_integral"]
            + [f"rsnr_box_k{k}" for k in filters]
            + ["estimate_time_s"])


def summary_columns(filters: Sequence[int]) -> List[str]:
    return (["method", "m_rank", "block_side", "measurement_rate", "images", "mean_rsnr_integral"]
            + [f"mean_rsnr_box_k{k}" for k in filters]
            + ["mean_estimate_time_s"])


def write_eval_records_csv(path: str, records: Sequence[EvalRecord], filters: Sequence[int]):
    columns = eval_columns(filters)
    rows = []
    for r in records:
        row = [r.image_id, r.method, r.m_rank, r.block_side, r.measurement_rate, r.rsnr_integral]
        row += [r.rsnr_box.get(k, float("nan")) for k in filters]
        row.append(r.estimate_time_s)
        rows.append(row)
    write_csv(path, columns, rows)


def write_summary_csv(path: str, summary: Sequence[EvalSummaryRow], filters: Sequence[int]):
    columns = summary_columns(filters)
    rows = []
    for s in summary:
        row = [s.method, s.m_rank, s.block_side, s.measurement_rate, s.images, s.mean_rsnr_integral]
        row += [s.mean_rsnr_box.get(k, float("nan")) for k in filters]
        row.append(s.mean_estimate_time_s)
        rows.append(row)
    write_csv(path, columns, rows)
