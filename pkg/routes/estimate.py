from fastapi import APIRouter, HTTPException, Form, UploadFile, File
import asyncio
import logging
import time
from typing import List

from models.design import SensingOperatorPair
from models.evaluation import EstimateResponse, SenseResponse
from services.image_io import load_grayscale_bytes
from services.refine_pipeline import estimate_integral, sense
from services.transforms import (
    box_filter_from_integral,
    crop_to_layout,
    integral_transform,
    make_block_layout,
    rsnr,
)
from store import design_store
from utils.errors import RefineError
from utils.serialize import serialize_for_json

logger = logging.getLogger(__name__)

router = APIRouter()


def _parse_filters(filters: str) -> List[int]:
    try:
        return [int(k) for k in filters.split(",") if k.strip()]
    except ValueError:
        raise HTTPException(status_code=400, detail=f"Invalid filter list: {filters}")


def _operator(m_rank: int, identity: bool) -> SensingOperatorPair:
    try:
        if identity:
            return SensingOperatorPair.identity(design_store.load().block_side)
        return design_store.operator(m_rank)
    except FileNotFoundError as e:
        raise HTTPException(status_code=503, detail=f"No active design: {str(e)}")
    except RefineError as e:
        raise HTTPException(status_code=400, detail=str(e))


async def run_blocking(func, *args, **kwargs):
    loop = asyncio.get_running_loop()
    return await loop.run_in_executor(None, lambda: func(*args, **kwargs))


def _estimate(image, op: SensingOperatorPair, filters: List[int]) -> dict:
    layout = make_block_layout(image.shape[0], image.shape[1], op.block_side)
    exact = integral_transform(crop_to_layout(image, layout), layout.integral)
    meas = sense(image, op, layout)

    start = time.perf_counter()
    estimate = estimate_integral(meas, op, layout)
    elapsed = time.perf_counter() - start

    return {
        "layout": layout,
        "rsnr_integral": rsnr(estimate, exact),
        "rsnr_box": {
            str(k): rsnr(box_filter_from_integral(estimate, k), box_filter_from_integral(exact, k))
            for k in filters
        },
        "elapsed": elapsed,
    }


@router.post("/estimate", response_model=EstimateResponse)
async def estimate_image(
    file: UploadFile = File(...),
    m_rank: int = Form(20),
    filters: str = Form("3,5,7"),
    identity: bool = Form(False),
):
    """
    Sense an uploaded grayscale image with the rank-M design operator and
    report the RSNR of the recovered integral image and box-filter outputs.
    """
    contents = await file.read()
    logger.info(f"Received file: {file.filename} of size {len(contents)} bytes")
    filter_sizes = _parse_filters(filters)
    op = _operator(m_rank, identity)

    try:
        image = load_grayscale_bytes(contents)
        result = await run_blocking(_estimate, image, op, filter_sizes)
    except RefineError as e:
        logger.error(f"Estimation failed: {e}")
        raise HTTPException(status_code=400, detail=str(e))

    layout = result["layout"]
    payload = {
        "operator_id": op.operator_id,
        "m_rank": op.rank,
        "block_side": op.block_side,
        "measurement_rate": op.measurement_rate,
        "image_rows": layout.image_rows,
        "image_cols": layout.image_cols,
        "rsnr_integral": result["rsnr_integral"],
        "rsnr_box": result["rsnr_box"],
        "estimate_time_s": result["elapsed"],
    }
    return EstimateResponse(**serialize_for_json(payload))


@router.post("/sense", response_model=SenseResponse)
async def sense_image(
    file: UploadFile = File(...),
    m_rank: int = Form(20),
):
    """Per-block measurement vectors of an uploaded image"""
    contents = await file.read()
    op = _operator(m_rank, False)

    try:
        image = load_grayscale_bytes(contents)
        layout = make_block_layout(image.shape[0], image.shape[1], op.block_side)
        meas = sense(image, op, layout)
    except RefineError as e:
        raise HTTPException(status_code=400, detail=str(e))

    return SenseResponse(
        operator_id=meas.operator_id,
        m_rank=op.rank,
        block_side=op.block_side,
        image_rows=layout.image_rows,
        image_cols=layout.image_cols,
        crop_top=layout.crop_top,
        crop_left=layout.crop_left,
        measurements=meas.per_block.tolist(),
    )
