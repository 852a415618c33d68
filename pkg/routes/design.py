from fastapi import APIRouter, HTTPException
import logging
import numpy as np

from models.evaluation import DesignInfoResponse
from store import design_store

logger = logging.getLogger(__name__)

router = APIRouter()


@router.get("", response_model=DesignInfoResponse)
async def get_design_info(head: int = 10):
    """Summary of the active sensing design"""
    try:
        design = design_store.load()
    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except Exception as e:
        logger.error(f"Error loading design: {e}")
        raise HTTPException(status_code=503, detail=f"Design unavailable: {str(e)}")

    return DesignInfoResponse(
        block_side=design.block_side,
        n=design.n,
        rank_p=design.rank_p,
        rank_q=design.rank_q,
        converged=design.converged,
        ones_residual=design.ones_residual,
        max_feasibility_margin=float(np.max(design.feasibility_margins)),
        singular_values_head=[float(v) for v in design.singular_values[: max(head, 0)]],
    )


@router.post("/reload", response_model=DesignInfoResponse)
async def reload_design():
    try:
        design_store.reload()
    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    return await get_design_info()
