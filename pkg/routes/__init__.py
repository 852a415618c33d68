from fastapi import APIRouter
from routes.design import router as design_router
from routes.estimate import router as estimate_router

api_router = APIRouter()

api_router.include_router(design_router, prefix="/design", tags=["Design"])
api_router.include_router(estimate_router, prefix="", tags=["Estimate"])
