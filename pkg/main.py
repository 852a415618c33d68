from contextlib import asynccontextmanager
from datetime import datetime, timezone
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
import logging

from config import config
from routes import api_router
from store import connect_design_store, design_store

logging.basicConfig(level=config.settings.log_level)
logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    connect_design_store()
    yield


app = FastAPI(lifespan=lifespan, title="Integral Image Sensing API")

app.add_middleware(
    CORSMiddleware,
    allow_origins=config.cors_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(api_router, prefix="", tags=["Refine"])


@app.get("/health")
async def health_check():
    """Health check endpoint for deployment"""
    try:
        return {
            "status": "healthy",
            "design_loaded": design_store.is_available(),
            "environment": config.environment,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
    except Exception as e:
        raise HTTPException(status_code=503, detail=f"Service unhealthy: {str(e)}")


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8080)
