"""
Prediction service: API routes and the FastAPI application.
"""
import io
from contextlib import asynccontextmanager
from typing import Annotated

from fastapi import APIRouter, FastAPI, File, Form, HTTPException, UploadFile

from orlearners.config import get_settings
from orlearners.data import read_covariates
from orlearners.errors import ValidationFailure
from orlearners.logging_config import get_logger
from orlearners.services.target_store import get_target_store

logger = get_logger(__name__)
router = APIRouter()

ALLOWED_EXTENSIONS = ("csv",)


def validate_csv_file(file: UploadFile) -> None:
    """
    Raises:
        HTTPException: 400 when the upload has no name or is not a CSV file
    """
    if not file.filename:
        raise HTTPException(status_code=400, detail="No filename provided")
    extension = file.filename.rsplit(".", 1)[-1].lower() if "." in file.filename else ""
    if extension not in ALLOWED_EXTENSIONS:
        raise HTTPException(
            status_code=400,
            detail=f"Unsupported file type: .{extension}. Allowed: {', '.join(ALLOWED_EXTENSIONS)}"
        )


async def validate_file_size(file: UploadFile) -> bytes:
    """
    Read the upload and check its size; the content-length header is not trusted.

    Raises:
        HTTPException: 413 if file too large
    """
    settings = get_settings()
    content = await file.read()
    if len(content) > settings.max_upload_bytes:
        raise HTTPException(
            status_code=413,
            detail=f"File too large. Maximum size: {settings.max_upload_mb}MB"
        )
    return content


@router.get("/")
async def health_check():
    """Service status with available and already loaded bundles."""
    store = get_target_store()
    available = store.list_available()
    loaded = store.list_loaded()
    return {
        "status": "healthy",
        "service": "orlearners-prediction-api",
        "available_models": available,
        "loaded_models": loaded,
        "message": f"{len(loaded)}/{len(available)} models loaded. Others load on first use."
    }


@router.get("/models")
async def list_models():
    return {"models": get_target_store().list_available()}


@router.post("/predict")
async def predict(
    file: Annotated[UploadFile, File(description="CSV with covariate columns x_0..x_{d-1}")],
    model: Annotated[str, Form(description="Name of a saved target bundle")],
) -> dict:
    """
    Predict the bundle's target quantity (CAPO or CATE) for every CSV row.

    Errors:
        - 400: unknown model, unreadable CSV, or wrong number of covariates
        - 413: file too large
        - 500: prediction failure
    """
    logger.info(f"Received request: model={model}, filename={file.filename}")
    validate_csv_file(file)
    content = await validate_file_size(file)

    store = get_target_store()
    available = store.list_available()
    if model not in available:
        raise HTTPException(
            status_code=400,
            detail=f"Unsupported model: '{model}'. Available: {', '.join(available) or 'none'}"
        )

    try:
        X = read_covariates(io.BytesIO(content))
    except ValidationFailure as e:
        logger.error(f"Failed to read upload: {e}")
        raise HTTPException(status_code=400, detail=f"Invalid CSV file: {e}") from e

    try:
        target = store.get(model)
        predictions = target.predict(X)
    except ValidationFailure as e:
        raise HTTPException(status_code=400, detail=str(e)) from e
    except Exception as e:
        logger.error(f"Prediction failed: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Prediction failed: {e}") from e

    logger.info(f"Predicted {target.quantity.value} for {len(predictions)} rows with {model}")
    return {
        "model": model,
        "quantity": target.quantity.value,
        "n": int(len(predictions)),
        "predictions": [float(value) for value in predictions],
    }


@asynccontextmanager
async def lifespan(app: FastAPI):
    settings = get_settings()
    logger.info(f"Starting prediction service on {settings.host}:{settings.port}")
    logger.info(f"Serving bundles from {get_target_store().root}")
    yield
    get_target_store().clear()
    logger.info("Shutting down prediction service...")


def create_app() -> FastAPI:
    app = FastAPI(title="OR-learner Prediction API", version="1.0.0", lifespan=lifespan)
    app.include_router(router)
    return app
