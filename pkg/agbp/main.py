import uvicorn
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware

from agbp.config import configure_logging, get_logger, settings
from agbp.errors import AgbpError
from agbp.schemas import AnalysisReport, AnalyzeRequest, RunRequest, RunSummary
from agbp.workflows import analyze_model, execute_run, resolve_model

configure_logging()
logger = get_logger(__name__)

app = FastAPI(
    title=settings.app_name,
    version="0.3.0",
    description="Gaussian belief propagation runs and convergence analysis for sparse linear models.",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.get("/healthz")
def healthz():
    return {"status": "ok"}


@app.post("/run", response_model=RunSummary)
def run(req: RunRequest):
    try:
        model, partition, seed = resolve_model(req)
        result = execute_run(model, partition, req, seed)
        return RunSummary(**result.summary())
    except (AgbpError, ValueError) as e:
        logger.warning("run rejected: %s", e)
        raise HTTPException(status_code=400, detail=str(e))


@app.post("/analyze", response_model=AnalysisReport)
def analyze(req: AnalyzeRequest):
    try:
        model, _, _ = resolve_model(req)
        return analyze_model(model, req.method)
    except (AgbpError, ValueError) as e:
        logger.warning("analysis rejected: %s", e)
        raise HTTPException(status_code=400, detail=str(e))


if __name__ == "__main__":
    uvicorn.run("agbp.main:app", host=settings.host, port=settings.port, reload=False)
