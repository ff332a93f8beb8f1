from app.api.commands import data, evaluation, inference, quantization, training
from app.api.dependencies import COMMON_OPTIONS
from app.api.routing import CommandRouter

api_router = CommandRouter()

# Include routers
api_router.include_router(data.router, group="Data")
api_router.include_router(training.router, group="Training")
api_router.include_router(evaluation.router, group="Evaluation")
api_router.include_router(quantization.router, group="Quantization")
api_router.include_router(inference.router, group="Inference")


def build_parser(prog: str = "tripletleaf"):
    """Top-level parser plus the per-command subparsers (used for config files)"""
    return api_router.build_parser(prog, common=COMMON_OPTIONS)
