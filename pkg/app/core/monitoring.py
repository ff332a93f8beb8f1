"""
Monitoring and Observability Module
Integrates Prometheus metrics, structured logging, and training/inference tracking
"""

from prometheus_client import Counter, Histogram, Gauge, Info, REGISTRY, write_to_textfile
from pythonjsonlogger import jsonlogger
import logging
import sys
from typing import Optional

# ============================================================================
# PROMETHEUS METRICS
# ============================================================================

# Training Metrics
training_steps_total = Counter(
    'training_steps_total',
    'Total optimizer steps',
    ['stage']  # embedder, head
)

training_epoch_loss = Gauge(
    'training_epoch_loss',
    'Mean loss of the last finished epoch',
    ['stage']
)

training_active_triplet_fraction = Gauge(
    'training_active_triplet_fraction',
    'Fraction of mined triplets with positive hinge in the last epoch'
)

# Inference Metrics
inference_seconds = Histogram(
    'inference_seconds',
    'Embedding inference duration in seconds',
    ['path'],  # float, quantized
    buckets=(0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5)
)

knn_queries_total = Counter(
    'knn_queries_total',
    'Total KNN query rows answered'
)

knn_k_clamped_total = Counter(
    'knn_k_clamped_total',
    'KNN queries whose k exceeded the index size'
)

# Model Metrics
model_file_bytes = Gauge(
    'model_file_bytes',
    'Size of the last written model file',
    ['kind']  # float, quantized, head, index, bundle
)

# System Metrics
system_info = Info(
    'system',
    'System information'
)

# Error Metrics
errors_total = Counter(
    'errors_total',
    'Total errors',
    ['error_code']
)


# ============================================================================
# METRICS TRACKING HELPERS
# ============================================================================

class MetricsTracker:
    """Helper class for tracking custom metrics"""

    @staticmethod
    def track_step(stage: str):
        training_steps_total.labels(stage=stage).inc()

    @staticmethod
    def track_epoch(stage: str, mean_loss: float, active_fraction: Optional[float] = None):
        """Track end-of-epoch statistics"""
        training_epoch_loss.labels(stage=stage).set(mean_loss)
        if active_fraction is not None:
            training_active_triplet_fraction.set(active_fraction)

    @staticmethod
    def track_inference(path: str, duration: float):
        inference_seconds.labels(path=path).observe(duration)

    @staticmethod
    def track_knn(queries: int, clamped: bool):
        knn_queries_total.inc(queries)
        if clamped:
            knn_k_clamped_total.inc()

    @staticmethod
    def track_model_file(kind: str, size: int):
        model_file_bytes.labels(kind=kind).set(size)

    @staticmethod
    def track_error(error_code: str):
        errors_total.labels(error_code=error_code).inc()

    @staticmethod
    def set_system_info(version: str, python_version: str, numpy_version: str):
        """Set system information"""
        system_info.info({
            'version': version,
            'python_version': python_version,
            'numpy_version': numpy_version
        })

    @staticmethod
    def export(path: str):
        """Write every registered metric in Prometheus text format"""
        write_to_textfile(path, REGISTRY)


# ============================================================================
# STRUCTURED LOGGING
# ============================================================================

def setup_logging(level: str = "INFO", json_format: bool = True) -> None:
    """Route all records to stderr, JSON-formatted unless disabled"""
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_tripletleaf", False):
            root.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler._tripletleaf = True  # type: ignore[attr-defined]
    if json_format:
        formatter: logging.Formatter = jsonlogger.JsonFormatter(
            '%(asctime)s %(levelname)s %(name)s %(message)s',
            rename_fields={'asctime': 'timestamp', 'levelname': 'level', 'name': 'logger'}
        )
    else:
        formatter = logging.Formatter('%(asctime)s %(levelname)s %(name)s: %(message)s')
    handler.setFormatter(formatter)
    root.addHandler(handler)
    root.setLevel(level)


# Global metrics tracker instance
metrics_tracker = MetricsTracker()
