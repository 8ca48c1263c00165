from netprompt.harness.metrics import MetricInputError, mae, mse, service_quality, smooth
from netprompt.harness.report import Report, build_report

__all__ = ["MetricInputError", "Report", "build_report", "mae", "mse", "service_quality", "smooth"]
