from netprompt.tspredict.data import (
    IngestError,
    MinMaxScaler,
    RawCells,
    SchemaError,
    SplitError,
    SplitSpec,
    TrafficSeries,
    aggregate_grid,
    ingest_milan,
    split_series,
    synthetic_cells,
    write_milan_file,
)
from netprompt.tspredict.feedback import (
    FeedbackReport,
    HarmonicFit,
    compute_feedback,
    harmonic_fit,
    render_feedback_and_refinement,
)
from netprompt.tspredict.prompts import (
    Forecast,
    ForecastParseError,
    PromptSet,
    parse_forecast,
    render_prediction_prompts,
)
from netprompt.tspredict.refine import (
    DayLog,
    ForecastDay,
    RefineConfig,
    RefineLog,
    make_days,
    refine_day,
    run_plain_prompt,
    run_self_refine,
)

__all__ = [
    "DayLog", "FeedbackReport", "Forecast", "ForecastDay", "ForecastParseError", "HarmonicFit", "IngestError",
    "MinMaxScaler", "PromptSet", "RawCells", "RefineConfig", "RefineLog", "SchemaError", "SplitError",
    "SplitSpec", "TrafficSeries", "aggregate_grid", "compute_feedback", "harmonic_fit", "ingest_milan",
    "make_days", "parse_forecast", "refine_day", "render_feedback_and_refinement", "render_prediction_prompts",
    "run_plain_prompt", "run_self_refine", "split_series", "synthetic_cells", "write_milan_file",
]
