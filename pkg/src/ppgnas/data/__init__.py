"""Dataset ingestion, preprocessing, subject-wise splits and metrics."""
from .preprocess import extract_labels, resample, resample_record, window, windows_from_records, zscore
from .records import (TARGET_FS, Record, WindowSet, load_windows, read_ndjson, round_half_up, save_windows,
                      write_ndjson)
from .splits import Split, mae, split_per_subject, subject_folds
from .synth import synth_generate

__all__ = [
    "TARGET_FS", "Record", "Split", "WindowSet", "extract_labels", "load_windows", "mae", "read_ndjson",
    "resample", "resample_record", "round_half_up", "save_windows", "split_per_subject", "subject_folds",
    "synth_generate", "window", "windows_from_records", "write_ndjson", "zscore",
]
