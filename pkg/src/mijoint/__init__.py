"""Joint-training study toolkit for asynchronous motor-imagery EEG."""

__version__ = "0.1.0"
