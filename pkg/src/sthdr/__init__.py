"""Scale-aware two-stage multi-exposure HDR fusion."""

__version__ = "0.1.0"
