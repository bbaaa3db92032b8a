"""Maritime track anomaly detection with a variational recurrent normalcy model
and a geospatial a contrario decision rule."""

__version__ = "0.1.0"
