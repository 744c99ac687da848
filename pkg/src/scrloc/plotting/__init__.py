from scrloc.plotting.calibration import plot_error_distributions, plot_error_field, plot_region_max
from scrloc.plotting.detection import plot_center_errors, plot_detections

__all__ = [
    'plot_error_distributions',
    'plot_error_field',
    'plot_region_max',
    'plot_center_errors',
    'plot_detections',
]
