from scrloc.tools import imgproc, detect, calib, metrics
