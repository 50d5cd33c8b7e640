"""Multi-task pedestrian crossing recognition and trajectory prediction from
3D human keypoints, history tracks and roadgraph polylines."""

__version__ = "0.1.0"
