"""Shared problem-scale constants: horizons, sampling rates, widths."""

T_H = 20            # history frames (2.0 s at 10 Hz)
T_F = 8             # future frames (4.0 s at 2 Hz)
HISTORY_HZ = 10.0
FUTURE_HZ = 2.0
HIDDEN = 64         # common hidden width

# trajectory head
GRID_N = 15         # candidate lattice is GRID_N x GRID_N (odd, origin included)
GRID_EXTENT_M = 6.0
NUM_HYPOTHESES = 6
NMS_THRESHOLD_M = 1.0
SCORE_ALPHA_M = 1.0  # max-entropy teacher temperature (meters)

# auxiliary tasks
SEGMENTS = 4        # jigsaw segment count S (label space S! = 24)
