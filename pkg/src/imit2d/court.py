"""Court frame and the synthetic broadcast camera.

Court frame: origin at the court centre on the ground, x along the length
towards the far baseline, y across, z up. The robot defends the near half
(x < 0).
"""
import numpy as np

from imit2d.geometry import CameraModel

COURT_LENGTH = 23.77
COURT_WIDTH = 10.97
HALF_LENGTH = COURT_LENGTH / 2.0
HALF_WIDTH = COURT_WIDTH / 2.0
NEAR_BASELINE_X = -HALF_LENGTH
START_POSE = (NEAR_BASELINE_X, 0.0, 0.0)

IMAGE_WIDTH = 1280
IMAGE_HEIGHT = 720


def broadcast_camera(height=12.0, distance=20.0, aim_x=-4.0, fx=800.0, lateral=0.0):
    """Elevated camera behind the near baseline, as in a TV broadcast."""
    eye = (NEAR_BASELINE_X - distance, lateral, height)
    return CameraModel.look_at(eye, (aim_x, 0.0, 0.0), fx, fx, IMAGE_WIDTH / 2.0, IMAGE_HEIGHT / 2.0)


def court_keypoints():
    """Corner and service-line points used for homography calibration."""
    xs = [-HALF_LENGTH, -6.40, 0.0, 6.40, HALF_LENGTH]
    ys = [-HALF_WIDTH, -4.115, 0.0, 4.115, HALF_WIDTH]
    return np.array([(x, y) for x in xs for y in ys])


def in_court_bounds(xy, margin=2.0):
    xy = np.atleast_2d(xy)
    return (np.abs(xy[:, 0]) <= HALF_LENGTH + margin) & (np.abs(xy[:, 1]) <= HALF_WIDTH + margin)
