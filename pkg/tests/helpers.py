"""Small builders shared by the test modules."""

import numpy as np

from damage25d.camera import CameraView, look_at


def simple_view(hm=None, width=100, height=100, f=100.0, R=None, t=None, name="v"):
    R = np.eye(3) if R is None else R
    t = np.zeros(3) if t is None else t
    return CameraView(name, width, height, f, f, width / 2, height / 2, R, t, heatmaps=hm)


def facing_view(center, target=(0, 0, 0), width=200, height=200, f=200.0, hm=None, name="v"):
    R, t = look_at(center, target)
    return CameraView(name, width, height, f, f, width / 2, height / 2, R, t, heatmaps=hm, heatmap_prefix=name)


def one_hot(label_img, n_classes):
    return (np.arange(n_classes)[:, None, None] == label_img[None]).astype(np.float64)


# criterion number -> (title, passed, detail), filled by the acceptance suite
ACCEPTANCE = {}


def record_criterion(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    print(f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})")
