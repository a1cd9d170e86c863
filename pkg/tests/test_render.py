import numpy as np

from liftmatch.render import GREEN, KEYPOINT, RED, bresenham, render_matches


def test_bresenham_endpoints_and_connectivity():
    pts = bresenham(0, 0, 7, 3)
    assert pts[0] == (0, 0) and pts[-1] == (7, 3)
    steps = np.abs(np.diff(np.array(pts), axis=0))
    assert (steps.max(axis=1) == 1).all()
    assert bresenham(2, 2, 2, 2) == [(2, 2)]


def test_zero_matches_only_keypoints():
    a = np.zeros((20, 30, 3))
    b = np.zeros((10, 25, 1))
    out = render_matches(a, b, [[5, 5]], [[3, 3]], np.zeros((0, 2)), [])
    assert out.shape == (20, 55, 3) and out.dtype == np.uint8
    assert (out[5, 5] == KEYPOINT).all() and (out[3, 33] == KEYPOINT).all()
    assert (out == KEYPOINT).all(axis=2).sum() == 18


def test_single_correct_and_wrong_lines():
    a = np.zeros((20, 20, 3))
    out = render_matches(a, a, [[2, 10]], [[2, 10]], [[0, 0]], [True])
    row = out[10]
    assert (row[5:18] == GREEN).all()
    out = render_matches(a, a, [[2, 10]], [[2, 10]], [[0, 0]], [False])
    assert (out[10, 5:18] == RED).all()
    assert not (out == GREEN).all(axis=2).any()


def test_colors_follow_independent_transfer_mask():
    from liftmatch.geometry import project_points

    H = np.array([[1.0, 0, 5], [0, 1, 0], [0, 0, 1]])
    a = np.zeros((40, 40, 3))
    ka = np.array([[5.0, 5], [5, 20], [5, 35]])
    kb = np.array([[10.0, 5], [17, 20], [10, 35]])
    fwd = np.linalg.norm(project_points(H, ka) - kb, axis=1)
    bwd = np.linalg.norm(project_points(np.linalg.inv(H), kb) - ka, axis=1)
    mask = np.maximum(fwd, bwd) < 3
    assert mask.tolist() == [True, False, True]
    out = render_matches(a, a, ka, kb, [[0, 0], [1, 1], [2, 2]], mask)
    for (x, y), ok in zip(ka, mask):
        assert (out[int(y), int(x) + 3] == (GREEN if ok else RED)).all()
