import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from stokes2p.interface_mesh import InterfaceMesh


def regular_polygon(n, r=0.5, center=(0.0, 0.0)):
    th = 2.0 * np.pi * np.arange(n) / n
    pts = r * np.column_stack([np.cos(th), np.sin(th)])
    return InterfaceMesh(pts + np.asarray(center))


def wavy_polygon(n=40, r=0.55, amp=0.08, seed=None):
    th = 2.0 * np.pi * np.arange(n) / n
    rad = r + amp * np.cos(3 * th)
    if seed is not None:
        rng = np.random.default_rng(seed)
        rad = rad + 0.01 * rng.standard_normal(n)
    return InterfaceMesh(rad[:, None] * np.column_stack([np.cos(th), np.sin(th)]))


@pytest.fixture
def circle64():
    return regular_polygon(64)


@pytest.fixture
def coarse_square_mesh():
    from stokes2p.bulk_mesh import build_rectangle_mesh, unit_square_domain

    return build_rectangle_mesh(unit_square_domain(), 2**0.5 / 4)
