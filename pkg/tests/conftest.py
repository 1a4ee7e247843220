import numpy as np
import pytest

from blobvis.camera import Camera, Image, render
from blobvis.energy import EnergyConfig, energy_and_grad
from blobvis.scene import Gaussian, Scene


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    """Trigger the numba compilations once so timed tests measure math,
    not compilation."""
    scene = Scene(gaussians=(
        Gaussian(c=1.0, mu=(0.0, 0.0, 3.0), sigma=0.3),),
        m=0.1, cutoff=1e-5)
    cam = tiny_camera(4)
    img = render(scene, cam)
    for term in ("pc", "mc"):
        energy_and_grad(scene, cam, img, EnergyConfig(term=term),
                        want_grad=True)


def tiny_camera(n=8, f=None):
    f = f if f is not None else 1.2 * n
    return Camera(position=np.zeros(3), orientation=np.eye(3),
                  fx=f, fy=f, cx=n / 2.0, cy=n / 2.0, width=n, height=n)


def random_scene(rng, nmin=1, nmax=6, box=1.0, z0=2.0, z1=4.0, m=0.1,
                 cutoff=0.0):
    n = int(rng.integers(nmin, nmax + 1))
    gs = []
    for _ in range(n):
        gs.append(Gaussian(
            c=float(rng.uniform(0.2, 4.0)),
            mu=tuple(np.append(rng.uniform(-box, box, 2),
                               rng.uniform(z0, z1))),
            sigma=float(rng.uniform(0.08, 0.5)),
            albedo=tuple(rng.uniform(0.0, 1.0, 3))))
    return Scene(gaussians=tuple(gs), m=m, cutoff=cutoff)


def random_image(rng, cam):
    return Image(pixels=rng.uniform(0.0, 1.0, (cam.height, cam.width, 3)))
