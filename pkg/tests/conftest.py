import numpy as np
import pytest

from cavityrecon import pipeline
from cavityrecon.config import PipelineConfig
from cavityrecon.mesh import TriangleMesh


def tetrahedron():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriangleMesh(v, f)


def unit_cube():
    v = np.array([[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)])
    quads = [
        (0, 1, 3, 2),  # x = 0
        (4, 6, 7, 5),  # x = 1
        (0, 4, 5, 1),  # y = 0
        (2, 3, 7, 6),  # y = 1
        (0, 2, 6, 4),  # z = 0
        (1, 5, 7, 3),  # z = 1
    ]
    f = []
    for a, b, c, d in quads:
        f += [(a, b, c), (a, c, d)]
    return TriangleMesh(v, np.array(f))


def random_soup(rng, n):
    c = rng.normal(size=(n, 1, 3))
    return TriangleMesh((c + 0.4 * rng.normal(size=(n, 3, 3))).reshape(-1, 3), np.arange(3 * n).reshape(-1, 3))


@pytest.fixture(scope="session")
def phantom_dataset(tmp_path_factory):
    """Default 60-frame phantom dataset, rendered once per session."""
    root = tmp_path_factory.mktemp("phantom") / "ds"
    pipeline.run_synth(root)
    return root


@pytest.fixture(scope="session")
def phantom_reconstruction(phantom_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("recon")
    cfg = PipelineConfig(dataset=str(phantom_dataset), output=str(out), figures=False)
    return cfg, pipeline.run_reconstruct(cfg)


def pytest_terminal_summary(terminalreporter):
    lines = getattr(pytest, "acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
