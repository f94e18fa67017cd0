import os.path
import shutil
import tempfile

import pytest


@pytest.fixture(params=["npy", "npz", "hdf5"])
def data_format(request):
    yield request.param


@pytest.fixture
def datafile():
    f, filename = tempfile.mkstemp()
    os.close(f)
    os.remove(filename)
    yield filename
    if os.path.exists(filename):
        if os.path.isfile(filename):
            os.remove(filename)
        else:
            shutil.rmtree(filename)


@pytest.fixture
def datadir():
    d = tempfile.mkdtemp()
    yield d
    shutil.rmtree(d)


@pytest.fixture
def np():
    try:
        import numpy

        numpy.random.seed(3)
        return numpy
    except ImportError:  # pragma: no cover
        pytest.skip("Skipping test that depends on numpy")


@pytest.fixture
def h5py():
    try:
        import h5py

        return h5py
    except ImportError:  # pragma: no cover
        pytest.skip("Skipping test that depends on h5py")


@pytest.fixture
def float64():
    """Create new tensors in double precision (needed by grad_check)."""
    import numpy
    from sws import nnkit

    with nnkit.precision(numpy.float64):
        yield numpy.float64


@pytest.fixture
def tiny_scene():
    from sws.scenegen import SceneSpec, generate_scene

    return generate_scene(7, SceneSpec(n_objects=4))


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Twelve three-object scenes with labels for 3 and 7 bins.

    Shared by the whole session: tests must not modify it.
    """
    from sws.dataset import generate_dataset, write_dataset_labels
    from sws.scenegen import SceneSpec

    directory = str(tmp_path_factory.mktemp("tiny") / "data")
    generate_dataset(directory, 12, seed=0, questions_per_scene=4,
                     spec=SceneSpec(n_objects=3), workers=1)
    write_dataset_labels(directory, bins=(3, 7))
    return directory


@pytest.fixture
def tiny_config():
    from sws.model import ModelConfig

    return ModelConfig(hidden=8, heads=2, lang_layers=1, vis_layers=1,
                       cross_layers=1, fusion_layers=1, max_objects=3)
