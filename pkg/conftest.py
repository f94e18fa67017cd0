import pytest


@pytest.fixture(autouse=True)
def _numpy_legacy_repr_for_doctests(request):
    """Doctests were written against NumPy < 2 scalar reprs (``True`` rather
    than ``np.True_``); use the legacy print mode while running them."""
    from _pytest.doctest import DoctestItem

    if not isinstance(request.node, DoctestItem):
        yield
        return
    import numpy

    if int(numpy.__version__.split(".")[0]) < 2:
        yield
        return
    with numpy.printoptions(legacy="1.25"):
        yield
