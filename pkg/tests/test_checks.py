import pytest

from frm.checks import registry


def test_names_unique():
    names = [n for n, _ in registry()]
    assert len(names) == len(set(names))


@pytest.mark.parametrize("name", [n for n, _ in registry()])
def test_check_passes(check_run, name):
    results, _ = check_run
    (r,) = [r for r in results if r.name == name]
    assert r.passed, r.detail
