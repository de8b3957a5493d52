import numpy as np
import pytest

from hillmap.corpus import CORPUS
from hillmap.liouville import construct_map

_MAPS = {}


def corpus_map(entry, L=25.0, **kw):
    kw.setdefault("allow_no_decay", entry.allow_no_decay)
    key = (entry.name, L, tuple(sorted(kw.items())))
    if key not in _MAPS:
        _MAPS[key] = construct_map(entry.strip, entry.p, L, **kw)
    return _MAPS[key]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=[e.name for e in CORPUS])
def entry(request):
    from hillmap.corpus import BY_NAME

    return BY_NAME[request.param]
