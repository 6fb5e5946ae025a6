import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vqct import tensor as T
from vqct.analysis import utilization_from_indices
from vqct.nn import decode_tensors, encode_tensors
from vqct.tensor import Tensor
from vqct.vq import nearest_codes

from oracles import nearest_scan

finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.data())
def test_split_concat_inverse(b, half, h, w, data):
    x = data.draw(arrays(np.float64, (b, 2 * half, h, w), elements=finite))
    out = T.channel_concat(*T.channel_split(Tensor(x))).data
    assert out.tobytes() == x.tobytes()


@given(st.integers(1, 20), st.integers(1, 6), st.data())
@settings(max_examples=60)
def test_nearest_codes_matches_scan_on_integer_grids(k, d, data):
    # small integer coordinates make exact ties common
    cb = data.draw(arrays(np.float64, (k, d), elements=st.integers(-3, 3).map(float)))
    z = data.draw(arrays(np.float64, (8, d), elements=st.integers(-3, 3).map(float)))
    np.testing.assert_array_equal(nearest_codes(z, cb)[0], nearest_scan(z, cb))


@given(st.lists(st.integers(0, 9), min_size=1, max_size=200))
def test_perplexity_bounds(indices):
    r = utilization_from_indices([np.array(indices)], [10])
    assert 1 - 1e-12 <= r.perplexity[0] <= 10 + 1e-12
    assert 0 < r.used_fraction[0] <= 1


@given(st.dictionaries(st.text("abc.xyz", min_size=1, max_size=8),
                       arrays(np.float64, st.tuples(st.integers(0, 3), st.integers(1, 3)),
                              elements=st.floats(allow_nan=False)), max_size=4))
def test_container_round_trip(entries):
    back = decode_tensors(encode_tensors(entries))
    assert list(back) == list(entries)
    for k in entries:
        assert back[k].tobytes() == entries[k].tobytes() and back[k].shape == entries[k].shape
