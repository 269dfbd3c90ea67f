import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sparsesnn.weights import (BitmaskKernel, CorruptKernelError, CsrKernel, FormatError,
                               LayerWeights, decode_bitmask, decode_csr, decode_weights,
                               encode_bitmask, encode_csr, encode_weights, kernel_storage_bits,
                               prune_magnitude, prune_network, quantize8, read_weights,
                               storage_bits, write_weights)

int8 = st.integers(-127, 127)
sparse_int8 = st.one_of(st.just(0), int8)
kernels = st.sampled_from([1, 3]).flatmap(
    lambda k: arrays(np.int64, (k, k), elements=sparse_int8))


def test_bitmask_single_corner():
    k = np.zeros((3, 3), dtype=int)
    k[0, 0] = 42
    bk = encode_bitmask(k)
    assert bk.mask == 0b100000000 and bk.values == (42,)
    assert bk.positions() == [(0, 0)]


def test_bitmask_empty_and_dense():
    assert encode_bitmask(np.zeros((3, 3))) == BitmaskKernel(3, 0, ())
    dense = np.arange(1, 10).reshape(3, 3)
    bk = encode_bitmask(dense)
    assert bk.mask == 0b111111111 and bk.values == tuple(range(1, 10))


def test_bitmask_positions_leftmost_first():
    k = np.array([[0, 5, 6], [7, 0, 0], [0, 0, 8]])
    assert encode_bitmask(k).positions() == [(0, 1), (0, 2), (1, 0), (2, 2)]


@given(kernels)
def test_bitmask_round_trip(k):
    bk = encode_bitmask(k)
    assert bin(bk.mask).count("1") == len(bk.values)
    assert 0 not in bk.values
    assert np.array_equal(decode_bitmask(bk), k)


@given(kernels)
def test_csr_round_trip(k):
    ck = encode_csr(k)
    assert list(ck.row_ptr) == sorted(ck.row_ptr) and ck.row_ptr[-1] == len(ck.values)
    assert np.array_equal(decode_csr(ck), k)


def test_csr_by_definition():
    k = np.zeros((3, 3), dtype=int)
    k[0, 0] = 3
    ck = encode_csr(k)
    assert ck.row_ptr == (0, 1, 1, 1) and ck.col_idx == (0,)
    assert encode_csr(np.zeros((3, 3))).row_ptr == (0, 0, 0, 0)
    assert encode_csr(np.ones((3, 3))).row_ptr == (0, 3, 6, 9)


@pytest.mark.parametrize("bad", [
    BitmaskKernel(3, 0b11, (1,)),
    BitmaskKernel(3, 0b1, (0,)),
    BitmaskKernel(3, 1 << 9, (1,)),
])
def test_bitmask_decode_rejects_corruption(bad):
    with pytest.raises(CorruptKernelError):
        decode_bitmask(bad)


@pytest.mark.parametrize("bad", [
    CsrKernel(3, (0, 1, 1), (0,), (1,)),
    CsrKernel(3, (0, 2, 1, 1), (0,), (1,)),
    CsrKernel(3, (1, 1, 1, 1), (0,), (1,)),
    CsrKernel(3, (0, 1, 1, 2), (0,), (1,)),
    CsrKernel(3, (0, 1, 1, 1), (3,), (1,)),
    CsrKernel(3, (0, 2, 2, 2), (1, 1), (1, 2)),
])
def test_csr_decode_rejects_corruption(bad):
    with pytest.raises(CorruptKernelError):
        decode_csr(bad)


def test_storage_bits_closed_forms():
    k = np.zeros((3, 3), dtype=int)
    k[0, 0], k[2, 1] = 1, -1
    assert storage_bits(k, "bitmask") == 25
    assert storage_bits(k, "dense") == 72
    assert storage_bits(np.zeros((3, 3)), "bitmask") == 9
    # row pointers 4 x 4 bits, column indices 2 bits, values 8 bits
    assert storage_bits(k, "csr") == 4 * 4 + 2 * (2 + 8)
    assert kernel_storage_bits(1, 1, "csr") == 2 * 1 + 8
    with pytest.raises(ValueError):
        storage_bits(k, "coo")


@given(arrays(np.int64, st.tuples(st.integers(1, 4), st.integers(1, 4), st.just(3),
                                  st.just(3)), elements=sparse_int8))
def test_layer_bits_sum_of_kernels(w):
    for fmt in ("dense", "bitmask", "csr"):
        per_kernel = sum(kernel_storage_bits(3, int(np.count_nonzero(w[o, i])), fmt)
                         for o in range(w.shape[0]) for i in range(w.shape[1]))
        assert storage_bits(w, fmt) == per_kernel


@given(st.integers(0, 9 * 50), st.integers(1, 50))
def test_bitmask_beats_csr_always_and_dense_below_085(nnz, n_kernels):
    total = 9 * n_kernels
    nnz = min(nnz, total)
    bm = n_kernels * 9 + 8 * nnz
    csr = n_kernels * 16 + 10 * nnz
    assert bm < csr
    if nnz / total <= 0.85:
        assert bm < 72 * n_kernels


def test_prune_rate_zero_is_identity(rng):
    w = rng.integers(-127, 128, size=(2, 3, 3, 3))
    out, rep = prune_magnitude(w, 0.0)
    assert np.array_equal(out, w) and rep.nonzero_after == rep.nonzero_before


def test_prune_keeps_two_largest_of_ten():
    w = np.array([3, -7, 1, 10, -2, 6, -9, 4, 5, -8])
    out, rep = prune_magnitude(w, 0.8)
    assert sorted(out[out != 0].tolist()) == [-9, 10]
    assert rep.nonzero_after == 2


def test_prune_one_by_one_untouched(rng):
    w = rng.integers(-127, 128, size=(8, 4, 1, 1))
    out, _ = prune_magnitude(w, 0.8)
    assert np.array_equal(out, w)


@pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
def test_prune_rate_out_of_range(rate):
    with pytest.raises(ValueError):
        prune_magnitude(np.ones((1, 1, 3, 3)), rate)


def test_prune_decimal_exact_floor():
    w = np.arange(1, 101).reshape(1, 1, 10, 10)
    out, _ = prune_magnitude(w, 0.29)
    assert np.count_nonzero(out) == 71


@given(arrays(np.int64, st.tuples(st.integers(1, 3), st.integers(1, 3), st.just(3), st.just(3)),
              elements=int8),
       st.floats(0, 0.99))
def test_prune_matches_sort_oracle(w, rate):
    out, _ = prune_magnitude(w, rate)
    flat = w.reshape(-1)
    n_zero = int(np.floor(rate * flat.size + 1e-9))
    # never increases any magnitude, survivors are untouched
    assert np.all((out == 0) | (out == w))
    # exactly floor(rate * N) positions forced to zero
    order = np.argsort(np.abs(flat), kind="stable")
    expected = flat.copy()
    expected[order[:n_zero]] = 0
    if abs(rate * flat.size - round(rate * flat.size)) > 1e-6:
        assert np.array_equal(out.reshape(-1), expected)
    # every survivor is at least as large as every pruned weight
    kept = np.abs(flat[out.reshape(-1) != 0])
    dropped = np.abs(flat[(out.reshape(-1) == 0) & (flat != 0)])
    if kept.size and dropped.size:
        assert kept.min() >= dropped.max()


def test_prune_layerweights_and_network(rng):
    a = LayerWeights(rng.integers(-127, 128, size=(4, 4, 3, 3)), 0.5, 0)
    b = LayerWeights(rng.integers(-127, 128, size=(4, 4, 1, 1)), 0.5, 1)
    for mode in ("layer", "global"):
        out, reports = prune_network([a, b], 0.8, mode)
        assert np.array_equal(out[1].q, b.q)
        assert reports[0].nonzero_after <= a.q.size - int(0.8 * a.q.size)
    out, reports = prune_network([a, b], 0.8, "layer")
    assert reports[0].nonzero_after == a.q.size - int(0.8 * a.q.size)
    with pytest.raises(ValueError):
        prune_network([a], 0.5, "channel")


def test_global_prune_ranks_across_layers():
    small = LayerWeights(np.full((1, 1, 3, 3), 10), 0.01, 0)
    big = LayerWeights(np.full((1, 1, 3, 3), 10), 1.0, 1)
    out, _ = prune_network([small, big], 0.5, "global")
    assert not out[0].q.any() and np.count_nonzero(out[1].q) == 9


def test_quantize_half_away_example():
    q, scale = quantize8(np.array([1.27, 0.635, -0.635, 0.0]))
    assert scale == pytest.approx(0.01)
    assert q.tolist() == [127, 64, -64, 0]


def test_quantize_all_zero():
    q, scale = quantize8(np.zeros((2, 2, 3, 3)))
    assert scale == 1.0 and not q.any()


def test_quantize_rejects_nonfinite():
    with pytest.raises(ValueError):
        quantize8(np.array([1.0, np.nan]))


@given(arrays(np.int64, (2, 2, 3, 3), elements=int8))
def test_quantize_exact_on_grid(q):
    scale = 0.03125
    w = q * scale
    q2, s2 = quantize8(w)
    if q.any():
        # the peak maps to 127; everything else lies on the rescaled grid within half a step
        assert np.abs(q2).max() == 127
        assert np.all(np.abs(q2 * s2 - w) <= s2 / 2 + 1e-12)
        assert np.array_equal(q2 == 0, q == 0) or np.abs(w[q2 == 0]).max() <= s2 / 2
    if np.abs(q).max(initial=0) == 127:
        assert np.array_equal(q2, q)


def _random_layers(rng, density=0.3):
    layers = []
    for i, (o, c, k) in enumerate([(4, 3, 3), (2, 4, 1), (3, 2, 3)]):
        q = rng.integers(-127, 128, size=(o, c, k, k))
        q[rng.random(q.shape) > density] = 0
        layers.append(LayerWeights(q, float(np.float32(0.01 * (i + 1))), i))
    return layers


@pytest.mark.parametrize("fmt", ["dense", "bitmask", "csr"])
def test_weight_file_round_trip(tmp_path, rng, fmt):
    layers = _random_layers(rng)
    path = tmp_path / "w.snnw"
    write_weights(path, layers, fmt)
    back = read_weights(path)
    assert len(back) == len(layers)
    for a, b in zip(layers, back):
        assert np.array_equal(a.q, b.q) and a.scale == b.scale and a.layer_id == b.layer_id


def test_weight_file_sizes_follow_format(rng):
    layers = _random_layers(rng)
    sizes = {f: len(encode_weights(layers, f)) for f in ("dense", "bitmask", "csr")}
    assert sizes["bitmask"] < sizes["dense"]


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + bytes([9]) + b[5:],
    lambda b: b[:-1],
    lambda b: b + b"\x00",
    lambda b: b[:9] + b"\x00\x00" + b[11:],
])
def test_weight_file_rejects_malformed(rng, mutate):
    buf = encode_weights(_random_layers(rng), "bitmask")
    with pytest.raises(FormatError):
        decode_weights(mutate(buf))


def test_weight_file_rejects_minus_128():
    layer = LayerWeights(np.ones((1, 1, 1, 1), dtype=np.int64), 1.0, 0)
    buf = bytearray(encode_weights([layer], "dense"))
    buf[-1] = 0x80
    with pytest.raises(FormatError):
        decode_weights(bytes(buf))


def test_bitmask_nonzero_padding_rejected():
    layer = LayerWeights(np.ones((1, 1, 3, 3), dtype=np.int64), 1.0, 0)
    buf = bytearray(encode_weights([layer], "bitmask"))
    head = 7 + 12
    buf[head + 1] |= 0x01
    with pytest.raises(FormatError):
        decode_weights(bytes(buf))
