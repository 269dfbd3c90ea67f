import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sparsesnn.dataflow import ktbc_schedule
from sparsesnn.engine import layer_forward
from sparsesnn.model import (UndefinedMetric, miout, network_forward, nnz_workload, op_count,
                             random_image, reference_weights, stage_ops)
from sparsesnn.netspec import (ConvStage, LayerSpec, NetworkSpec, cut_layer_index, expand,
                               format_netspec, mixed_timestep_plan, parse_netspec, read_netspec,
                               reference_network)
from sparsesnn.tensor import FormatError
from sparsesnn.weights import LayerWeights


def toy_net(out_t=1):
    return NetworkSpec((2, 6, 8), (
        LayerSpec("encode", 3, 3, 1, 1),
        LayerSpec("conv", 4, 3, 1, out_t),
    ))


# --- network description ---------------------------------------------------------

def test_reference_expansion():
    stages = expand(reference_network())
    assert [s.name for s in stages] == ["L0.encode", "L1.conv", "L2.csp.stack0", "L2.csp.stack1",
                                        "L2.csp.shortcut", "L2.csp.aggregate", "L3.output"]
    agg, short, stack = stages[5], stages[4], stages[3]
    assert agg.in_c == short.out_c + stack.out_c and short.out_c == stack.out_c // 2
    assert agg.sources == (3, 4) and short.sources == (1,)
    assert stages[2].h == 18 and stages[2].w == 32  # after the pooled conv


@pytest.mark.parametrize("bad", [
    dict(kind="pool", out_c=4), dict(kind="conv", out_c=4, k=5), dict(kind="conv", out_c=0),
    dict(kind="conv", out_c=4, in_t=3, out_t=1), dict(kind="conv", out_c=4, in_t=2, out_t=3),
    dict(kind="conv", out_c=4, out_t=5), dict(kind="csp_block", out_c=5),
])
def test_layer_spec_validation(bad):
    with pytest.raises(ValueError):
        LayerSpec(**bad)


def test_network_chain_validation():
    with pytest.raises(ValueError):
        NetworkSpec((3, 8, 8), (LayerSpec("conv", 4, 3, 1, 3), LayerSpec("conv", 4, 3, 1, 1)))
    with pytest.raises(ValueError):
        NetworkSpec((3, 8, 8), (LayerSpec("conv", 4), LayerSpec("encode", 4)))
    with pytest.raises(ValueError):
        NetworkSpec((3, 8, 8), (LayerSpec("output", 4, 1), LayerSpec("conv", 4)))
    with pytest.raises(ValueError):
        NetworkSpec((3, 577, 8), ())


def test_netspec_text_round_trip(tmp_path):
    net = reference_network()
    text = format_netspec(net)
    assert parse_netspec(text) == net
    path = tmp_path / "net.txt"
    path.write_text("# comment line\n" + text + "\n")
    assert read_netspec(path) == net


@pytest.mark.parametrize("text", [
    "", "snn-net 2\ninput 1 4 4\n", "snn-net 1\nconv 4 3 1 1 0\n",
    "snn-net 1\ninput 1 4 4\nconv 4 3 1 1\n", "snn-net 1\ninput 1 4 4\nconv 4 3 1 1 2\n",
    "snn-net 1\ninput 1 4 4\nconv x 3 1 1 0\n", "snn-net 1\ninput 1 4 4\nconv 4 5 1 1 0\n",
])
def test_netspec_parse_errors(text):
    with pytest.raises(FormatError):
        parse_netspec(text)


# --- mixed time steps ----------------------------------------------------------------

def _ts(net):
    return [(l.in_t, l.out_t) for l in net.layers]


def test_mixed_plans():
    net = reference_network()
    assert _ts(mixed_timestep_plan(net, "C1")) == [(1, 3), (3, 3), (3, 3), (3, 3)]
    assert _ts(mixed_timestep_plan(net, "C2")) == [(1, 1), (1, 3), (3, 3), (3, 3)]
    assert _ts(mixed_timestep_plan(net, "C2B1")) == [(1, 1), (1, 1), (1, 3), (3, 3)]
    assert mixed_timestep_plan(net, "none") is net
    assert cut_layer_index(net, "C2B1") == 2


@pytest.mark.parametrize("cut", ["C0", "C3", "C2B2", "X1", "C1B"])
def test_mixed_plan_invalid(cut):
    with pytest.raises(ValueError):
        mixed_timestep_plan(reference_network(), cut)


# --- mIoUT ----------------------------------------------------------------------------

def fig4_spikes():
    counts = np.array([3, 3, 3, 3, 1, 2, 0, 0, 0])
    s = np.zeros((3, 1, 3, 3), dtype=np.uint8)
    for n, c in enumerate(counts):
        s[:c, 0, n // 3, n % 3] = 1
    return s


def test_miout_worked_example():
    per, mean = miout(fig4_spikes())
    assert mean == pytest.approx(0.67, abs=0.005)
    assert per[0] == pytest.approx(4 / 6)


def test_miout_trivial_cases():
    always = np.ones((3, 2, 2, 2), dtype=np.uint8)
    assert miout(always)[1] == 1.0
    partial = np.zeros((3, 1, 2, 2), dtype=np.uint8)
    partial[0] = 1
    assert miout(partial)[1] == 0.0
    assert miout(np.zeros((2, 1, 2, 2)))[1] == 0.0
    with pytest.raises(UndefinedMetric):
        miout(np.ones((1, 1, 2, 2)))
    with pytest.raises(ValueError):
        miout(np.ones((3, 2, 2)))


spike_tensors = arrays(np.uint8, st.tuples(st.integers(2, 4), st.integers(1, 4), st.integers(1, 4),
                                           st.integers(1, 4)), elements=st.integers(0, 1))


@given(spike_tensors, st.randoms())
def test_miout_invariances(s, rnd):
    per, mean = miout(s)
    assert 0 <= mean <= 1 and ((per >= 0) & (per <= 1)).all()
    t_perm = list(range(s.shape[0]))
    c_perm = list(range(s.shape[1]))
    rnd.shuffle(t_perm)
    rnd.shuffle(c_perm)
    assert miout(s[t_perm])[1] == pytest.approx(mean)
    assert miout(s[:, c_perm])[1] == pytest.approx(mean)


# --- op counts ------------------------------------------------------------------------

def one_by_one_stage(t=1):
    return ConvStage(0, 0, "s", "conv", 1, 1, 1, 4, 4, t, t, False, (-1,))


def test_op_count_example():
    assert op_count([one_by_one_stage()]) == 32


def test_op_count_density_ratio(rng):
    st_ = ConvStage(0, 0, "s", "conv", 10, 10, 3, 8, 8, 1, 1, False, (-1,))
    q = rng.integers(1, 50, size=(10, 10, 3, 3))
    q.reshape(-1)[rng.permutation(900)[:630]] = 0
    assert op_count([st_], [q], "sparse") / op_count([st_]) == 0.3


def test_op_count_time_share():
    net = reference_network()
    stages = expand(net)
    dense = op_count(net)
    base = stage_ops(stages[2], None)
    halved = [s if s.index != 2 else ConvStage(*[getattr(s, f) for f in (
        "index", "layer", "name", "kind", "in_c", "out_c", "k", "h", "w")], 1, 1, s.pool,
        s.sources) for s in stages]
    assert op_count(halved) == dense - base + base // 3
    assert stage_ops(stages[0], None) == 2 * 9 * 3 * 16 * 36 * 64 * 8


def test_op_count_sparse_le_dense():
    net = reference_network()
    w = reference_weights(net, 1)
    assert op_count(net, w, "sparse") <= op_count(net)
    full = [LayerWeights(np.where(lw.q == 0, 1, lw.q), lw.scale, lw.layer_id) for lw in w]
    assert op_count(net, full, "sparse") == op_count(net)
    with pytest.raises(ValueError):
        op_count(net, None, "sparse")
    with pytest.raises(ValueError):
        op_count(net, w, "approx")


# --- forward pass ------------------------------------------------------------------------

def test_forward_zero_image():
    net = reference_network()
    res = network_forward(np.zeros(net.input_shape, dtype=np.uint8), net, reference_weights(net))
    assert all(not o.any() for o in res.outputs)
    assert res.report.enabled_accum == 0 and res.report.cycles > 0


def test_forward_matches_manual_composition():
    net = toy_net(out_t=3)
    weights = reference_weights(net, 3)
    img = random_image(net.input_shape, 3)
    res = network_forward(img, net, weights)
    stages = expand(net)
    a, sa = layer_forward(img, stages[0], weights[0])
    b, sb = layer_forward(a, stages[1], weights[1])
    assert np.array_equal(res.outputs[0], a) and np.array_equal(res.outputs[1], b)
    assert res.stats.cycles == sa.cycles + sb.cycles
    assert res.report.cycles == ktbc_schedule(stages, weights).cycles
    assert b.shape == (3, 4, 6, 8)


def test_forward_deterministic():
    net = reference_network()
    w = reference_weights(net, 5)
    img = random_image(net.input_shape, 5)
    a = network_forward(img, net, w)
    b = network_forward(img, net, w)
    assert a.report == b.report
    assert all(np.array_equal(x, y) for x, y in zip(a.outputs, b.outputs))
    assert a.final().shape == (24, 18, 32)


def test_forward_errors():
    net = toy_net()
    w = reference_weights(net)
    with pytest.raises(ValueError):
        network_forward(np.zeros((2, 5, 8)), net, w)
    with pytest.raises(ValueError):
        network_forward(np.zeros((2, 6, 8)), net, w[:1])
    with pytest.raises(ValueError):
        network_forward(np.zeros((2, 6, 8)), net, [w[1], w[0]])


def test_stage_input_concatenates():
    net = reference_network()
    img = random_image(net.input_shape, 2)
    res = network_forward(img, net, reference_weights(net, 2))
    agg = res.stage_input(5)
    assert agg.shape == (3, 48, 18, 32)
    assert np.array_equal(agg[:, :32], res.outputs[3])
    assert res.stage_input(0, img) is img


def test_reference_weights_and_workload():
    net = reference_network()
    w = reference_weights(net, 0)
    assert [lw.q.shape for lw in w] == [(s.out_c, s.in_c, s.k, s.k) for s in expand(net)]
    assert all(np.abs(lw.q).max() == 127 for lw in w)
    assert np.array_equal(reference_weights(net, 0)[2].q, w[2].q)
    assert len(nnz_workload(w)) == 4
    img = random_image((3, 4, 4), 9)
    assert img.dtype == np.uint8 and np.array_equal(img, random_image((3, 4, 4), 9))
