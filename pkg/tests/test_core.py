import numpy as np
import pytest

from core import (
    STREAM_CASCADE,
    STREAM_NETWORK,
    Cascade,
    CascadeSet,
    CascadeTruth,
    InferenceResult,
    InvariantError,
    MetricError,
    MultilayerNetwork,
    ParseError,
    SNAP_CASCADE_INFO,
    SNAP_CASCADES,
    aggregate,
    export_snap,
    import_snap,
    ingest_event_log,
    make_rng,
    read_cascades,
    read_id_map,
    read_network,
    read_result,
    write_cascades,
    write_edge_scores,
    write_id_map,
    write_network,
    write_result,
)


def test_network_round_trip(tmp_path, two_layer_network):
    path = tmp_path / "net.tsv"
    write_network(two_layer_network, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# nodes=4 layers=2"
    assert lines[1] == "layer\tsrc\tdst\trate"
    assert read_network(path) == two_layer_network


def test_network_rates_survive_bit_exact(tmp_path):
    net = MultilayerNetwork.from_edges(3, [[(0, 1, 0.1 + 0.2), (2, 0, 1 / 3)]])
    write_network(net, tmp_path / "net.tsv")
    assert read_network(tmp_path / "net.tsv").rate[0].tolist() == net.rate[0].tolist()


@pytest.mark.parametrize("edge_line, message", [
    ("0\t1\t1\t0.5", "self-loop"),
    ("0\t1\t2\t0", "rate 0 outside"),
    ("0\t1\t2\t1.5", "rate 1.5 outside"),
    ("2\t1\t2\t0.5", "layer 2"),
    ("0\t1\t9\t0.5", "node id"),
    ("0\t1\t2", "4 tab-separated"),
])
def test_read_network_rejects_bad_lines_with_line_number(tmp_path, edge_line, message):
    path = tmp_path / "net.tsv"
    path.write_text(f"# nodes=3 layers=2\nlayer\tsrc\tdst\trate\n0\t0\t1\t0.5\n{edge_line}\n")
    with pytest.raises(ParseError, match=message) as info:
        read_network(path)
    assert info.value.line_no == 4


def test_read_network_rejects_duplicates_and_bad_header(tmp_path):
    path = tmp_path / "net.tsv"
    path.write_text("# nodes=3 layers=1\nlayer\tsrc\tdst\trate\n0\t0\t1\t0.5\n0\t0\t1\t0.25\n")
    with pytest.raises(ParseError, match="duplicate"):
        read_network(path)
    path.write_text("# nodes=3 layers=1\nsrc\tdst\trate\n")
    with pytest.raises(ParseError) as info:
        read_network(path)
    assert info.value.line_no == 2


def test_network_invariants():
    with pytest.raises(InvariantError):
        MultilayerNetwork.from_edges(3, [[(0, 0, 0.5)]])
    with pytest.raises(InvariantError):
        MultilayerNetwork.from_edges(3, [[(0, 1, 0.5), (0, 1, 0.2)]])
    with pytest.raises(InvariantError):
        MultilayerNetwork.from_edges(3, [[(0, 1, 0.0)]])


def test_aggregate_is_sorted_union(two_layer_network):
    agg = aggregate(two_layer_network)
    assert agg.edges.tolist() == [[0, 1], [1, 2], [2, 3]]
    assert len(agg) == 3


def test_network_arrays_are_read_only(two_layer_network):
    with pytest.raises(ValueError):
        two_layer_network.rate[0][0] = 0.1


def test_cascade_sorted_by_time_then_node():
    c = Cascade(id=0, horizon=5.0, nodes=np.array([4, 2, 3]), times=np.array([1.0, 0.0, 0.0]))
    assert c.nodes.tolist() == [2, 3, 4]
    assert c.seed_nodes.tolist() == [2, 3]
    assert c.activation_time == {2: 0.0, 3: 0.0, 4: 1.0}


@pytest.mark.parametrize("nodes, times", [
    ([0, 1], [0.0, 5.0]),
    ([0, 0], [0.0, 1.0]),
    ([0, 1], [0.0, -1.0]),
    ([], []),
])
def test_cascade_invariants(nodes, times):
    with pytest.raises(InvariantError):
        Cascade(id=0, horizon=5.0, nodes=np.array(nodes), times=np.array(times))


def test_truth_must_be_a_simplex():
    with pytest.raises(InvariantError):
        CascadeTruth(main_layer=0, eps=0.0, pi=(0.6, 0.6))
    with pytest.raises(InvariantError):
        CascadeTruth(main_layer=2, eps=0.0, pi=(0.5, 0.5))


def test_cascades_round_trip(tmp_path, labelled_cascades):
    path = tmp_path / "c.jsonl"
    write_cascades(labelled_cascades, path)
    back = read_cascades(path)
    assert back == labelled_cascades
    assert back.main_layers().tolist() == [0, 1, 1]


def test_read_cascades_errors(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"id":0,"T":5,"events":[[0,0.0]]}\n{"id":0,"T":5,"events":[[1,0.0]]}\n')
    with pytest.raises(ParseError, match="duplicate cascade id") as info:
        read_cascades(path)
    assert info.value.line_no == 2

    path.write_text('{"id":0,"T":5,"events":[[0,0.0],[1,7.0]]}\n')
    with pytest.raises(ParseError):
        read_cascades(path)

    path.write_text("not json\n")
    with pytest.raises(ParseError, match="invalid JSON"):
        read_cascades(path)


def test_truth_eps_defaults_from_pi(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"id":3,"T":5,"events":[[0,0.0]],"truth":{"pi":[0.25,0.75]}}\n')
    truth = read_cascades(path)[0].truth
    assert truth.main_layer == 1
    assert truth.eps == pytest.approx(0.25)


def test_truth_free_sets_refuse_labels():
    cs = CascadeSet((Cascade(id=0, horizon=1.0, nodes=np.array([0]), times=np.array([0.0])),))
    assert not cs.has_truth()
    with pytest.raises(MetricError):
        cs.main_layers()


def test_rng_streams_are_reproducible_and_distinct():
    a = make_rng(7, STREAM_CASCADE, 3).random(5)
    b = make_rng(7, STREAM_CASCADE, 3).random(5)
    c = make_rng(7, STREAM_CASCADE, 4).random(5)
    d = make_rng(7, STREAM_NETWORK).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_ingest_event_log(tmp_path):
    path = tmp_path / "events.csv"
    path.write_text(
        "cascade,user,time\n"
        "b,@carol,105\n"
        "a,@alice,10\n"
        "a,@bob,12.5\n"
        "a,@bob,13\n"
        "a,@carol,40\n"
        "b,@alice,100\n"
    )
    cascades, handles = ingest_event_log(path, horizon=20.0)
    assert handles == ["@carol", "@alice", "@bob"]
    first, second = cascades
    assert first.activation_time == {1: 0.0, 2: 2.5}
    assert second.activation_time == {1: 0.0, 0: 5.0}

    write_id_map(handles, tmp_path / "ids.tsv")
    assert read_id_map(tmp_path / "ids.tsv") == handles


def _result(**overrides):
    values = dict(
        candidate_edges=np.array([[0, 1], [1, 2], [2, 0]]),
        edge_scores=np.array([0.9, 0.4, 0.4]),
        selected_edges=np.array([[0, 1], [1, 2]]),
        alpha_hat=np.array([[0.5, 0.1], [0.2, 0.3]]),
        pi_hat=np.array([[0.25, 0.75], [1.0, 0.0]]),
        cascade_ids=np.array([4, 9]),
        objective_trace=[(0, 5.0), (1, 4.0), (2, 4.5)],
        restart_seed=1,
        n_nodes=3,
        provenance={"timings": {"total": 1.5}, "budget": 2},
    )
    values.update(overrides)
    return InferenceResult(**values)


def test_inference_result_invariants():
    with pytest.raises(InvariantError):
        _result(pi_hat=np.array([[0.5, 0.6], [1.0, 0.0]]))
    with pytest.raises(InvariantError):
        _result(selected_edges=np.array([[0, 1], [0, 2]]))
    with pytest.raises(InvariantError):
        _result(edge_scores=np.array([0.9, 0.4]))


def test_inference_result_round_trip(tmp_path):
    result = _result()
    assert result.final_objective == 4.0
    write_result(result, tmp_path / "result.json")
    back = read_result(tmp_path / "result.json")
    assert back.to_dict() == result.to_dict()
    assert "timings" not in result.to_dict(include_timings=False)["provenance"]


def test_edge_scores_sorted_descending_with_pair_ties(tmp_path):
    write_edge_scores(_result(), tmp_path / "scores.tsv")
    lines = (tmp_path / "scores.tsv").read_text().splitlines()
    assert lines[0] == "src\tdst\tscore"
    assert [tuple(line.split("\t")[:2]) for line in lines[1:]] == [("0", "1"), ("1", "2"), ("2", "0")]


def test_snap_export_layout(tmp_path, labelled_cascades, two_layer_network):
    written = export_snap(labelled_cascades, tmp_path, two_layer_network)
    assert [p.name for p in written] == [SNAP_CASCADES, SNAP_CASCADE_INFO, "network_layer0.txt", "network_layer1.txt"]
    assert (tmp_path / SNAP_CASCADES).read_text().split("\n")[4:7] == ["", "0,0,1,0.5,2,1.5", "2,0,3,2"]
    assert (tmp_path / SNAP_CASCADE_INFO).read_text().split("\n")[1:3] == ["0\t5\t0", "1\t5\t1"]
    assert (tmp_path / "network_layer1.txt").read_text().endswith("\n0,1,0.75\n2,3,1\n")


def test_snap_export_without_network(tmp_path, labelled_cascades):
    written = export_snap(labelled_cascades, tmp_path)
    assert len(written) == 2
    net, cascades = import_snap(tmp_path)
    assert net is None
    assert cascades.ids.tolist() == [0, 1, 2]
    assert (tmp_path / SNAP_CASCADES).read_text().startswith("0,0\n1,1\n2,2\n3,3\n\n")


def test_snap_import_names_the_bad_line(tmp_path, labelled_cascades):
    export_snap(labelled_cascades, tmp_path)
    path = tmp_path / SNAP_CASCADES
    lines = path.read_text().split("\n")
    lines[6] = "2,0,3"
    path.write_text("\n".join(lines))
    with pytest.raises(ParseError, match=":7"):
        import_snap(tmp_path)


def test_snap_export_rejects_nodes_outside_the_network(tmp_path, labelled_cascades):
    small = MultilayerNetwork.from_edges(3, [[(0, 1, 0.5)]])
    with pytest.raises(InvariantError):
        export_snap(labelled_cascades, tmp_path, small)
