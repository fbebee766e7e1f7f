import pytest
from hypothesis import given, settings, strategies as st

from caml import comms
from caml.comms import CostModel, Topology, TopologyKind as K
from caml.models import ModalityMask


def test_plan_examples():
    assert len(comms.message_plan(Topology(K.CENTRALIZED, 4))) == 3
    assert len(comms.message_plan(Topology(K.DECENTRALIZED_FULL, 4))) == 12
    assert len(comms.message_plan(Topology(K.DECENTRALIZED_K, 4, 2))) == 8


def test_centralized_plan_targets_ego():
    plan = comms.message_plan(Topology(K.CENTRALIZED, 5), ModalityMask.full(5, ["APPEARANCE", "RANGE"]))
    assert len(plan) == 8
    assert all(r == 0 and s != 0 for s, r, _ in plan)


def test_ring_neighbours():
    assert comms.ring_neighbours(0, 5, 2) == [1, 4]
    assert comms.ring_neighbours(0, 5, 3) == [1, 4, 2]
    assert comms.ring_neighbours(2, 3, 2) == [0, 1]
    for n in range(2, 12):
        for k in range(1, n):
            for i in range(n):
                nb = comms.ring_neighbours(i, n, k)
                assert len(set(nb)) == k and i not in nb


@pytest.mark.parametrize("k", [0, 4])
def test_invalid_k(k):
    with pytest.raises(comms.TopologyError):
        Topology(K.DECENTRALIZED_K, 4, k)


def test_predict_cost_examples():
    assert comms.predict_cost(Topology(K.CENTRALIZED, 4))[0] == 7
    assert comms.predict_cost(Topology(K.DECENTRALIZED_FULL, 3))[0] == 12
    assert comms.predict_cost(Topology(K.DECENTRALIZED_K, 4, 2))[0] == 12
    cm = CostModel(T_c=2, S_c=3, T_e=5, S_e=7, D=11, M_comm=13)
    assert comms.predict_cost(Topology(K.CENTRALIZED, 4), cm) == (2 * 3 + 11 * 3 + 5, 3 * 3 + 13 * 3 + 7)
    with pytest.raises(ValueError):
        CostModel(D=-1)


def test_account_examples():
    led = comms.account([(1, 0, "x")] * 3, 128)
    assert (led.messages, led.bytes) == (3, 384)
    led = comms.account([], 128)
    assert (led.messages, led.bytes) == (0, 0)


def test_counts_match_closed_forms():
    assert comms.check_counts(16) == []
    for n in range(2, 17):
        tops = [Topology(K.CENTRALIZED, n), Topology(K.DECENTRALIZED_FULL, n)]
        tops += [Topology(K.DECENTRALIZED_K, n, k) for k in range(1, n)]
        for top in tops:
            measured = len(comms.message_plan(top))
            assert measured == comms.exact_message_count(top)
            if top.kind is not K.DECENTRALIZED_FULL:
                assert measured == comms.message_coefficient(top)


topologies = st.integers(2, 10).flatmap(
    lambda n: st.one_of(
        st.just(Topology(K.CENTRALIZED, n)),
        st.just(Topology(K.DECENTRALIZED_FULL, n)),
        st.integers(1, n - 1).map(lambda k: Topology(K.DECENTRALIZED_K, n, k)),
    )
)


@settings(max_examples=80, deadline=None)
@given(topologies, st.integers(1, 4096), st.integers(1, 4096))
def test_bytes_are_linear(top, b1, b2):
    plan = comms.message_plan(top)
    assert comms.account(plan, b1 + b2).bytes == comms.account(plan, b1).bytes + comms.account(plan, b2).bytes


@settings(max_examples=80, deadline=None)
@given(topologies, st.data())
def test_student_ledger_below_teacher(top, data):
    mods = ["APPEARANCE", "RANGE", "STATE"]
    teacher = {i: data.draw(st.sets(st.sampled_from(mods), min_size=1)) for i in range(top.n_agents)}
    student = {i: data.draw(st.sets(st.sampled_from(sorted(teacher[i])))) for i in teacher}
    t_led = comms.ledger_for(top, ModalityMask.from_mapping(teacher), 32)
    s_led = comms.ledger_for(top, ModalityMask.from_mapping(student), 32)
    assert s_led.messages <= t_led.messages and s_led.bytes <= t_led.bytes


def test_strict_subset_mask_sends_fewer_bytes():
    for n in range(2, 9):
        for top in (Topology(K.CENTRALIZED, n), Topology(K.DECENTRALIZED_FULL, n), Topology(K.DECENTRALIZED_K, n, 1)):
            teacher = ModalityMask.full(n, ["APPEARANCE", "RANGE"])
            student = ModalityMask.full(n, ["APPEARANCE"])
            assert comms.ledger_for(top, student, 32).bytes < comms.ledger_for(top, teacher, 32).bytes


def test_ledger_row_keys():
    row = comms.ledger_for(Topology(K.DECENTRALIZED_K, 4, 2), None, 16).to_row()
    assert set(row) == {"topology", "N", "k", "messages", "bytes", "predicted_time_units", "predicted_space_units"}
    assert row["messages"] == 8 and row["bytes"] == 8 * 16 * 8
