"""Codec tests: vocabulary bijection, interval embeddings, actions, observations."""

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from netop import codec, netsim
from netop.codec import (
    N_ACTIONS,
    N_CATEGORIES,
    OBS_DIM,
    Param,
    TokenRangeError,
    UnknownActionError,
    UnknownTokenError,
)
from netop.netsim import Command, Verdict


def all_tokens():
    for cat in range(N_CATEGORIES):
        for idx in range(codec.category_size(cat)):
            yield cat, idx, codec.decode_token(cat, idx)


class TestVocabulary:
    def test_ip_address_is_category_1(self):
        assert codec.encode_token("ip-address-1") == (1, 0)
        assert codec.category_size(1) == 63

    def test_round_trip_full_vocabulary(self):
        seen = set()
        for cat, idx, token in all_tokens():
            assert codec.encode_token(token) == (cat, idx)
            assert token not in seen
            seen.add(token)
        assert len(seen) == sum(codec.category_size(c) for c in range(N_CATEGORIES))

    def test_unknown_tokens_rejected(self):
        with pytest.raises(UnknownTokenError):
            codec.encode_token("ip-address-64")
        with pytest.raises(UnknownTokenError):
            codec.encode_token("bogus")

    def test_decode_examples(self):
        assert codec.decode_token(1, 0) == "ip-address-1"
        assert codec.decode_token(5, 1) == "closed"

    def test_decode_out_of_range(self):
        with pytest.raises(TokenRangeError):
            codec.decode_token(12, 0)
        with pytest.raises(TokenRangeError):
            codec.decode_token(1, 63)
        with pytest.raises(TokenRangeError):
            codec.decode_token(-1, 0)

    def test_category_layout(self):
        sizes = [codec.category_size(c) for c in range(N_CATEGORIES)]
        assert sizes == [3, 63, 32, 10, 9, 2, 3, 6, 3, 2, 2, 6]


class TestEmbedding:
    def test_pinned_values(self):
        assert codec.embed(0, 0) == pytest.approx((0 + 1 / 4) / 12, abs=1e-15)
        assert codec.embed(1, 0) == pytest.approx((1 + 1 / 64) / 12, abs=1e-15)

    def test_within_interval(self):
        for cat, idx, _ in all_tokens():
            x = codec.embed(cat, idx)
            assert cat / 12 < x < (cat + 1) / 12

    def test_monotone_within_category(self):
        for cat in range(N_CATEGORIES):
            values = [codec.embed(cat, i) for i in range(codec.category_size(cat))]
            assert all(a < b for a, b in zip(values, values[1:]))

    def test_cross_category_gap(self):
        # Minimum separation between tokens of different categories.
        min_gap = 1.0
        embedded = [(cat, codec.embed(cat, idx)) for cat, idx, _ in all_tokens()]
        for cat_a, a in embedded:
            for cat_b, b in embedded:
                if cat_a != cat_b:
                    min_gap = min(min_gap, abs(a - b))
        assert min_gap >= 1 / (12 * 64)

    def test_all_strictly_inside_unit_interval_and_off_pad(self):
        for cat, idx, _ in all_tokens():
            x = codec.embed(cat, idx)
            assert 0.0 < x < 1.0

    @given(st.integers(0, N_CATEGORIES - 1), st.integers(0, 62), st.integers(0, 62))
    def test_same_category_pairs_stay_inside_one_twelfth(self, cat, i, j):
        size = codec.category_size(cat)
        i, j = i % size, j % size
        assert abs(codec.embed(cat, i) - codec.embed(cat, j)) < 1 / 12

    def test_out_of_range(self):
        with pytest.raises(TokenRangeError):
            codec.embed(0, 3)
        with pytest.raises(TokenRangeError):
            codec.embed(12, 0)


class TestActions:
    def test_enumeration_pins(self):
        assert codec.encode_action("NO_FAULT") == 0
        assert codec.encode_action("FAULT_DETECTED") == 1
        assert codec.encode_action("CMD_NO_SHUTDOWN") == 2
        assert codec.encode_action("CMD_SET_IP_ADDRESS") == 3
        assert codec.encode_action("PARAM_NONE") == 8
        assert codec.encode_action("PARAM_ADDR_1") == 9
        assert codec.encode_action("PARAM_ADDR_17") == 25
        assert codec.encode_action("PARAM_ADDR_63") == 71
        assert codec.encode_action("PARAM_SUBNET_1") == 72
        assert codec.encode_action("PARAM_SUBNET_32") == 103

    def test_round_trip_all_actions(self):
        for action_id in range(N_ACTIONS):
            assert codec.encode_action(codec.action_name(action_id)) == action_id

    def test_unknown_action(self):
        with pytest.raises(UnknownActionError):
            codec.encode_action("PARAM_ADDR_64")
        with pytest.raises(TokenRangeError):
            codec.action_name(104)

    def test_decode_by_phase(self):
        assert codec.decode_action(0, "diagnose") is Verdict.NO_FAULT
        assert codec.decode_action(1, "diagnose") is Verdict.FAULT_DETECTED
        assert codec.decode_action(3, "command") is Command.SET_IP_ADDRESS
        assert codec.decode_action(8, "parameter") == Param("none", None)
        assert codec.decode_action(25, "parameter") == Param("address", 17)
        assert codec.decode_action(72, "parameter") == Param("subnet", 1)

    def test_phase_illegal_actions_flagged(self):
        assert codec.decode_action(9, "diagnose") is None
        assert codec.decode_action(0, "command") is None
        assert codec.decode_action(2, "parameter") is None

    def test_decode_round_trip_per_phase(self):
        for action_id in range(N_ACTIONS):
            name = codec.action_name(action_id)
            if name in ("NO_FAULT", "FAULT_DETECTED"):
                phase = "diagnose"
            elif name.startswith("CMD_"):
                phase = "command"
            else:
                phase = "parameter"
            assert codec.decode_action(action_id, phase) is not None

    def test_bad_inputs(self):
        with pytest.raises(TokenRangeError):
            codec.decode_action(104, "diagnose")
        with pytest.raises(ValueError):
            codec.decode_action(0, "verdict")


class TestObservation:
    def item(self, **overrides):
        fields = dict(
            kind=netsim.ItemKind.PORT_STATUS,
            device="Device-a",
            interface="Port-1",
            design_value="open",
            current_value="open",
            protocol="OSPF",
            key="Device-a/Port-1/port-status",
        )
        fields.update(overrides)
        return netsim.InfoItem(**fields)

    def test_healthy_port_diagnose(self):
        v = codec.build_observation(self.item(), "diagnose")
        assert v.shape == (OBS_DIM,)
        assert v[4] == v[5] == codec.embed_token("open")
        assert v[0] == codec.embed_token("diagnose")
        assert all(v[8:] == 0.0)

    def test_faulted_port_slots_differ(self):
        v = codec.build_observation(self.item(current_value="closed"), "diagnose")
        assert v[4] == codec.embed_token("open")
        assert v[5] == codec.embed_token("closed")
        assert v[4] != v[5]

    def test_parameter_phase_pending_command(self):
        item = self.item(
            kind=netsim.ItemKind.IP_ADDRESS,
            design_value="ip-address-3",
            current_value="ip-address-5",
            key="Device-a/Port-1/ip-address",
        )
        v = codec.build_observation(item, "parameter", Command.SET_IP_ADDRESS)
        assert v[0] == codec.embed(8, 2)  # third phase token
        assert v[6] == codec.embed(7, 1)  # second command token
        assert v[6] != 0.0

    def test_pad_slots_exactly_zero(self):
        item = self.item(
            kind=netsim.ItemKind.AUTO_SUMMARY,
            interface=None,
            design_value="disabled",
            current_value="enabled",
            protocol="RIP",
            key="Device-a/routing/auto-summary",
        )
        v = codec.build_observation(item, "diagnose")
        assert v[3] == 0.0
        assert v[6] == 0.0

    def test_absent_current_value_embeds(self):
        item = self.item(
            kind=netsim.ItemKind.NETWORK_STATEMENT,
            interface=None,
            design_value="ip-subnet-4",
            current_value=netsim.ABSENT,
            key="Device-a/routing/network-statement/04",
        )
        v = codec.build_observation(item, "diagnose")
        assert v[5] == codec.embed(0, 1)

    def test_pending_command_contract(self):
        with pytest.raises(ValueError):
            codec.build_observation(self.item(), "diagnose", Command.NO_SHUTDOWN)
        with pytest.raises(ValueError):
            codec.build_observation(self.item(), "parameter", None)
        with pytest.raises(ValueError):
            codec.build_observation(self.item(), "triage")

    def test_unknown_token_propagates(self):
        with pytest.raises(UnknownTokenError):
            codec.build_observation(self.item(design_value="shut"), "diagnose")


class TestVocabularyArtifact:
    def test_document_schema_and_shape(self):
        doc = codec.vocab_document()
        assert doc["schema"] == "netop-vocab-1"
        assert len(doc["categories"]) == N_CATEGORIES
        assert len(doc["actions"]) == N_ACTIONS

    def test_json_parses_and_hash_is_stable(self):
        text = codec.vocab_json()
        json.loads(text)
        assert codec.vocab_hash() == codec.vocab_hash()
        assert len(codec.vocab_hash()) == 64
