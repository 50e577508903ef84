"""Dynamics tests: quality normalization arithmetic and mid-run readjustment."""

import math

import numpy as np
import pytest

from fedmarket import (
    ComputeCenter,
    DataOwner,
    MarketParams,
    PaymentLedger,
    QualityAssessment,
    build_preferences,
    evaluate_quality,
    gale_shapley,
    readjust,
    solve_sne,
    verify_sne,
)
from fedmarket.dynamics import QUALITY_FLOOR
from fedmarket.errors import InvalidInputError
from fedmarket.training import ClientRecord, RoundRecord

PARAMS = MarketParams(rho=0.01)


def record_with_deltas(deltas_by_center, owner_of):
    clients = tuple(
        ClientRecord(
            center_id=cid,
            owner_id=owner_of[cid],
            weights=np.zeros(3),
            loss_start=1.0,
            loss_end=1.0 - delta,
            quality_delta=delta,
        )
        for cid, delta in sorted(deltas_by_center.items())
    )
    return RoundRecord(round=3, clients=clients, global_loss=0.5)


def solved_instance(qualities, sigmas=None, capacity=800.0):
    sigmas = sigmas or [0.1 * (i + 3) for i in range(len(qualities))]
    owners = [DataOwner(i + 1, f, capacity=capacity) for i, f in enumerate(qualities)]
    centers = [ComputeCenter(j + 1, s) for j, s in enumerate(sigmas)]
    solution = solve_sne(owners, centers, PARAMS)
    quantities = {c.owner_id: c.quantity for c in solution.profile.contributions}
    prefs = build_preferences(quantities, centers, solution.profile.undertakings)
    matching = gale_shapley(prefs)
    return owners, centers, solution, matching


class TestEvaluateQuality:
    def test_all_equal_maps_to_one(self):
        record = record_with_deltas({1: 0.2, 2: 0.2, 3: 0.2}, {1: 1, 2: 2, 3: 3})
        assessment = evaluate_quality(record, PARAMS)
        assert assessment.normalized == {1: 1.0, 2: 1.0, 3: 1.0}
        assert assessment.excluded == ()

    def test_min_max_arithmetic(self):
        record = record_with_deltas({1: 0.1, 2: 0.3, 3: 0.5}, {1: 1, 2: 2, 3: 3})
        assessment = evaluate_quality(record, PARAMS)
        # Independent rescaling: (v - 0.1) / 0.4, minimum floored.
        assert assessment.normalized[1] == QUALITY_FLOOR
        assert assessment.normalized[2] == pytest.approx((0.3 - 0.1) / 0.4, abs=1e-15)
        assert assessment.normalized[3] == pytest.approx(1.0, abs=1e-15)
        assert assessment.excluded == (1,)

    def test_negative_delta_is_floored_and_flagged(self):
        record = record_with_deltas({1: -0.05, 2: 0.3, 3: 0.5}, {1: 7, 2: 8, 3: 9})
        assessment = evaluate_quality(record, PARAMS)
        assert assessment.normalized[7] == QUALITY_FLOOR
        assert 7 in assessment.excluded

    def test_raw_keyed_by_center(self):
        record = record_with_deltas({4: 0.1, 9: 0.4}, {4: 2, 9: 1})
        assessment = evaluate_quality(record, PARAMS)
        assert set(assessment.raw) == {4, 9}
        assert set(assessment.normalized) == {1, 2}

    def test_monotone_normalization(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            deltas = {i + 1: float(v) for i, v in enumerate(rng.normal(0.3, 0.2, size=6))}
            owner_of = {cid: cid for cid in deltas}
            assessment = evaluate_quality(record_with_deltas(deltas, owner_of), PARAMS)
            raw_order = sorted(deltas, key=lambda c: deltas[c])
            normalized = [assessment.normalized[owner_of[c]] for c in raw_order]
            assert all(a <= b for a, b in zip(normalized, normalized[1:]))


class TestReadjust:
    def test_fixed_point_when_normalized_matches_reports(self):
        owners, centers, solution, matching = solved_instance([1.0, 1.0], [0.5, 1.0])
        assessment = QualityAssessment(raw={1: 0.4, 2: 0.4}, normalized={1: 1.0, 2: 1.0}, excluded=())
        new_solution, delta = readjust(
            solution, assessment, matching, owners, centers, PARAMS, round_index=3
        )
        assert delta.entries == []
        assert new_solution.profile.eta == pytest.approx(solution.profile.eta, rel=1e-12)
        for old, new in zip(solution.profile.contributions, new_solution.profile.contributions):
            assert new.quantity == pytest.approx(old.quantity, rel=1e-12)

    def test_upgraded_owner_buys_more_data(self):
        owners, centers, solution, matching = solved_instance([0.5, 0.6, 0.9])
        normalized = {1: 0.5, 2: 0.8, 3: 0.9}
        assessment = QualityAssessment(raw={}, normalized=normalized, excluded=())
        new_solution, delta = readjust(
            solution, assessment, matching, owners, centers, PARAMS, round_index=3
        )
        old_x = {c.owner_id: c.quantity for c in solution.profile.contributions}
        new_x = {c.owner_id: c.quantity for c in new_solution.profile.contributions}
        assert new_x[2] > old_x[2]
        payers = {e.payer_owner for e in delta.entries}
        assert 2 in payers
        entry = next(e for e in delta.entries if e.payer_owner == 2)
        assert entry.payee_center == matching.pairs[2]
        assert entry.amount == pytest.approx(PARAMS.rho * (new_x[2] - old_x[2]), rel=1e-12)

    def test_no_refund_for_downgraded_owner(self):
        owners, centers, solution, matching = solved_instance([0.5, 0.6, 0.9])
        assessment = QualityAssessment(
            raw={}, normalized={1: 0.5, 2: 0.4, 3: 0.9}, excluded=()
        )
        new_solution, delta = readjust(
            solution, assessment, matching, owners, centers, PARAMS, round_index=3
        )
        assert all(e.amount >= 0 for e in delta.entries)
        assert all(e.payer_owner != 2 for e in delta.entries)
        old_x = {c.owner_id: c.quantity for c in solution.profile.contributions}
        new_x = {c.owner_id: c.quantity for c in new_solution.profile.contributions}
        assert new_x[2] < old_x[2]

    def test_threshold_exclusion_resolves_reduced_game(self):
        owners, centers, solution, matching = solved_instance([0.5, 0.6, 0.7, 0.9])
        normalized = {1: QUALITY_FLOOR, 2: 0.02, 3: 0.8, 4: 1.0}
        excluded = (1, 2)
        assessment = QualityAssessment(raw={}, normalized=normalized, excluded=excluded)
        new_solution, _ = readjust(
            solution, assessment, matching, owners, centers, PARAMS, round_index=3
        )
        assert new_solution.intermediates.participants == (3, 4)
        reasons = {d.owner_id: d.reason for d in new_solution.dropped_owners}
        assert reasons[1] == "reported quality below threshold"
        assert reasons[2] == "reported quality below threshold"

    def test_matching_object_is_untouched(self):
        owners, centers, solution, matching = solved_instance([0.5, 0.6, 0.9])
        pairs_before = dict(matching.pairs)
        assessment = QualityAssessment(
            raw={}, normalized={1: 0.4, 2: 0.9, 3: 1.0}, excluded=()
        )
        new_solution, _ = readjust(
            solution, assessment, matching, owners, centers, PARAMS, round_index=3
        )
        assert new_solution.profile.matching is matching
        assert matching.pairs == pairs_before

    def test_aborts_when_too_few_owners_clear_threshold(self):
        owners, centers, solution, matching = solved_instance([0.5, 0.6, 0.9])
        assessment = QualityAssessment(
            raw={}, normalized={1: QUALITY_FLOOR, 2: 0.01, 3: 1.0}, excluded=(1, 2)
        )
        new_solution, delta = readjust(
            solution, assessment, matching, owners, centers, PARAMS, round_index=3
        )
        assert new_solution is solution
        assert delta.entries == []

    def test_monotone_response_in_normalized_quality(self):
        owners, centers, solution, matching = solved_instance([0.5, 0.6, 0.9])
        quantities = []
        for f2 in (0.55, 0.7, 0.85, 0.95):
            assessment = QualityAssessment(
                raw={}, normalized={1: 0.5, 2: f2, 3: 0.9}, excluded=()
            )
            new_solution, _ = readjust(
                solution, assessment, matching, owners, centers, PARAMS, round_index=3
            )
            new_x = {c.owner_id: c.quantity for c in new_solution.profile.contributions}
            quantities.append(new_x[2])
        assert all(a < b for a, b in zip(quantities, quantities[1:]))

    def test_adjusted_profile_verifies_as_equilibrium(self):
        from dataclasses import replace

        owners, centers, solution, matching = solved_instance([0.5, 0.6, 0.9])
        normalized = {1: 0.45, 2: 0.75, 3: 1.0}
        assessment = QualityAssessment(raw={}, normalized=normalized, excluded=())
        new_solution, _ = readjust(
            solution, assessment, matching, owners, centers, PARAMS, round_index=3
        )
        adjusted_owners = [replace(o, reported_quality=normalized[o.id]) for o in owners]
        report = verify_sne(new_solution, adjusted_owners, centers, PARAMS)
        assert report.max_gain < 1e-5


class TestPaymentLedger:
    def test_rejects_negative_amounts(self):
        ledger = PaymentLedger()
        with pytest.raises(InvalidInputError):
            ledger.add(1, 1, 2, -0.5)

    def test_totals(self):
        ledger = PaymentLedger()
        ledger.add(0, 1, 2, 1.5)
        ledger.add(3, 1, 2, 0.5)
        ledger.add(3, 2, 1, 2.0)
        assert ledger.total() == pytest.approx(4.0)
        assert ledger.total_paid_by(1) == pytest.approx(2.0)
        assert ledger.total_received_by(2) == pytest.approx(2.0)

    def test_csv_export(self, tmp_path):
        ledger = PaymentLedger()
        ledger.add(0, 1, 2, 1.25)
        ledger.add(3, 2, 1, 0.125)
        path = tmp_path / "ledger.csv"
        ledger.to_csv(str(path))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "round,payer,payee,amount"
        assert lines[1] == "0,1,2,1.25"
        assert lines[2] == "3,2,1,0.125"
