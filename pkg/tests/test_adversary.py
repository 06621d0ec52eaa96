import random

import pytest

from pqattest import adversary
from pqattest import crypto_suite as cs
from pqattest.deployment import Deployment
from pqattest.errors import HarnessError
from pqattest.protocol.messages import Reason


@pytest.mark.parametrize("name", sorted(adversary.SCENARIOS))
def test_scenario_detected(name):
    r = adversary.run_scenario(name, cs.ProfileId.NoPQ, random.Random(11))
    assert r.control_accepted
    assert r.passed, r.to_json()
    assert not r.false_accept and not r.programmed
    assert r.transcript


def test_keyrelease_tamper_on_pq_profile():
    r = adversary.run_scenario("tamper-keyrelease", cs.ProfileId.PQ_III, random.Random(1))
    assert r.passed and r.observed_reason is Reason.SignatureInvalid


def test_proxy_is_transparent_without_mutation():
    with Deployment(block_interval=0.01) as dep:
        prov = dep.provision(cs.ProfileId.NoPQ)
        proxy = adversary.WireProxy(dep.verifier.address)
        try:
            outcome, session = dep.attest(prov, address=proxy.address)
        finally:
            proxy.close()
        assert outcome.completed and session.accepted


def test_unknown_scenario():
    with pytest.raises(HarnessError):
        adversary.run_scenario("teleport")


def test_run_all_and_report():
    seen = []
    results = adversary.run_all([cs.ProfileId.NoPQ], 1, ["replay-report", "replay-evidence"],
                                seed=3, progress=seen.append)
    assert seen == results and all(r.passed for r in results)
    doc = results[0].to_json(transcript=True)
    assert doc["scenario"] == "replay-report" and doc["passed"] and doc["transcript"]
    assert "transcript" not in results[0].to_json()
