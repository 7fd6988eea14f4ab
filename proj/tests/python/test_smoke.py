"""Smoke tests for the python module: boots the machine, runs the checker,
and pokes the mailbox primitive directly."""

import json
import sys

import splitsim


def test_boot():
    r = splitsim.run_scenario("boot")
    assert r["pass"], r["checks"]
    assert r["metrics"]["boot_ticks"] > 0
    # the trace is one json object per line
    first = json.loads(r["trace_jsonl"].splitlines()[0])
    assert first["event"] == "power_on"


def test_checker_clean_and_mutant():
    clean = splitsim.check()
    assert clean["clean"], clean["violations"]
    assert clean["states_explored"] > 100

    bad = splitsim.check(mutant="skip-wipe-on-yield")
    assert not bad["clean"]
    cex = bad["violations"][0]
    assert cex["length"] <= 8
    assert splitsim.replay(cex["json"])


def test_mailbox_primitive():
    mb = splitsim.Mailbox(depth=4, msg_size=64)
    assert mb.owner == 0 and mb.default_owned
    assert mb.delegate(caller=0, target=2, msgs=2, deadline=100) == "ok"
    assert mb.write(caller=2, msg=b"hello", now=1) == "ok"
    assert mb.read(caller=1, now=1) == b"hello"
    # outsiders see the constant dummy
    assert mb.status(caller=3, now=1)["is_dummy"]
    # second write exhausts the budget: back to the manager, wiped
    assert mb.write(caller=2, msg=b"bye", now=2) == "ok"
    assert mb.owner == 0 and mb.default_owned
    assert mb.read(caller=1, now=2) == "queue-empty"


def test_contention_metric():
    r = splitsim.run_scenario("contention", k=10)
    assert r["pass"], r["checks"]
    assert abs(r["metrics"]["gap_ticks"] - 10) <= 1


def test_tcb():
    r = splitsim.run_scenario("banking")
    assert r["pass"], [c for c in r["checks"] if not c["pass"]]
    rep = splitsim.tcb_report(r["trace_jsonl"])
    assert rep["C"]["strong"] == ["Prog", "mailbox", "reset-guard", "arbiter", "RoT"]
    assert rep["Ag"]["strong"] == []


def main():
    tests = [test_boot, test_checker_clean_and_mutant, test_mailbox_primitive,
             test_contention_metric, test_tcb]
    for t in tests:
        t()
        print(f"ok {t.__name__}")
    print("python smoke: all green")
    return 0


if __name__ == "__main__":
    sys.exit(main())
