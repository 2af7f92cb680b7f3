"""Quick end-to-end check of the Python bindings.

Build and install the extension first:

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml

then run `python python/smoke_test.py`.
"""

import math
import tempfile
from pathlib import Path

import alignlab


def check_policy():
    policy = alignlab.Policy(1, 3, [0.1 * i for i in range(9)])
    probs = policy.probs([2])
    assert abs(sum(probs) - 1.0) < 1e-12
    lp = policy.log_prob([2], [0, 1])
    assert math.isclose(lp, math.log(policy.probs([2])[0]) + math.log(policy.probs([0])[1]))
    assert len(policy.grad_log_prob([2], [0, 1])) == 9
    tokens, terminated = policy.sample([2], max_length=5, eos=0, seed=1)
    assert tokens == policy.sample([2], max_length=5, eos=0, seed=1)[0]
    assert 1 <= len(tokens) <= 5 and terminated == (tokens[-1] == 0)
    clone = alignlab.Policy.from_json(policy.to_json())
    assert clone.logits == policy.logits
    assert alignlab.kl_k3_estimate(policy, policy, [2], [tokens]) == 0.0


def check_advantages():
    correction = alignlab.length_correction([2, 3, 5, 8], [1.0, 0.0, 1.0, 0.0], 0.05)
    assert all(abs(a - b) < 1e-12 for a, b in zip(correction, [0.0125, 0.0125, -0.025, 0.0]))
    assert alignlab.baseline_advantages([1.0, 0.0]) == [0.5, -0.5]
    assert math.isclose(alignlab.k3(math.log(0.8)), 0.8 - 1 - math.log(0.8))


def check_training():
    policy, metrics = alignlab.cpgd_train(config={"steps": 20, "advantage_mode": "cale"}, seed=3)
    assert len(metrics) == 20
    summary = alignlab.evaluate(policy, samples_per_prompt=200, seed=3)
    assert 0.0 <= summary["accuracy"] <= 1.0 and summary["mean_length"] > 0

    run = alignlab.constrained_train(config={"steps": 50}, seed=0)
    lam = [0.01]
    for row in run["metrics"]:
        lam = alignlab.dual_step(lam, [0.9], 0.05, [row["mean_utility"]])
        assert lam[0] == row["lambda"]
    cal = alignlab.calibration([(0.9, 1.0), (0.9, 0.0), (0.1, 0.0)])
    assert math.isclose(cal["fc_rate"], 1 / 3)


def check_guidance():
    outcomes = alignlab.adversarial_decode(config={"prompts": 50}, seed=6)
    assert len(outcomes) == 50
    assert all(o["guided_unsafe"] == 0 for o in outcomes if o["clean_pools"])


def check_edits():
    a = alignlab.tokenize("the cat sat")
    b = alignlab.tokenize("the dog sat")
    segments = [s for s in alignlab.diff(a, b) if s["op"] != "equal"]
    assert segments == [{"start": 1, "end": 2, "op": "replace", "text": ["dog"]}], segments
    assert alignlab.edit_distance("the cat sat", "the dog sat") == 2 / 3

    def respond(hint):
        return hint[:-1]

    def solve(hint):
        return hint, ["ok"] if len(hint) >= 2 else ["?"]

    def validate(hint, solved, reference):
        return solved[1] == reference[1]

    out = alignlab.iterative_simplify(list("abcde"), ([], ["ok"]), respond, solve, validate)
    assert out["hint"] == ["a", "b"] and out["accepted"] == 3, out


def check_harness():
    with tempfile.TemporaryDirectory() as tmp:
        a = alignlab.run_experiment(
            {"seed": 1, "output_dir": str(Path(tmp) / "a"), "kind": "cpgd", "cpgd": {"steps": 5}, "eval_samples": 10}
        )
        assert (Path(a) / "metrics.csv").is_file()
        cmp = alignlab.compare(a, a)
        assert all(c["ties"] == 1 for c in cmp["columns"])


if __name__ == "__main__":
    for check in [check_policy, check_advantages, check_training, check_guidance, check_edits, check_harness]:
        check()
        print(f"{check.__name__}: ok")
    print("smoke test passed")
