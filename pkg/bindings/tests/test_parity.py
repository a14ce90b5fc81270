"""Bit-level parity of the native kernel against the reference package."""

import json
import random
import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

import stepshape_ext

stepshape = pytest.importorskip("stepshape", reason="parity needs the reference package")

from stepshape.cli import main
from stepshape.schemas import read_jsonl, write_jsonl
from stepshape.segmenter import segment_trajectory, whitespace_token_offsets
from stepshape.shaping import (
    ObjectiveConfig,
    RolloutGroup,
    StdMode,
    StepSignal,
    group_advantages,
    shaped_step_advantages,
)


def _bits(values):
    return [struct.pack("<d", float(v)) for v in values]


def _steps_text(k):
    if k == 0:
        return "free-form text without any markers"
    steps = " ".join(f"Step {i + 1}: move {i}." for i in range(k))
    return (
        f"<begin_of_thought>{steps}<end_of_thought>"
        "<begin_of_solution>Therefore, the answer is x.<end_of_solution>"
    )


def _random_group(rng):
    n = rng.randint(1, 8)
    rewards = [rng.randint(0, 1) for _ in range(n)]
    trajectories, signals = [], []
    valid_flat, sims_flat, boundaries = [], [], [0]
    for r in rewards:
        k = rng.randint(0, 5)
        trajectories.append(segment_trajectory(_steps_text(k)))
        if r == 1:
            signals.append(None)
            valid_flat.extend([0] * k)
            sims_flat.extend([0.0] * k)
        elif k == 0:
            signals.append(None)
        else:
            sig = [
                StepSignal(rng.random() < 0.7, rng.choice([0.0, 0.25, rng.random(), 1.0]))
                for _ in range(k)
            ]
            signals.append(sig)
            valid_flat.extend(int(s.valid) for s in sig)
            sims_flat.extend(s.sim for s in sig)
        boundaries.append(boundaries[-1] + k)
    group = RolloutGroup("g", trajectories, rewards, signals=signals)
    flat = (
        np.asarray(rewards, dtype=np.float64),
        np.asarray(valid_flat, dtype=np.uint8),
        np.asarray(sims_flat, dtype=np.float64),
        np.asarray(boundaries, dtype=np.int64),
    )
    return group, flat


def test_randomized_parity_bitwise():
    rng = random.Random(424242)
    for _ in range(200):
        group, (rewards, valid, sims, boundaries) = _random_group(rng)
        sample = rng.random() < 0.3
        cfg = ObjectiveConfig(std_mode=StdMode.SAMPLE if sample else StdMode.POPULATION)
        reference = shaped_step_advantages(group, cfg)
        adv, coef, shaped = stepshape_ext.shape_group(
            rewards, valid, sims, boundaries, sample_std=sample
        )
        assert _bits(adv) == _bits(reference.group_advantages)
        ref_coef = np.concatenate([c for c in reference.coefficients]) if len(coef) else np.zeros(0)
        ref_steps = np.concatenate([s for s in reference.step_advantages]) if len(shaped) else np.zeros(0)
        assert _bits(coef) == _bits(ref_coef)
        assert _bits(shaped) == _bits(ref_steps)


def test_std_floor_parity_bitwise():
    rewards = np.array([0.0, 1e-9])
    reference = group_advantages([0.0, 1e-9])
    adv, _, _ = stepshape_ext.shape_group(
        rewards, np.zeros(0, np.uint8), np.zeros(0), np.array([0, 0, 0], np.int64)
    )
    assert _bits(adv) == _bits(reference)
    # all-equal rewards collapse to zero, not a floor-amplified residue
    adv, _, _ = stepshape_ext.shape_group(
        np.ones(3), np.zeros(0, np.uint8), np.zeros(0), np.array([0, 0, 0, 0], np.int64)
    )
    assert list(adv) == [0.0, 0.0, 0.0]
    # single trajectory under sample std
    adv, _, _ = stepshape_ext.shape_group(
        np.array([1.0]), np.zeros(0, np.uint8), np.zeros(0), np.array([0, 0], np.int64),
        sample_std=True,
    )
    assert list(adv) == [0.0]


POS_TEXT = (
    "<begin_of_thought>\nStep 1: From (a), follow [r] to reach (b).\n<end_of_thought>\n"
    "<begin_of_solution>\nTherefore, the answer is right.\n<end_of_solution>"
)
NEG_TEXT = (
    "<begin_of_thought>\nStep 1: From (a), follow [r] to reach (b).\n"
    "Step 2: The trail goes cold here.\n<end_of_thought>\n"
    "<begin_of_solution>\nTherefore, the answer is wrong.\n<end_of_solution>"
)


def test_cli_fixture_parity_bitwise(tmp_path):
    rows = []
    rng = random.Random(7)
    for g in range(6):
        trajectories = []
        for _ in range(4):
            if rng.random() < 0.5:
                trajectories.append(
                    {
                        "text": POS_TEXT,
                        "reward": 1,
                        "token_offsets": [list(p) for p in whitespace_token_offsets(POS_TEXT)],
                    }
                )
            else:
                trajectories.append(
                    {
                        "text": NEG_TEXT,
                        "reward": 0,
                        "token_offsets": [list(p) for p in whitespace_token_offsets(NEG_TEXT)],
                        "signals": [
                            {"valid": rng.random() < 0.8, "sim": rng.choice([0.0, 0.5, 1.0, rng.random()])}
                            for _ in range(2)
                        ],
                    }
                )
        rows.append({"group_id": f"g{g}", "gold": "right", "trajectories": trajectories})
    rollouts = tmp_path / "rollouts.jsonl"
    write_jsonl(str(rollouts), rows)
    out = tmp_path / "advantages.jsonl"
    assert main(["shape", "--rollouts", str(rollouts), "--out", str(out)]) == 0

    for source, shaped_row in zip(rows, read_jsonl(str(out))):
        rewards, valid, sims, boundaries = [], [], [], [0]
        for t in source["trajectories"]:
            rewards.append(float(t["reward"]))
            sig = t.get("signals", [])
            if t["reward"] == 1:
                k = len(segment_trajectory(t["text"]).steps)
                valid.extend([0] * k)
                sims.extend([0.0] * k)
                boundaries.append(boundaries[-1] + k)
            else:
                valid.extend(int(s["valid"]) for s in sig)
                sims.extend(s["sim"] for s in sig)
                boundaries.append(boundaries[-1] + len(sig))
        adv, coef, shaped = stepshape_ext.shape_group(
            np.asarray(rewards),
            np.asarray(valid, np.uint8),
            np.asarray(sims),
            np.asarray(boundaries, np.int64),
        )
        assert _bits(adv) == _bits(shaped_row["group_advantages"])
        flat_coef = [c for per in shaped_row["per_trajectory"] for c in per["coefficients"]]
        flat_steps = [s for per in shaped_row["per_trajectory"] for s in per["step_advantages"]]
        assert _bits(coef) == _bits(flat_coef)
        assert _bits(shaped) == _bits(flat_steps)


def test_score_pair_delegates_to_rule_reward():
    from stepshape.reward import rule_reward

    pairs = [
        ("80", "80."),
        ("  The Answer ", "the answer"),
        ("Lyon", "Paris"),
        ("eighty", "80"),
        ("a.b.", "a.b"),
    ]
    for predicted, gold in pairs:
        assert stepshape_ext.score_pair(predicted, gold) == rule_reward(predicted, gold)


def test_input_validation():
    ok = dict(
        rewards=np.array([1.0, 0.0]),
        valid=np.zeros(2, np.uint8),
        sims=np.zeros(2),
        boundaries=np.array([0, 1, 2], np.int64),
    )
    stepshape_ext.shape_group(**ok)
    with pytest.raises(ValueError):
        stepshape_ext.shape_group(**{**ok, "boundaries": np.array([0, 1], np.int64)})
    with pytest.raises(ValueError):
        stepshape_ext.shape_group(**{**ok, "boundaries": np.array([0, 2, 1], np.int64)})
    with pytest.raises(ValueError):
        stepshape_ext.shape_group(**{**ok, "boundaries": np.array([1, 1, 2], np.int64)})
    with pytest.raises(ValueError):
        stepshape_ext.shape_group(**{**ok, "sims": np.zeros(3)})
    with pytest.raises(ValueError):
        stepshape_ext.shape_group(np.zeros(0), np.zeros(0, np.uint8), np.zeros(0), np.array([0], np.int64))
    with pytest.raises(ValueError):
        stepshape_ext.shape_group(**ok, std_floor=0.0)


def test_concurrent_calls_match_serial():
    rng = np.random.default_rng(5)
    n = 4096
    rewards = rng.integers(0, 2, n).astype(np.float64)
    steps_per = 8
    total = n * steps_per
    valid = rng.integers(0, 2, total).astype(np.uint8)
    sims = rng.random(total)
    boundaries = np.arange(0, total + 1, steps_per, dtype=np.int64)
    serial = stepshape_ext.shape_group(rewards, valid, sims, boundaries)

    def run(_):
        return stepshape_ext.shape_group(rewards, valid, sims, boundaries)

    with ThreadPoolExecutor(max_workers=8) as pool:
        for adv, coef, shaped in pool.map(run, range(32)):
            assert np.array_equal(adv, serial[0])
            assert np.array_equal(coef, serial[1])
            assert np.array_equal(shaped, serial[2])
