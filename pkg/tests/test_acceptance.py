"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records one PASS/FAIL line (shown in the pytest terminal summary)
before asserting. Criteria 8-10 train the toy policy over five seeds and take
a few minutes each.
"""

import itertools
import json
import math
import string
import time
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from conftest import ACCEPTANCE, GARBAGE, answer, ground, make_sample, scripted_run
from reward_oracle import oracle_breakdown

from twg.config import EngineConfig, GateConfig, GrpoConfig
from twg.data import Source, dump_samples, filter_label_coverage, filter_min_duration, sample_to_record
from twg.grpo import (
    DegenerateGroup,
    clipped_objective,
    fd_gradient,
    group_advantages,
    prepare_toy_step,
    toy_objective,
)
from twg.harness.cli import main as cli
from twg.harness.logs import read_jsonl, trajectory_record, write_jsonl
from twg.harness.train import rollout_group
from twg.policy.toy import FEATURES, ToyPolicy, ToyPolicyParams
from twg.rewards import Interval, grounding_components, grounding_reward, temporal_iou, total_reward
from twg.rollout import StopReason, run_trajectory
from twg.synthetic import make_corpus
from twg.tagfmt import ParsedTurn, TurnKind, parse_turn_output, render_action
from twg.videorep import Grain
from twg import experiments

CFG = EngineConfig()
F = CFG.views.coarse_frames


def record(n, name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {name} ({detail})"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


# ---- 1 ------------------------------------------------------------------


def random_turn(rng, kind):
    if kind == "G":
        s = int(rng.integers(F))
        return ground(s, int(rng.integers(s, F)))
    if kind == "A":
        return answer(str(rng.choice(list("ABCD"))))
    return GARBAGE


def oracle_corpus(n_per_shape=16, seed=0):
    """Scripted trajectories over every shape: 0-3 groundings, answer / malformed / max-turns ends."""
    rng = np.random.default_rng(seed)
    shapes = []
    for n_ground in range(4):
        for end in ("A", "M", None):
            shape = "G" * n_ground + (end or "")
            if 1 <= len(shape) <= 3 and (end is not None or n_ground == 3):
                shapes.append(shape)
    samples, runs = [], []
    i = 0
    for shape in shapes:
        for labeled in (True, False):
            for _ in range(n_per_shape):
                d = float(np.round(rng.uniform(20, 2000), 1))
                gt = None
                if labeled:
                    a, b = sorted(rng.uniform(0, d, 2))
                    if rng.random() < 0.15:
                        b = a  # degenerate label
                    gt = (float(a), float(b))
                key = str(rng.choice(list("ABCD")))
                s = make_sample(f"o{i:04d}", duration=d, key=key, gt=gt, source=Source.NEXTGQA if labeled else Source.GENERALQA)
                # bias the final answer towards the key so both correct and wrong occur
                turns = [random_turn(rng, c) for c in shape]
                if shape.endswith("A") and rng.random() < 0.5:
                    turns[-1] = answer(key)
                sc = str(rng.choice([answer(key), answer("ABCD"[("ABCD".index(key) + 1) % 4]), GARBAGE]))
                runs.append((s, turns, sc))
                samples.append(s)
                i += 1
    return samples, runs


def test_1_reward_oracle_equivalence(tmp_path):
    t0 = time.perf_counter()
    samples, runs = oracle_corpus()
    recs = []
    for s, turns, sc in runs:
        t, pol = scripted_run(turns, s, self_confirm=sc, seed=len(recs))
        recs.append(trajectory_record(t, total_reward(t, s, pol, CFG.gate, CFG.views)))
    dump_samples(samples, tmp_path / "data.jsonl")
    write_jsonl(recs, tmp_path / "log.jsonl")
    code = cli(["replay-rewards", str(tmp_path / "log.jsonl"), str(tmp_path / "data.jsonl"), "--out", str(tmp_path / "replay.jsonl")])
    replayed = {r["sample_id"]: r["reward"] for r in read_jsonl(tmp_path / "replay.jsonl")}
    data = {s.sample_id: json.loads(json.dumps(sample_to_record(s))) for s in samples}
    mismatches = 0
    for rec in recs:
        want = oracle_breakdown(rec, data[rec["sample_id"]], CFG.gate.gamma, F)
        if replayed[rec["sample_id"]] != want:
            mismatches += 1
    elapsed = time.perf_counter() - t0

    cases = Counter(r["reward"]["case"] for r in recs)
    stops = Counter(r["stop"] for r in recs)
    correct = Counter(r["reward"]["r_acc"] for r in recs)
    spans = (
        len(recs) >= 200
        and set(cases) == {"a", "b", "c"}
        and set(stops) == {"answered", "malformed", "max_turns"}
        and set(correct) == {0.0, 1.0}
        and {r["n_groundings"] for r in recs} == {0, 1, 2, 3}
    )
    ok = code == 0 and mismatches == 0 and spans and elapsed < 10.0
    record(1, "reward oracle equivalence", ok, f"{len(recs)} trajectories, {mismatches} mismatches, {elapsed:.2f} s")


# ---- 2 ------------------------------------------------------------------


def test_2_gate_soundness():
    rng = np.random.default_rng(1)
    n, violations = 10_000, 0
    cases = Counter()
    for i in range(n):
        length = int(rng.integers(1, 4))
        turns = [random_turn(rng, str(rng.choice(list("GAM")))) for _ in range(length)]
        # pad so a script never runs out before the rollout stops
        turns += [random_turn(rng, "G") for _ in range(3 - length)]
        d = float(rng.uniform(20, 2000))
        gt = None
        if rng.random() < 0.5:
            a, b = sorted(rng.uniform(0, d, 2))
            gt = (float(a), float(b))
        key = str(rng.choice(list("ABCD")))
        s = make_sample(f"g{i}", duration=d, key=key, gt=gt)
        sc = str(rng.choice([answer(key), answer("A"), GARBAGE]))
        gate = GateConfig(gamma=float(rng.uniform(0.01, 1.0)))
        t, pol = scripted_run(turns, s, self_confirm=sc, seed=i)
        bd = total_reward(t, s, pol, gate, CFG.views)
        cases[bd.case] += 1
        if bd.r_acc == 0.0 and bd.total != bd.r_format:
            violations += 1
    ok = violations == 0 and all(cases[c] > 0 for c in "abc")
    record(2, "gate soundness", ok, f"{n} trajectories, cases {dict(sorted(cases.items()))}, {violations} violations")


# ---- 3 ------------------------------------------------------------------


def exact_reward(a, b):
    """Grounding reward in rational arithmetic."""
    a0, a1, b0, b1 = map(Fraction, (a.start_s, a.end_s, b.start_s, b.end_s))
    inter = max(Fraction(0), min(a1, b1) - max(a0, b0))
    union = (a1 - a0) + (b1 - b0) - inter
    iou = Fraction(0) if union == 0 else inter / union
    return iou, iou + (Fraction(1, 2) if iou > 0 else 0)


def test_3_grounding_reward_table():
    rng = np.random.default_rng(2)
    worst, flips = 0.0, 0
    for i in range(1000):
        # a third of the pairs touch or are disjoint, so IoU = 0 is well covered
        a0, a1 = sorted(rng.uniform(0, 100, 2))
        if i % 3 == 0:
            b0 = a1 + float(rng.choice([0.0, rng.uniform(0, 10)]))
            b1 = b0 + rng.uniform(0, 10)
        else:
            b0, b1 = sorted(rng.uniform(0, 100, 2))
        a, b = Interval(float(a0), float(a1)), Interval(float(b0), float(b1))
        iou_x, want = exact_reward(a, b)
        got = grounding_reward(a, b)
        worst = max(worst, abs(got - float(want)))
        soft, hard = grounding_components(temporal_iou(a, b))
        if (hard == 0.5) != (iou_x > 0) or (hard == 0.5) != (soft > 0):
            flips += 1
    ok = worst < 1e-12 and flips == 0
    record(3, "grounding-reward table", ok, f"1000 pairs, max abs error {worst:.2e}, {flips} indicator errors")


# ---- 4 ------------------------------------------------------------------


def test_4_advantage_standardization():
    rng = np.random.default_rng(3)
    worst_mu = worst_sigma = worst_shift = 0.0
    scale_exact = degenerate_ok = True
    for _ in range(10_000):
        G = int(rng.integers(2, 65))
        r = rng.normal(0, rng.uniform(0.1, 3), G)
        if rng.random() < 0.3:
            r = np.round(r)  # ties, like discrete rewards
            if np.all(r == r[0]):
                r[0] += 1.0
        a = np.array(group_advantages(r.tolist()))
        worst_mu = max(worst_mu, abs(a.mean()))
        worst_sigma = max(worst_sigma, abs(a.std() - 1))
        k = 2.0 ** int(rng.integers(-8, 9))
        scale_exact &= group_advantages((r * k).tolist()) == a.tolist()
        shifted = np.array(group_advantages((r + rng.uniform(-10, 10)).tolist()))
        worst_shift = max(worst_shift, float(np.max(np.abs(shifted - a))))
        try:
            group_advantages([float(r[0])] * G)
            degenerate_ok = False
        except DegenerateGroup:
            pass
    ok = worst_mu < 1e-9 and worst_sigma < 1e-9 and degenerate_ok and scale_exact and worst_shift < 1e-9
    record(
        4,
        "advantage standardization",
        ok,
        f"|mu| {worst_mu:.1e}, |sigma-1| {worst_sigma:.1e}, shift drift {worst_shift:.1e}, power-of-two scale exact {scale_exact}",
    )


# ---- 5 ------------------------------------------------------------------


def test_5_objective_math():
    examples = [(1.0, 1.0, 1.0), (2.0, 1.0, 1.2), (0.5, -1.0, -0.8)]
    worst = max(abs(clipped_objective([math.log(r)], [0.0], [a], 0.2) - w) for r, a, w in examples)

    rng = np.random.default_rng(5)
    params = ToyPolicyParams(rng.normal(0, 0.5, len(FEATURES)))
    cfg = EngineConfig().replace(**{"grpo.group_size": 4})
    pol = ToyPolicy(params)
    data = make_corpus(8, seed=5, labeled_fraction=0.5, gist_fraction=0.3)
    groups = [rollout_group(pol, s, cfg, [100 * i + j for j in range(4)]) for i, s in enumerate(data)]
    for g in groups:
        g.advantages = rng.normal(size=g.size).tolist()
    inp = prepare_toy_step(params, groups)
    fd = fd_gradient(lambda th: toy_objective(th, inp, GrpoConfig(kl_beta=0.0)), params.theta, 1e-5)
    analytic = np.zeros_like(params.theta)
    for g in groups:
        for t, adv in zip(g.trajectories, g.advantages):
            for phi, c in pol.turn_tables(t):
                z = phi @ params.theta
                p = np.exp(z - z.max())
                p /= p.sum()
                analytic += adv * (phi[c] - p @ phi) / g.size
    analytic /= len(groups)
    rel = float(np.linalg.norm(fd - analytic) / np.linalg.norm(analytic))
    ok = worst <= 1e-12 and rel < 1e-4
    record(5, "objective math", ok, f"worked examples max error {worst:.1e}, gradient relative error {rel:.1e}")


# ---- 6 ------------------------------------------------------------------


class Recorder:
    reports_logprobs = True

    def __init__(self, turns):
        self.turns, self.requests = list(turns), []

    def generate(self, req):
        from twg.policy.base import GenerationResponse

        self.requests.append(req)
        return GenerationResponse(self.turns[req.turn_index], 0.0, 1)


def test_6_rollout_state_machine():
    acts = {"G": ground(8, 15), "A": answer("B"), "M": GARBAGE}
    patterns = [p for n in range(1, 4) for p in itertools.product("GAM", repeat=n)]
    bad = []
    for p in patterns:
        rec = Recorder([acts[c] for c in p] + [acts["G"]] * 3)
        t = run_trajectory(rec, make_sample(), CFG, CFG.eval_sampling, 0)
        stop_at = next((i for i, c in enumerate(p) if c in "AM"), None)
        n = stop_at + 1 if stop_at is not None else 3
        want_stop = {"A": StopReason.ANSWERED, "M": StopReason.MALFORMED}[p[stop_at]] if stop_at is not None else StopReason.MAX_TURNS
        fine_counts = [sum(v.grain is Grain.FINE for m in r.context for v in m.views) for r in rec.requests]
        ok = (
            len(t.turns) == n <= 3
            and t.stop is want_stop
            and fine_counts == list(range(n))
            and all(x.parsed.kind is TurnKind.GROUNDING for x in t.turns[:-1])
            and (t.final_answer is not None) == (want_stop is StopReason.ANSWERED)
        )
        if not ok:
            bad.append("".join(p))

    rng = np.random.default_rng(6)
    letters = string.ascii_letters + string.digits + " .,!?'-"
    round_trip_fail = 0
    for _ in range(10_000):
        think = "".join(rng.choice(list(letters), int(rng.integers(1, 30)))).strip() or "x"
        if rng.random() < 0.5:
            s = int(rng.integers(F))
            turn = ParsedTurn.grounding(think, s, int(rng.integers(s, F)))
        else:
            ans = "".join(rng.choice(list(letters), int(rng.integers(1, 10)))).strip() or "A"
            turn = ParsedTurn.answering(think, ans)
        round_trip_fail += parse_turn_output(render_action(turn), F) != turn
    ok = not bad and round_trip_fail == 0
    record(
        6,
        "rollout state machine",
        ok,
        f"{len(patterns)} script patterns, {len(bad)} violations; 10000 round trips, {round_trip_fail} failures",
    )


# ---- 7 ------------------------------------------------------------------


def test_7_dataset_filters():
    corpus = [
        make_sample("dur15", duration=15.0),
        make_sample("dur20", duration=20.0),
        make_sample("dur300", duration=300.0),
        make_sample("cov005", duration=1000.0, gt=(400.0, 405.0)),
        make_sample("cov06", duration=1000.0, gt=(400.0, 460.0)),
        make_sample("cov01", duration=1000.0, gt=(0.0, 10.0)),
        make_sample("short_cov06", duration=15.0, gt=(0.0, 0.9)),
        make_sample("unlabeled", duration=1000.0),
    ]
    kept = [s.sample_id for s in filter_label_coverage(filter_min_duration(corpus, 20.0), 0.01)]

    # recount with exact fractions: keep iff duration >= 20 and (unlabeled or IoU >= 1/100)
    def keep(s):
        if Fraction(s.video.duration) < 20:
            return False
        if s.gt_grounding is None:
            return True
        g = s.gt_grounding
        return (Fraction(g.end_s) - Fraction(g.start_s)) / Fraction(s.video.duration) >= Fraction(1, 100)

    want = [s.sample_id for s in corpus if keep(s)]
    ok = kept == want and {"dur15", "cov005", "short_cov06"}.isdisjoint(kept) and {"dur20", "cov06", "cov01"} <= set(kept)
    record(7, "dataset filters", ok, f"kept {kept}")


# ---- 8-10: closed-loop experiments -----------------------------------------


@pytest.mark.slow
def test_8_closed_loop_learning():
    t0 = time.perf_counter()
    res = experiments.closed_loop()
    elapsed = time.perf_counter() - t0
    start = res.mean("default", "mean_r_acc", 0, 10)
    end = res.mean("default", "mean_r_acc", -10)
    ok = end >= 0.60 and elapsed < 300
    record(8, "closed-loop learning", ok, f"mean r_acc {start:.3f} (first 10 steps) -> {end:.3f} (last 10), 5 seeds, {elapsed:.0f} s")


@pytest.mark.slow
def test_9_pseudo_reward_direction():
    res = experiments.pseudo_ablation()
    g_off = res.mean("pseudo_off", "grounded_fraction", -30)
    g_on = res.mean("pseudo_on", "grounded_fraction", -30)
    a_off = res.mean("pseudo_off", "mean_r_acc", -30)
    a_on = res.mean("pseudo_on", "mean_r_acc", -30)
    # accuracy saturates near 1 in both arms; 0.01 absorbs seed noise, and the strict comparison is reported
    ok = g_on < g_off and a_on >= a_off - 0.01
    rel = (g_off - g_on) / g_off if g_off else float("nan")
    record(
        9,
        "pseudo-reward direction",
        ok,
        f"grounded fraction off {g_off:.3f} vs on {g_on:.3f} ({rel:.1%} lower), "
        f"accuracy off {a_off:.4f} vs on {a_on:.4f}, strictly equal-or-better: {a_on >= a_off}",
    )


@pytest.mark.slow
def test_10_reward_shaping_direction():
    res = experiments.shaping_ablation()
    soft0 = res.mean("soft_only", "grounded_fraction", 0, 10)
    soft1 = res.mean("soft_only", "grounded_fraction", -20)
    hard0 = res.mean("soft_hard", "grounded_fraction", 0, 10)
    hard1 = res.mean("soft_hard", "grounded_fraction", -20)
    ok = soft1 <= 0.10 and soft1 < soft0 and hard1 >= 0.25
    record(
        10,
        "stage-1 reward-shaping direction",
        ok,
        f"grounded fraction soft-only {soft0:.3f} -> {soft1:.3f}, soft+hard {hard0:.3f} -> {hard1:.3f}",
    )
