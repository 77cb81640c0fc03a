import os

import pytest
from hypothesis import HealthCheck, settings

from twg.config import EngineConfig
from twg.data import Sample, Source
from twg.policy.scripted import ScriptedPolicy
from twg.rewards import Interval
from twg.rollout import run_trajectory
from twg.videorep import VideoMeta

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=500, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

OPTIONS = ("red", "green", "blue", "yellow")


def ground(s, e, think="look closer"):
    return f"<think>{think}</think><ground>{s}, {e}</ground>"


def answer(letter, think="that settles it"):
    return f"<think>{think}</think><answer>{letter}</answer>"


GARBAGE = "I think the answer might be somewhere in the middle"


def make_sample(sid="s0", duration=640.0, key="B", gt=None, source=Source.GENERALQA, question="What color is the car?"):
    return Sample(
        sample_id=sid,
        video=VideoMeta(f"v-{sid}", duration, f"file://{sid}.mp4"),
        question=question,
        options=OPTIONS,
        answer_key=key,
        gt_grounding=Interval(*gt) if gt is not None else None,
        source=source,
    )


def scripted_run(turns, sample=None, cfg=None, self_confirm=None, seed=0):
    cfg = cfg or EngineConfig()
    sample = sample or make_sample()
    policy = ScriptedPolicy(list(turns), self_confirm=self_confirm)
    return run_trajectory(policy, sample, cfg, cfg.eval_sampling, seed), policy


@pytest.fixture
def cfg():
    return EngineConfig()


# acceptance criteria report one line each; printed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
