"""Trainable toy policy for the synthetic needle world.

The policy is a log-linear softmax over a small set of action templates::

    answer(o)   for each option letter
    ground(w)   for each of W equal windows of the coarse index range
    babble      a think block with no action (parses as malformed)

conditioned on a summary of the context: which coarse frames show an
unresolved needle, which letters are legible in the views, how many fine views
have been added, and whether this is a self-confirm query (answers only).
Logits are ``features(obs, action) @ theta``; with a handful of shared
features the log-probabilities are exact and cheap to recompute, which is
what the finite-difference optimizer needs.
"""

from __future__ import annotations

import math
import string
import threading
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from ..synthetic import decode_handle
from ..videorep import Grain
from .base import GenerationRequest, GenerationResponse, Message, PolicyKind

if TYPE_CHECKING:
    from ..rollout import Trajectory

FEATURES = (
    "ground",  # any grounding action
    "ground_on_blur",  # ground a window where the coarse view shows an unresolved needle
    "ground_no_blur",  # ground although the coarse view shows no needle at all
    "ground_with_gist",  # ground although the coarse gist already suggests an answer
    "reground",  # ground again after a fine view was already added
    "answer_seen",  # answer the letter legible on a needle
    "answer_gist",  # answer the letter suggested by the coarse gist
    "babble",  # emit no action
)

BABBLE_TEXT = "<think>I am not sure what to do next</think>"


@dataclass(frozen=True)
class Observation:
    self_confirm: bool
    n_options: int
    coarse_frames: int
    blur_frames: frozenset[int] = frozenset()
    seen_letter: str | None = None
    gist_letter: str | None = None
    n_fine: int = 0


@dataclass
class ToyPolicyParams:
    theta: np.ndarray
    feature_names: tuple[str, ...] = FEATURES
    windows: int = 8
    zoom_hides_gist: bool = False  # the coarse gist stops informing answers once a fine view is in context

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).copy()
        unknown = set(self.feature_names) - set(FEATURES)
        if unknown:
            raise ValueError(f"unknown toy features {sorted(unknown)}")
        if self.theta.shape != (len(self.feature_names),):
            raise ValueError("theta must have one entry per feature")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("toy parameters must be finite")

    @classmethod
    def zeros(cls, feature_names: Sequence[str] = FEATURES, windows: int = 8, zoom_hides_gist: bool = False) -> ToyPolicyParams:
        names = tuple(feature_names) or FEATURES
        return cls(np.zeros(len(names)), names, windows, zoom_hides_gist)

    def with_theta(self, theta: np.ndarray) -> ToyPolicyParams:
        return ToyPolicyParams(theta, self.feature_names, self.windows, self.zoom_hides_gist)

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "feature_names": list(self.feature_names),
            "windows": self.windows,
            "zoom_hides_gist": self.zoom_hides_gist,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ToyPolicyParams:
        return cls(
            np.array(d["theta"], dtype=float), tuple(d["feature_names"]), int(d["windows"]), bool(d.get("zoom_hides_gist", False))
        )


# ---- observations -------------------------------------------------------


def observe(context: Sequence[Message]) -> Observation:
    prompt = next((m.prompt for m in reversed(context) if m.prompt is not None), None)
    self_confirm = prompt is not None and prompt.role.value == "self_confirm"
    n_options = len(prompt.options) if prompt is not None and prompt.options else 4
    coarse_frames = prompt.coarse_frames if prompt is not None else 64

    blur: set[int] = set()
    seen = gist = None
    n_fine = 0
    for m in context:
        for view in m.views:
            if view.grain is Grain.FINE:
                n_fine += 1
            for idx, handles in enumerate(view.frames):
                for h in handles:
                    ev = decode_handle(h)
                    if ev is None:
                        continue
                    if ev.kind == "gist":
                        if view.grain is Grain.COARSE:
                            gist = ev.letter
                    elif ev.kind == "blob":
                        if view.grain is Grain.COARSE:
                            blur.add(idx)
                    elif view.tokens_per_frame >= ev.detail:
                        seen = ev.letter
                    elif view.grain is Grain.COARSE:
                        blur.add(idx)
    return Observation(self_confirm, n_options, coarse_frames, frozenset(blur), seen, gist, n_fine)


# ---- action templates ---------------------------------------------------


@dataclass(frozen=True)
class Action:
    kind: str  # "answer" | "ground" | "babble"
    arg: int = 0
    text: str = field(default="", compare=False)


def window_frames(w: int, windows: int, coarse_frames: int) -> tuple[int, int]:
    return w * coarse_frames // windows, (w + 1) * coarse_frames // windows - 1


def actions_for(obs: Observation, windows: int) -> list[Action]:
    letters = string.ascii_uppercase[: obs.n_options]
    acts = [Action("answer", i, f"<think>the answer is {c}</think><answer>{c}</answer>") for i, c in enumerate(letters)]
    if obs.self_confirm:
        return acts
    W = min(windows, obs.coarse_frames)
    for w in range(W):
        s, e = window_frames(w, W, obs.coarse_frames)
        acts.append(Action("ground", w, f"<think>look closer at window {w}</think><ground>{s}, {e}</ground>"))
    acts.append(Action("babble", 0, BABBLE_TEXT))
    return acts


def feature_matrix(
    obs: Observation, acts: Sequence[Action], names: Sequence[str], windows: int, zoom_hides_gist: bool = False
) -> np.ndarray:
    gist = None if zoom_hides_gist and obs.n_fine else obs.gist_letter
    W = min(windows, obs.coarse_frames)
    blur_w = {i * W // obs.coarse_frames for i in obs.blur_frames}
    letters = string.ascii_uppercase
    phi = np.zeros((len(acts), len(names)))
    col = {n: j for j, n in enumerate(names)}
    for i, a in enumerate(acts):
        f = {}
        if a.kind == "ground":
            f["ground"] = 1.0
            f["ground_on_blur"] = float(a.arg in blur_w)
            f["ground_no_blur"] = float(not blur_w)
            f["ground_with_gist"] = float(gist is not None)
            f["reground"] = float(obs.n_fine >= 1)
        elif a.kind == "answer":
            f["answer_seen"] = float(obs.seen_letter == letters[a.arg])
            f["answer_gist"] = float(gist == letters[a.arg])
        else:
            f["babble"] = 1.0
        for n, v in f.items():
            if n in col:
                phi[i, col[n]] = v
    return phi


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max()
    return z - (m + math.log(np.exp(z - m).sum()))


# ---- policy -------------------------------------------------------------


class ToyPolicy:
    kind = PolicyKind.TOY
    reports_logprobs = True

    def __init__(self, params: ToyPolicyParams):
        self._params = params
        self._lock = threading.Lock()

    @property
    def params(self) -> ToyPolicyParams:
        return self._params

    def set_params(self, params: ToyPolicyParams) -> None:
        with self._lock:
            self._params = params

    def distribution(self, context: Sequence[Message], temperature: float = 1.0):
        """(actions, probabilities) for the given context; temperature 0 puts all mass on the first argmax."""
        p = self._params
        obs = observe(context)
        acts = actions_for(obs, p.windows)
        logits = feature_matrix(obs, acts, p.feature_names, p.windows, p.zoom_hides_gist) @ p.theta
        if temperature == 0:
            probs = np.zeros(len(acts))
            probs[int(np.argmax(logits))] = 1.0
        else:
            probs = np.exp(_log_softmax(logits / temperature))
        return acts, probs

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        acts, probs = self.distribution(req.context, req.sampling.temperature)
        if req.sampling.temperature == 0:
            i = int(np.argmax(probs))
        else:
            i = int(np.random.default_rng(req.seed).choice(len(acts), p=probs))
        text = acts[i].text
        return GenerationResponse(text=text, total_logprob=float(math.log(probs[i])), token_count=len(text.split()))

    def turn_tables(self, traj: Trajectory) -> list[tuple[np.ndarray, int]]:
        """Per-turn (feature matrix, chosen action index) of a trajectory."""
        p = self._params
        out = []
        for i, turn in enumerate(traj.turns):
            obs = observe(traj.context_before(i))
            acts = actions_for(obs, p.windows)
            texts = [a.text for a in acts]
            try:
                chosen = texts.index(turn.raw)
            except ValueError:
                raise ValueError(f"turn {i} of {traj.sample_id} is not a toy action: {turn.raw!r}") from None
            out.append((feature_matrix(obs, acts, p.feature_names, p.windows, p.zoom_hides_gist), chosen))
        return out

    def score_trajectory(self, traj: Trajectory) -> float:
        theta = self._params.theta
        return float(sum(_log_softmax(phi @ theta)[c] for phi, c in self.turn_tables(traj)))


class ToyBatch:
    """Stacked turn tables of many trajectories for fast log-prob evaluation at any theta."""

    def __init__(self, tables: Sequence[Sequence[tuple[np.ndarray, int]]], n_features: int):
        rows = [(ti, phi, c) for ti, turns in enumerate(tables) for phi, c in turns]
        self.n_traj = len(tables)
        n_act = max((phi.shape[0] for _, phi, _ in rows), default=1)
        self.phi = np.zeros((len(rows), n_act, n_features))
        self.mask = np.zeros((len(rows), n_act), dtype=bool)
        self.chosen = np.zeros(len(rows), dtype=int)
        self.owner = np.zeros(len(rows), dtype=int)
        for r, (ti, phi, c) in enumerate(rows):
            self.phi[r, : phi.shape[0]] = phi
            self.mask[r, : phi.shape[0]] = True
            self.chosen[r] = c
            self.owner[r] = ti

    @classmethod
    def from_trajectories(cls, policy: ToyPolicy, trajs: Sequence[Trajectory]) -> ToyBatch:
        return cls([policy.turn_tables(t) for t in trajs], len(policy.params.theta))

    def logp(self, theta: np.ndarray) -> np.ndarray:
        """Total log-probability of each trajectory under ``theta``."""
        z = self.phi @ theta
        z = np.where(self.mask, z, -np.inf)
        m = z.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
        per_turn = z[np.arange(len(z)), self.chosen] - lse
        return np.bincount(self.owner, weights=per_turn, minlength=self.n_traj)
