"""Seeded training loop, metric logging and checkpoint files.

Metric stream
    One JSON object per line. ``kind`` is ``"episode"`` (every episode end),
    ``"diag"`` (window means every ``diag_every`` steps), ``"eval"`` or
    ``"diverged"`` (the last row of a diverged run). All rows share the field
    set in :data:`METRIC_FIELDS`; fields that do not apply are ``null``.

Checkpoint file
    ``MAGIC | u32 version | u32 n_sections`` followed by ``n_sections``
    records ``u16 name_len | name | u64 payload_len | u32 crc32 | payload``.
    Array sections use a small self-describing layout (JSON index plus raw
    little-endian bytes) so the file is byte-deterministic.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import time
import zlib
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .agents import AGENTS, make_agent
from .envs import EnvFault, make_env

SCHEMA_VERSION = 1
CHECKPOINT_VERSION = 1
MAGIC = b"AVGRLCK\x00"

METRIC_FIELDS = (
    "kind", "step", "episode", "episodic_return", "episode_length",
    "actor_grad_norm", "critic_grad_norm", "delta", "delta_scaled",
    "sigma_delta", "q_value", "wall_ms", "switches", "schema",
)
_DIAG_KEYS = ("actor_grad_norm", "critic_grad_norm", "delta", "delta_scaled",
              "sigma_delta", "q_value")
SUMMARY_FIELDS = ("status", "steps", "episodes", "auc", "final_return",
                  "diverged", "seed", "agent", "env")
FINAL_WINDOW = 50


class CheckpointError(ValueError):
    """Checkpoint file is truncated, corrupt, of another version, or for another agent."""


@dataclass
class RunConfig:
    """Everything needed to reproduce one training run."""

    agent: str = "avg"
    agent_params: dict = field(default_factory=dict)
    env: str = "dot_reacher"
    env_params: dict = field(default_factory=dict)
    total_steps: int = 100_000
    seed: int = 0
    diag_every: int = 1000
    eval_every: int = 0
    eval_episodes: int = 5
    checkpoint_every: int = 0
    log_wall_time: bool = False

    def validate(self):
        if self.agent not in AGENTS:
            raise ValueError(f"unknown agent kind {self.agent!r}; choose from {sorted(AGENTS)}")
        if not self.env:
            raise ValueError("env kind is required")
        for name in ("total_steps", "diag_every", "eval_every", "checkpoint_every"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be >= 0")
        return self


@dataclass
class RunSummary:
    status: str  # "completed", "diverged" or "failed"
    steps: int
    episodes: int
    auc: float | None
    final_return: float | None
    diverged: bool
    seed: int | None = None
    agent: str | None = None
    env: str | None = None
    log_path: str | None = None
    checkpoint_path: str | None = None

    def csv_row(self):
        d = asdict(self)
        return {k: ("" if d[k] is None else d[k]) for k in SUMMARY_FIELDS}


def derive_seeds(seed):
    """Independent agent/env/eval seeds from one run seed."""
    children = np.random.SeedSequence(int(seed)).spawn(3)
    return tuple(int(c.generate_state(1, dtype=np.uint32)[0]) for c in children)


def compute_auc(rows):
    """Mean episodic return over a run, or ``None`` if there were no episodes.

    ``rows`` may hold metric dicts (only ``kind == "episode"`` rows count) or
    bare returns.
    """
    total, n = 0.0, 0
    for row in rows:
        if isinstance(row, dict):
            if row.get("kind", "episode") != "episode":
                continue
            row = row["episodic_return"]
        total += float(row)
        n += 1
    if n == 0:
        return None
    return total / n


def read_metrics(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def switch_label(agent):
    """Compact record of the normalization switches, e.g. ``"norm_obs+pnorm+scaled_td"``."""
    parts = []
    if getattr(agent, "norm_obs", False):
        parts.append("norm_obs")
    if getattr(agent, "feature_norm", "none") != "none":
        parts.append(agent.feature_norm)
    if getattr(agent, "scaled_td", False):
        parts.append("scaled_td")
    return "+".join(parts) or "none"


class Trainer:
    """Drives ``agent`` on ``env`` one transition at a time.

    :meth:`run` can be called repeatedly with increasing ``until`` and the
    trainer can be checkpointed between calls; a restored trainer continues
    the exact same trajectory and metric stream.
    """

    def __init__(self, agent, env, total_steps, log_path=None, diag_every=1000,
                 env_seed=None, eval_every=0, eval_episodes=5, eval_seed=0,
                 checkpoint_every=0, checkpoint_dir=None, log_wall_time=False):
        self.agent = agent
        self.env = env
        self.total_steps = int(total_steps)
        self.log_path = log_path
        self.diag_every = int(diag_every)
        self.env_seed = env_seed
        self.eval_every = int(eval_every)
        self.eval_episodes = int(eval_episodes)
        self.eval_seed = int(eval_seed)
        self.checkpoint_every = int(checkpoint_every)
        self.checkpoint_dir = checkpoint_dir
        self.log_wall_time = log_wall_time
        if not hasattr(agent, "actor_"):
            agent.setup(env.obs_dim, env.act_dim)
        self.step = 0
        self.episode = 0
        self.needs_reset = True
        self.ep_return = 0.0
        self.ep_length = 0
        self.ep_sums = dict.fromkeys(_DIAG_KEYS, 0.0)
        self.win_sums = dict.fromkeys(_DIAG_KEYS, 0.0)
        self.win_count = 0
        self.return_sum = 0.0
        self.recent = deque(maxlen=FINAL_WINDOW)
        self.status = "running"
        self._log = None
        self._t_last = None
        self._switches = switch_label(agent)

    # ---- logging ------------------------------------------------------
    def _open_log(self):
        if self.log_path is not None and self._log is None:
            self._log = open(self.log_path, "a", encoding="utf-8", newline="\n")

    def _emit(self, row):
        if self._log is not None:
            self._log.write(json.dumps(row, allow_nan=True) + "\n")

    def _row(self, kind, **values):
        row = dict.fromkeys(METRIC_FIELDS)
        row.update(kind=kind, step=self.step, episode=self.episode, **values)
        row["switches"] = self._switches
        row["schema"] = SCHEMA_VERSION
        return row

    def _wall_ms(self):
        if not self.log_wall_time:
            return None
        now = time.perf_counter()
        last, self._t_last = self._t_last, now
        return None if last is None else (now - last) * 1e3

    def close(self):
        if self._log is not None:
            self._log.close()
            self._log = None

    # ---- main loop ----------------------------------------------------
    def _reset_env(self):
        seed = self.env_seed if (self.episode == 0 and self.env_seed is not None) else None
        obs = self.env.reset(seed=seed)
        self.agent.begin_episode(obs)
        self.needs_reset = False
        self.ep_return = 0.0
        self.ep_length = 0
        self.ep_sums = dict.fromkeys(_DIAG_KEYS, 0.0)

    def run(self, until=None):
        """Advance to step ``until`` (default: ``total_steps``); returns a :class:`RunSummary`."""
        until = self.total_steps if until is None else min(int(until), self.total_steps)
        self._open_log()
        try:
            while self.step < until and self.status == "running":
                self._one_step()
            if self.step >= self.total_steps and self.status == "running":
                self.status = "completed"
        except EnvFault:
            self.status = "failed"
            raise
        finally:
            if self._log is not None:
                self._log.flush()
        return self.summary()

    def _one_step(self):
        if self.needs_reset:
            self._reset_env()
        agent = self.agent
        action = agent.act()
        out = self.env.step(action)
        diag = agent.learn(out.reward, out.observation, out.terminal, out.truncated)
        self.step += 1
        self.ep_length += 1
        self.ep_return += out.reward
        if diag.diverged:
            self.status = "diverged"
            self._emit(self._row("diverged", episode_length=self.ep_length,
                                 wall_ms=self._wall_ms()))
            return
        for key in _DIAG_KEYS:
            value = getattr(diag, key)
            self.ep_sums[key] += value
            self.win_sums[key] += value
        self.win_count += 1
        if out.terminal or out.truncated:
            self._end_episode()
        if self.diag_every and self.step % self.diag_every == 0:
            n = self.win_count
            self._emit(self._row("diag", wall_ms=self._wall_ms(),
                            **{k: v / n for k, v in self.win_sums.items()}))
            self.win_sums = dict.fromkeys(_DIAG_KEYS, 0.0)
            self.win_count = 0
        if self.eval_every and self.step % self.eval_every == 0:
            self._evaluate()
        if self.checkpoint_every and self.checkpoint_dir and self.step % self.checkpoint_every == 0:
            self.save(Path(self.checkpoint_dir) / f"step_{self.step:09d}.ckpt")

    def _end_episode(self):
        self.episode += 1
        n = self.ep_length
        self._emit(self._row("episode", episodic_return=self.ep_return,
                        episode_length=n, wall_ms=self._wall_ms(),
                        **{k: v / n for k, v in self.ep_sums.items()}))
        self.return_sum += self.ep_return
        self.recent.append(self.ep_return)
        self.needs_reset = True

    def _evaluate(self):
        env = make_env_like(self.env)
        if env is None:
            return
        returns = evaluate(self.agent, env, self.eval_episodes,
                           seed=self.eval_seed + self.step)
        self._emit(self._row("eval", episodic_return=float(np.mean(returns))))

    def summary(self):
        auc = self.return_sum / self.episode if self.episode else None
        final = float(np.mean(self.recent)) if self.recent else None
        status = self.status if self.status != "running" else "incomplete"
        return RunSummary(status=status, steps=self.step, episodes=self.episode, auc=auc,
                          final_return=final, diverged=self.status == "diverged",
                          log_path=None if self.log_path is None else str(self.log_path))

    # ---- persistence --------------------------------------------------
    def loop_state(self):
        return {
            "step": self.step, "episode": self.episode, "needs_reset": self.needs_reset,
            "ep_return": self.ep_return, "ep_length": self.ep_length,
            "ep_sums": self.ep_sums, "win_sums": self.win_sums, "win_count": self.win_count,
            "return_sum": self.return_sum, "recent": list(self.recent), "status": self.status,
            "total_steps": self.total_steps,
        }

    def load_loop_state(self, state):
        self.step = int(state["step"])
        self.episode = int(state["episode"])
        self.needs_reset = bool(state["needs_reset"])
        self.ep_return = float(state["ep_return"])
        self.ep_length = int(state["ep_length"])
        self.ep_sums = {k: float(v) for k, v in state["ep_sums"].items()}
        self.win_sums = {k: float(v) for k, v in state["win_sums"].items()}
        self.win_count = int(state["win_count"])
        self.return_sum = float(state["return_sum"])
        self.recent = deque((float(r) for r in state["recent"]), maxlen=FINAL_WINDOW)
        self.status = state["status"]

    def save(self, path):
        if self._log is not None:
            self._log.flush()
        checkpoint_save(path, self.agent, env=self.env, loop=self.loop_state())
        return path

    def restore(self, path):
        sections = checkpoint_load(path, agent=self.agent)
        if sections.get("env") is not None:
            self.env.set_state(sections["env"])
        if sections.get("loop") is not None:
            self.load_loop_state(sections["loop"])
        return self


def make_env_like(env):
    """Fresh built-in env with the same config (``None`` for external envs)."""
    config = getattr(env, "config", None)
    if config is None:
        return None
    return type(env)(config)


def evaluate(agent, env, episodes, seed=0):
    """Returns of ``episodes`` deterministic (zero-noise) episodes; learning state is untouched."""
    returns = []
    obs = env.reset(seed=seed)
    for _ in range(int(episodes)):
        total = 0.0
        while True:
            action = agent.predict(obs[None, :])[0]
            out = env.step(action)
            total += out.reward
            if out.terminal or out.truncated:
                break
            obs = out.observation
        returns.append(total)
        obs = env.reset()
    return returns


# ---- checkpoint format ------------------------------------------------------
def _pack_arrays(arrays):
    index, chunks, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.array(arrays[name], order="C")  # ascontiguousarray would promote 0-d to 1-d
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    head = json.dumps(index, sort_keys=True).encode()
    return struct.pack("<I", len(head)) + head + b"".join(chunks)


def _unpack_arrays(blob):
    (n_head,) = struct.unpack_from("<I", blob, 0)
    index = json.loads(blob[4 : 4 + n_head])
    body = blob[4 + n_head :]
    out = {}
    for rec in index:
        raw = body[rec["offset"] : rec["offset"] + rec["nbytes"]]
        if len(raw) != rec["nbytes"]:
            raise CheckpointError(f"array {rec['name']!r} is truncated")
        out[rec["name"]] = np.frombuffer(raw, dtype=rec["dtype"]).reshape(rec["shape"]).copy()
    return out


def _json_bytes(obj):
    return json.dumps(obj, sort_keys=True).encode()


_ARRAY_SECTIONS = ("params", "optimizer", "stats")


def _env_state(env):
    if env is None:
        return None
    try:
        return env.get_state()
    except NotImplementedError:
        return None


def checkpoint_save(path, agent, env=None, loop=None):
    """Write agent (and optionally env and loop) state to ``path`` atomically."""
    state = agent.state_dict()
    sections = [("meta", _json_bytes(state["meta"]))]
    sections += [(name, _pack_arrays(state[name])) for name in _ARRAY_SECTIONS]
    sections.append(("rng", _json_bytes(state["rng"])))
    env_state = _env_state(env)
    if env_state is not None:
        sections.append(("env", _json_bytes(env_state)))
    if loop is not None:
        sections.append(("loop", _json_bytes(loop)))
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(sections)))
    for name, payload in sections:
        raw_name = name.encode()
        buf.write(struct.pack("<H", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<QI", len(payload), zlib.crc32(payload)))
        buf.write(payload)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return path


def _read_sections(data):
    if len(data) < len(MAGIC) + 8 or not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic or too short)")
    pos = len(MAGIC)
    version, count = struct.unpack_from("<II", data, pos)
    pos += 8
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {version} is not supported (this build reads version "
            f"{CHECKPOINT_VERSION})"
        )
    sections = {}
    for _ in range(count):
        try:
            (n_name,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + n_name].decode()
            pos += n_name
            size, crc = struct.unpack_from("<QI", data, pos)
            pos += 12
        except (struct.error, UnicodeDecodeError) as exc:
            raise CheckpointError("checkpoint is truncated inside a section header") from exc
        payload = data[pos : pos + size]
        pos += size
        if len(payload) != size:
            raise CheckpointError(
                f"section {name!r} is truncated ({len(payload)} of {size} bytes)"
            )
        if zlib.crc32(payload) != crc:
            raise CheckpointError(f"section {name!r} fails its checksum")
        sections[name] = payload
    missing = {"meta", "rng", *_ARRAY_SECTIONS} - set(sections)
    if missing:
        raise CheckpointError(f"checkpoint lacks sections {sorted(missing)}")
    return sections


def checkpoint_load(path, agent=None):
    """Read a checkpoint.

    Returns a dict with ``agent``, ``env`` (state dict or ``None``) and
    ``loop``. If ``agent`` is given it must be of the stored kind; otherwise
    a new agent is constructed from the stored hyperparameters.
    """
    raw = _read_sections(Path(path).read_bytes())
    state = {"meta": json.loads(raw["meta"]), "rng": json.loads(raw["rng"])}
    for name in _ARRAY_SECTIONS:
        state[name] = _unpack_arrays(raw[name])
    kind = state["meta"]["kind"]
    if agent is None:
        if kind not in AGENTS:
            raise CheckpointError(f"checkpoint holds unknown agent kind {kind!r}")
        agent = AGENTS[kind]()
    elif agent.kind != kind:
        raise CheckpointError(
            f"checkpoint holds a {kind!r} agent, cannot load into {agent.kind!r}"
        )
    agent.load_state_dict(state)
    return {
        "agent": agent,
        "env": json.loads(raw["env"]) if "env" in raw else None,
        "loop": json.loads(raw["loop"]) if "loop" in raw else None,
    }


# ---- top-level entry --------------------------------------------------------
def build_run(config):
    """Agent, env and the seeds used for them, all derived from ``config.seed``."""
    config.validate()
    agent_seed, env_seed, eval_seed = derive_seeds(config.seed)
    params = dict(config.agent_params)
    params["seed"] = agent_seed
    agent = make_agent(config.agent, **params)
    env = make_env(config.env, seed=env_seed, **config.env_params)
    return agent, env, env_seed, eval_seed


def write_summary_csv(path, summary):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerow(summary.csv_row())


def run_training(config, out_dir=None, resume_from=None):
    """Run ``config`` to completion, writing artifacts under ``out_dir``.

    Artifacts: ``metrics.jsonl``, ``summary.csv`` and ``final.ckpt`` (plus
    ``checkpoints/step_*.ckpt`` when ``checkpoint_every`` is set). An
    :class:`~avgrl.envs.EnvFault` propagates after the summary is written
    with status ``"failed"``.
    """
    agent, env, env_seed, eval_seed = build_run(config)
    agent.setup(env.obs_dim, env.act_dim)
    out = Path(out_dir) if out_dir is not None else None
    log_path = ckpt_dir = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "metrics.jsonl"
        ckpt_dir = out / "checkpoints"
        if resume_from is None and log_path.exists():
            log_path.unlink()
    trainer = Trainer(
        agent, env, config.total_steps, log_path=log_path, diag_every=config.diag_every,
        env_seed=env_seed, eval_every=config.eval_every, eval_episodes=config.eval_episodes,
        eval_seed=eval_seed, checkpoint_every=config.checkpoint_every,
        checkpoint_dir=ckpt_dir, log_wall_time=config.log_wall_time,
    )
    if resume_from is not None:
        trainer.restore(resume_from)
    try:
        summary = trainer.run()
    except EnvFault:
        summary = trainer.summary()
        summary.status = "failed"
        _finish(summary, config, out, None)
        raise
    finally:
        trainer.close()
        env.close()
    final_ckpt = None
    if out is not None:
        final_ckpt = out / "final.ckpt"
        checkpoint_save(final_ckpt, agent, env=env, loop=trainer.loop_state())
    return _finish(summary, config, out, final_ckpt)


def _finish(summary, config, out, ckpt):
    summary.seed = config.seed
    summary.agent = config.agent
    summary.env = config.env
    summary.checkpoint_path = None if ckpt is None else str(ckpt)
    if out is not None:
        write_summary_csv(out / "summary.csv", summary)
    return summary
