"""Line-delimited JSON protocol for running environments in another process.

Each request and reply is one UTF-8 JSON object per line::

    {"op": "spec"}                       -> {"obs_dim": 4, "act_dim": 2}
    {"op": "reset", "seed": 7}           -> {"obs": [...]}
    {"op": "step", "action": [0.1, -0.2]} -> {"obs": [...], "reward": -1.0,
                                             "terminal": false, "truncated": false}
    {"op": "close"}                      -> {"ok": true}

Failures are answered with ``{"error": "..."}``. Unknown fields are ignored.
"""

from __future__ import annotations

import json
import queue
import subprocess
import sys
import threading

import numpy as np

from .base import Env, EnvFault, EnvStep, EnvUsageError


def _handle(env, msg):
    op = msg.get("op")
    if op == "spec":
        return {"obs_dim": env.obs_dim, "act_dim": env.act_dim}
    if op == "reset":
        obs = env.reset(seed=msg.get("seed"))
        return {"obs": [float(v) for v in obs]}
    if op == "step":
        if "action" not in msg:
            raise ValueError("step request without 'action'")
        out = env.step(np.asarray(msg["action"], dtype=np.float64))
        return {
            "obs": [float(v) for v in out.observation],
            "reward": float(out.reward),
            "terminal": bool(out.terminal),
            "truncated": bool(out.truncated),
        }
    if op == "close":
        return {"ok": True}
    raise ValueError(f"unknown op {op!r}")


def serve(env, instream=None, outstream=None):
    """Answer protocol requests from ``instream`` until ``close`` or EOF."""
    instream = instream if instream is not None else sys.stdin
    outstream = outstream if outstream is not None else sys.stdout
    for line in instream:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ValueError("request must be a JSON object")
            reply = _handle(env, msg)
        except (ValueError, TypeError, EnvUsageError) as exc:
            reply = {"error": str(exc)}
            msg = {}
        outstream.write(json.dumps(reply) + "\n")
        outstream.flush()
        if msg.get("op") == "close":
            break
    env.close()


class _LineReader(threading.Thread):
    def __init__(self, stream):
        super().__init__(daemon=True)
        self.stream = stream
        self.lines = queue.Queue()

    def run(self):
        for line in self.stream:
            self.lines.put(line)
        self.lines.put(None)


class ProtocolEnv(Env):
    """Client side of the protocol; behaves like a built-in :class:`Env`.

    Parameters
    ----------
    reader, writer : text streams
        Replies are read from ``reader``; requests are written to ``writer``.
    timeout : float
        Seconds to wait for each reply before raising :class:`EnvFault`.
    """

    def __init__(self, reader, writer, timeout=30.0):
        super().__init__()
        self._writer = writer
        self._reader = _LineReader(reader)
        self._reader.start()
        self.timeout = timeout
        spec = self._request({"op": "spec"})
        try:
            self.obs_dim = int(spec["obs_dim"])
            self.act_dim = int(spec["act_dim"])
        except (KeyError, TypeError, ValueError) as exc:
            raise EnvFault(f"malformed spec reply {spec!r}") from exc

    def _request(self, msg):
        try:
            self._writer.write(json.dumps(msg) + "\n")
            self._writer.flush()
        except (OSError, ValueError) as exc:
            raise EnvFault(f"cannot send request: {exc}") from exc
        try:
            line = self._reader.lines.get(timeout=self.timeout)
        except queue.Empty:
            raise EnvFault(f"no reply to {msg.get('op')!r} within {self.timeout}s") from None
        if line is None:
            raise EnvFault("environment peer closed the connection")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EnvFault(f"malformed reply {line.strip()!r}") from exc
        if not isinstance(reply, dict):
            raise EnvFault(f"malformed reply {line.strip()!r}")
        if "error" in reply:
            raise EnvFault(f"peer error: {reply['error']}")
        return reply

    def _vector(self, reply, key, size):
        try:
            vec = np.asarray(reply[key], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise EnvFault(f"reply lacks a numeric {key!r}: {reply!r}") from exc
        if vec.shape != (size,):
            raise EnvFault(f"{key!r} has shape {vec.shape}, expected ({size},)")
        return vec

    def reset(self, seed=None):
        msg = {"op": "reset"}
        if seed is not None:
            msg["seed"] = int(seed)
        reply = self._request(msg)
        self._done = False
        return self._vector(reply, "obs", self.obs_dim)

    def _step(self, action):
        reply = self._request({"op": "step", "action": [float(a) for a in action]})
        obs = self._vector(reply, "obs", self.obs_dim)
        try:
            return EnvStep(obs, float(reply["reward"]), bool(reply["terminal"]),
                           bool(reply["truncated"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise EnvFault(f"malformed step reply {reply!r}") from exc

    def close(self):
        try:
            self._request({"op": "close"})
        except EnvFault:
            pass

    def get_state(self):
        raise NotImplementedError("remote environments cannot be checkpointed")


class SubprocessEnv(ProtocolEnv):
    """Spawn ``command`` and talk to it over its stdin/stdout."""

    def __init__(self, command, timeout=30.0):
        self.proc = subprocess.Popen(
            command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )
        try:
            super().__init__(self.proc.stdout, self.proc.stdin, timeout=timeout)
        except EnvFault:
            self.proc.kill()
            raise

    def close(self):
        super().close()
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
