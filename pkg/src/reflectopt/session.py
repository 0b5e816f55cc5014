"""Live steering service: snapshots out over WebSocket, commands in.

Wire format (endpoint /session):
  server -> client: one binary message per snapshot,
      [u32 LE header length][JSON header][buffer bytes...]
    The header carries scalar state plus a "buffers" list describing the
    little-endian arrays concatenated after it (name, dtype, count). The
    face index buffer is included only when topology changed since the
    client's previous snapshot (always on the first).
  client -> server: JSON text commands {"v":1, "nonce": ..., "cmd": ...};
    every command is acked with {"type":"ack","nonce":...,"ok":...}.
    Duplicate nonces are acked again but applied once.

Publication is wait-free for the optimizer: snapshots land in a latest-wins
slot per client, so a slow viewer only ever skips intermediate revisions.
"""

from __future__ import annotations

import asyncio
import json
import struct
import threading
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import stylize
from .geom import save_mesh
from .optimize import HyperParams, OptimizerState, Stage, run_schedule

PROTOCOL_VERSION = 1
SETTABLE_PARAMS = ("eta", "beta", "tv_alpha", "n_gradient")
COMMANDS = (
    "pause", "resume", "set_param", "switch_element",
    "trigger_split", "terminate", "save_checkpoint",
)


def encode_snapshot(snap: dict, include_faces: bool) -> bytes:
    """Length-prefixed JSON header + concatenated little-endian buffers."""
    vertices = np.ascontiguousarray(snap["vertices"], dtype="<f4")
    energy = np.ascontiguousarray(snap["face_energy"], dtype="<f4")
    buffers = [("vertices", vertices), ("face_energy", energy)]
    if include_faces:
        faces = np.ascontiguousarray(snap["faces"], dtype="<u4")
        buffers.insert(1, ("faces", faces))
    params = snap["params"]
    header = {
        "v": PROTOCOL_VERSION,
        "type": "snapshot",
        "revision": snap["revision"],
        "stage": snap["stage"],
        "iteration": snap["iteration"],
        "paused": snap["paused"],
        "num_vertices": int(len(vertices)),
        "num_faces": int(len(snap["faces"])),
        "params": {
            "eta": params.eta,
            "beta": params.beta,
            "tv_alpha": params.tv_alpha,
            "n_gradient": params.n_gradient,
        },
        "energy_history": [
            {
                k: r[k]
                for k in (
                    "iteration",
                    "E_refl",
                    "mean_vertex_disp",
                    "mean_adj_normal_diff",
                )
                if k in r
            }
            for r in snap["energy_history"]
        ],
        "buffers": [
            {
                "name": name,
                "dtype": str(arr.dtype.str),
                "count": int(arr.shape[0]),
                "components": int(arr.shape[1]) if arr.ndim > 1 else 1,
            }
            for name, arr in buffers
        ],
    }
    head = json.dumps(header).encode()
    return b"".join(
        [struct.pack("<I", len(head)), head] + [arr.tobytes() for _, arr in buffers]
    )


def decode_snapshot(frame: bytes) -> dict:
    """Inverse of encode_snapshot; used by tests and Python clients."""
    (hlen,) = struct.unpack_from("<I", frame, 0)
    header = json.loads(frame[4 : 4 + hlen].decode())
    offset = 4 + hlen
    out = dict(header)
    for desc in header["buffers"]:
        dt = np.dtype(desc["dtype"])
        count = desc["count"]
        comps = desc.get("components", 1)
        nbytes = dt.itemsize * count * comps
        arr = np.frombuffer(frame[offset : offset + nbytes], dtype=dt)
        out[desc["name"]] = arr.reshape(count, comps) if comps > 1 else arr
        offset += nbytes
    return out


class SessionController:
    """Bridges the optimizer thread and the asyncio server.

    The optimizer callback publishes snapshots and services the command
    queue; pausing blocks inside the callback so no work happens and no
    revisions are produced while paused.
    """

    def __init__(self, params: HyperParams, checkpoint_dir: str | Path | None = None):
        self.params = params
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.lock = threading.Lock()
        self.latest: dict | None = None
        self.paused = False
        self.terminated = False
        self.status = "starting"
        self.state: OptimizerState | None = None
        self.commands: list[dict] = []
        self.seen_nonces: set = set()
        self.acks: list[dict] = []
        self.subscribers: list = []  # (loop, slot-dict, event)
        self.checkpoints: list[Path] = []

    # ---- client side (asyncio thread) ----

    def subscribe(self, loop) -> tuple[dict, asyncio.Event]:
        slot: dict = {}
        event = asyncio.Event()
        with self.lock:
            self.subscribers.append((loop, slot, event))
            if self.latest is not None:
                slot["snap"] = self.latest
                event.set()
        return slot, event

    def unsubscribe(self, slot):
        with self.lock:
            self.subscribers = [s for s in self.subscribers if s[1] is not slot]

    def submit(self, command: dict) -> dict:
        """Validate and queue a command; returns the ack payload."""
        nonce = command.get("nonce")
        cmd = command.get("cmd")
        if cmd not in COMMANDS:
            return {"type": "ack", "nonce": nonce, "ok": False,
                    "reason": f"unknown command {cmd!r}"}
        with self.lock:
            if self.terminated and cmd != "terminate":
                return {"type": "ack", "nonce": nonce, "ok": False,
                        "reason": "run already terminated"}
            if nonce is not None and nonce in self.seen_nonces:
                return {"type": "ack", "nonce": nonce, "ok": True,
                        "duplicate": True}
            err = self._validate(command)
            if err:
                return {"type": "ack", "nonce": nonce, "ok": False, "reason": err}
            if nonce is not None:
                self.seen_nonces.add(nonce)
            if cmd in ("pause", "resume", "terminate"):
                # immediate flags so they take effect even while blocked
                if cmd == "pause":
                    self.paused = True
                elif cmd == "resume":
                    self.paused = False
                else:
                    self.terminated = True
                    self.paused = False
            else:
                self.commands.append(command)
        return {"type": "ack", "nonce": nonce, "ok": True}

    def _validate(self, command: dict) -> str | None:
        cmd = command["cmd"]
        if cmd == "set_param":
            name = command.get("name")
            if name not in SETTABLE_PARAMS:
                return f"parameter {name!r} is not settable"
            value = command.get("value")
            if not isinstance(value, (int, float)):
                return "value must be numeric"
            trial = replace(self.params)
            setattr(trial, name, int(value) if name == "n_gradient" else float(value))
            try:
                trial.validate()
            except ValueError as exc:
                return str(exc)
        elif cmd == "switch_element":
            kind = command.get("kind")
            try:
                stylize.ElementKind(kind)
            except ValueError:
                return f"unknown element kind {kind!r}"
        return None

    # ---- optimizer side (worker thread) ----

    def _apply_queued(self, state: OptimizerState):
        with self.lock:
            queued, self.commands = self.commands, []
        for command in queued:
            cmd = command["cmd"]
            if cmd == "set_param":
                name = command["name"]
                value = command["value"]
                setattr(
                    self.params, name,
                    int(value) if name == "n_gradient" else float(value),
                )
            elif cmd == "switch_element":
                state.element_override = stylize.ElementKind(command["kind"])
            elif cmd == "trigger_split":
                state.split_requested = True
            elif cmd == "save_checkpoint" and self.checkpoint_dir:
                self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
                path = self.checkpoint_dir / f"checkpoint_{state.iteration:05d}.obj"
                save_mesh(state.mesh, path)
                self.checkpoints.append(path)

    def publish(self, snap: dict):
        with self.lock:
            self.latest = snap
            subs = list(self.subscribers)
        for loop, slot, event in subs:
            slot["snap"] = snap

            def _set(ev=event):
                ev.set()

            try:
                loop.call_soon_threadsafe(_set)
            except RuntimeError:
                pass  # loop already closed

    def callback(self, snap: dict) -> bool:
        """run_schedule callback: publish, service commands, honor pause."""
        self.status = "running"
        # the snapshot's paused flag reflects the controller, not loop state
        self.publish({**snap, "paused": self.paused})
        while self.paused and not self.terminated:
            time.sleep(0.02)
        if self.terminated:
            return False
        if self.state is not None:
            self._apply_queued(self.state)
        return True

    def run(self, mesh, spec, brdf=None, band=None, seed: int = 0,
            emitter_radiance: float = 0.5, start_paused: bool = False):
        """Drive run_schedule to completion on the calling thread."""
        self.paused = start_paused

        def on_state(state):
            self.state = state

        mesh_out, state = run_schedule(
            mesh, spec, self.params, brdf, band, seed,
            callbacks=[self.callback], emitter_radiance=emitter_radiance,
            on_state=on_state,
        )
        # a client terminate set the flag before the schedule unwound; natural
        # completion reaches this line with it still clear
        self.status = "stopped" if self.terminated else "done"
        self.terminated = True
        return mesh_out, state


def create_app(controller: SessionController) -> FastAPI:
    app = FastAPI()

    @app.get("/health")
    def health():
        with controller.lock:
            snap = controller.latest
        return {
            "status": "paused" if controller.paused and not controller.terminated
            else controller.status,
            "revision": snap["revision"] if snap else 0,
            "iteration": snap["iteration"] if snap else 0,
            "face_count": int(len(snap["faces"])) if snap else 0,
        }

    @app.websocket("/session")
    async def session(ws: WebSocket):
        await ws.accept()
        loop = asyncio.get_running_loop()
        slot, event = controller.subscribe(loop)
        last_faces_shape = None

        async def sender():
            nonlocal last_faces_shape
            while True:
                await event.wait()
                event.clear()
                snap = slot.get("snap")
                if snap is None:
                    continue
                topo = (len(snap["faces"]), hash(snap["faces"].tobytes()))
                include = topo != last_faces_shape
                await ws.send_bytes(encode_snapshot(snap, include_faces=include))
                last_faces_shape = topo

        send_task = asyncio.create_task(sender())
        try:
            while True:
                text = await ws.receive_text()
                try:
                    command = json.loads(text)
                except json.JSONDecodeError:
                    await ws.send_text(json.dumps(
                        {"type": "ack", "nonce": None, "ok": False,
                         "reason": "malformed JSON"}
                    ))
                    continue
                ack = controller.submit(command)
                await ws.send_text(json.dumps(ack))
        except WebSocketDisconnect:
            pass
        finally:
            send_task.cancel()
            controller.unsubscribe(slot)

    return app


def run_state(controller: SessionController) -> OptimizerState | None:
    return controller.state
