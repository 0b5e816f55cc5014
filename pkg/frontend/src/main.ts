/**
 * Browser entry point: connects to the optimizer session, renders the mesh
 * with its per-face energy heatmap, keeps the three history plots live, and
 * wires the steering controls.
 */

import { SessionClient } from "./client.js";
import { DEFAULT_CAMERA, drawGeometry } from "./render.js";
import { drawSeries } from "./plot.js";
import { validateParam } from "./protocol.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function banner(message: string | null) {
  const box = el<HTMLDivElement>("banner");
  box.textContent = message ?? "";
  box.style.display = message ? "block" : "none";
}

function main() {
  const url = `ws://${location.host}/session`;
  const client = new SessionClient(url);
  const meshCanvas = el<HTMLCanvasElement>("mesh");
  const meshCtx = meshCanvas.getContext("2d")!;
  const plotIds = ["plot-energy", "plot-disp", "plot-normal"] as const;
  const plots = plotIds.map((id) => el<HTMLCanvasElement>(id).getContext("2d")!);
  const cam = { ...DEFAULT_CAMERA };
  let dirty = true;

  // camera drag + wheel zoom
  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  meshCanvas.addEventListener("mousedown", (e) => {
    dragging = true;
    lastX = e.clientX;
    lastY = e.clientY;
  });
  window.addEventListener("mouseup", () => (dragging = false));
  window.addEventListener("mousemove", (e) => {
    if (!dragging) return;
    cam.yaw += (e.clientX - lastX) * 0.01;
    cam.pitch += (e.clientY - lastY) * 0.01;
    lastX = e.clientX;
    lastY = e.clientY;
    dirty = true;
  });
  meshCanvas.addEventListener("wheel", (e) => {
    cam.zoom *= e.deltaY > 0 ? 1.1 : 0.9;
    dirty = true;
    e.preventDefault();
  });

  client.onSnapshot = (snap) => {
    dirty = true;
    el<HTMLSpanElement>("stage").textContent = snap.stage;
    el<HTMLSpanElement>("revision").textContent = String(snap.revision);
    el<HTMLSpanElement>("faces").textContent = String(snap.numFaces);
    el<HTMLSpanElement>("paused").textContent = snap.paused ? "paused" : "running";
    for (const name of ["eta", "beta", "tv_alpha", "n_gradient"] as const) {
      const input = el<HTMLInputElement>(`param-${name}`);
      if (document.activeElement !== input) {
        input.value = String(snap.params[name]);
      }
    }
  };
  client.onError = (message) => banner(`stream error: ${message}`);

  // rendering is decoupled from snapshot arrival: repaint at display
  // refresh only when something changed
  function frame() {
    const geom = client.store.geometry();
    if (dirty && geom) {
      drawGeometry(meshCtx, meshCanvas.width, meshCanvas.height, geom, cam);
      const series = client.store.plotSeries();
      const xs = series.map((r) => r.iteration);
      drawSeries(plots[0]!, 320, 120, xs, series.map((r) => r.E_refl), "E_refl");
      drawSeries(
        plots[1]!, 320, 120, xs,
        series.map((r) => r.mean_vertex_disp ?? 0), "mean vertex displacement",
        "#ffb86e",
      );
      drawSeries(
        plots[2]!, 320, 120, xs,
        series.map((r) => r.mean_adj_normal_diff ?? 0), "mean adjacent-normal diff",
        "#9e7eff",
      );
      dirty = false;
    }
    el<HTMLSpanElement>("status").textContent = client.store.status;
    requestAnimationFrame(frame);
  }
  requestAnimationFrame(frame);

  async function send(cmd: Parameters<SessionClient["sendCommand"]>[0], extra = {}) {
    try {
      const ack = await client.sendCommand(cmd, extra);
      banner(ack.ok ? null : `rejected: ${ack.reason}`);
      return ack.ok;
    } catch (err) {
      banner(String(err));
      return false;
    }
  }

  for (const name of ["eta", "beta", "tv_alpha", "n_gradient"] as const) {
    const input = el<HTMLInputElement>(`param-${name}`);
    input.addEventListener("change", async () => {
      const value = Number(input.value);
      const err = validateParam(name, value);
      if (err) {
        banner(err);
        const snap = client.store.latest();
        if (snap) input.value = String(snap.params[name]); // snap back
        return;
      }
      const ok = await send("set_param", { name, value });
      if (!ok) {
        const snap = client.store.latest();
        if (snap) input.value = String(snap.params[name]);
      }
    });
  }
  el<HTMLButtonElement>("btn-pause").onclick = () => send("pause");
  el<HTMLButtonElement>("btn-resume").onclick = () => send("resume");
  el<HTMLButtonElement>("btn-split").onclick = () => send("trigger_split");
  el<HTMLButtonElement>("btn-checkpoint").onclick = () => send("save_checkpoint");
  el<HTMLSelectElement>("element-kind").onchange = (e) =>
    send("switch_element", { kind: (e.target as HTMLSelectElement).value });
  el<HTMLButtonElement>("btn-terminate").onclick = () => {
    if (confirm("Terminate the optimization run?")) send("terminate");
  };

  client.connect().catch((err) => banner(String(err)));
}

main();
