/**
 * Viewer-side state: the latest consistent snapshot, retained topology, the
 * energy/displacement plot series, and the colormap.
 *
 * Invariant: `geometry()` always returns buffers from a single snapshot
 * revision. A frame whose face indices would read past its vertex buffer is
 * rejected (the previous consistent geometry is kept and an error is
 * surfaced) so stale indices are never handed to the renderer.
 */

import { HistoryRow, Snapshot } from "./protocol.js";

export interface Geometry {
  revision: number;
  vertices: Float32Array;
  faces: Uint32Array;
  faceEnergy: Float32Array;
  numFaces: number;
}

export type ConnectionStatus = "connecting" | "connected" | "reconnecting" | "closed";

export class ViewerStore {
  status: ConnectionStatus = "connecting";
  lastError: string | null = null;
  private snap: Snapshot | null = null;
  private faces: Uint32Array | null = null; // retained across face-less frames
  private geom: Geometry | null = null;
  private series: HistoryRow[] = [];

  latest(): Snapshot | null {
    return this.snap;
  }

  geometry(): Geometry | null {
    return this.geom;
  }

  /** Plot series: one row per iteration, strictly increasing, never reordered. */
  plotSeries(): readonly HistoryRow[] {
    return this.series;
  }

  /**
   * Apply a decoded snapshot. Returns true when the frame was accepted.
   * Frames are rejected (kept out of the render path, error recorded) when
   * they arrive out of revision order or their buffers are inconsistent.
   */
  apply(snap: Snapshot): boolean {
    if (this.snap && snap.revision <= this.snap.revision) {
      this.lastError = `stale revision ${snap.revision} <= ${this.snap.revision}`;
      return false;
    }
    const faces = snap.faces ?? this.faces;
    if (faces === null) {
      this.lastError = "first frame carried no face buffer";
      return false;
    }
    if (faces.length !== snap.numFaces * 3) {
      this.lastError = `face buffer has ${faces.length / 3} faces, header says ${snap.numFaces}`;
      return false;
    }
    if (snap.faceEnergy.length !== snap.numFaces) {
      this.lastError = "energy buffer does not match face count";
      return false;
    }
    if (snap.vertices.length !== snap.numVertices * 3) {
      this.lastError = "vertex buffer does not match header";
      return false;
    }
    for (let i = 0; i < faces.length; i++) {
      if ((faces[i] as number) >= snap.numVertices) {
        this.lastError = `face index ${faces[i]} out of range for ${snap.numVertices} vertices`;
        return false;
      }
    }
    this.snap = snap;
    this.faces = faces;
    this.geom = {
      revision: snap.revision,
      vertices: snap.vertices,
      faces,
      faceEnergy: snap.faceEnergy,
      numFaces: snap.numFaces,
    };
    this.mergeHistory(snap.history);
    this.lastError = null;
    return true;
  }

  private mergeHistory(rows: HistoryRow[]) {
    // snapshots carry a sliding window of recent rows; extend monotonically
    const lastIter = this.series.length ? this.series[this.series.length - 1]!.iteration : -1;
    for (const row of rows) {
      if (row.iteration > lastIter || row.iteration > (this.series.at(-1)?.iteration ?? -1)) {
        this.series.push(row);
      }
    }
  }
}

// perceptually ordered colormap stops (dark blue -> teal -> yellow)
const STOPS: [number, number, number][] = [
  [68, 1, 84],
  [59, 82, 139],
  [33, 145, 140],
  [94, 201, 98],
  [253, 231, 37],
];

/** Map a scalar in [lo, hi] to an RGB triple; degenerate ranges map low. */
export function colormap(value: number, lo: number, hi: number): [number, number, number] {
  let t = hi > lo ? (value - lo) / (hi - lo) : 0;
  t = Math.min(1, Math.max(0, t));
  const x = t * (STOPS.length - 1);
  const i = Math.min(STOPS.length - 2, Math.floor(x));
  const f = x - i;
  const a = STOPS[i]!;
  const b = STOPS[i + 1]!;
  return [
    Math.round(a[0] + f * (b[0] - a[0])),
    Math.round(a[1] + f * (b[1] - a[1])),
    Math.round(a[2] + f * (b[2] - a[2])),
  ];
}

/** Per-face colors for a geometry, autoscaled to its energy range. */
export function faceColors(geom: Geometry): Uint8Array {
  const n = geom.numFaces;
  const out = new Uint8Array(n * 3);
  let lo = Infinity;
  let hi = -Infinity;
  for (let i = 0; i < n; i++) {
    const e = geom.faceEnergy[i] as number;
    if (e < lo) lo = e;
    if (e > hi) hi = e;
  }
  for (let i = 0; i < n; i++) {
    const [r, g, b] = colormap(geom.faceEnergy[i] as number, lo, hi);
    out[i * 3] = r;
    out[i * 3 + 1] = g;
    out[i * 3 + 2] = b;
  }
  return out;
}
