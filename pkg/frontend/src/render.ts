/**
 * Flat-shaded software renderer: orthographic projection, painter's sort,
 * per-face energy colors. Small enough to need no GPU stack, and the
 * projection/sorting/shading pieces are pure functions under test.
 */

import { faceColors, Geometry } from "./state.js";

export interface Camera {
  yaw: number; // radians about +z
  pitch: number; // radians about the camera's x axis
  zoom: number; // world units mapped to the viewport half-extent
}

export const DEFAULT_CAMERA: Camera = { yaw: 0.6, pitch: -0.9, zoom: 2.2 };

/** Rotate world points into camera space; returns a flat xyz array. */
export function projectVertices(vertices: Float32Array, cam: Camera): Float32Array {
  const cy = Math.cos(cam.yaw);
  const sy = Math.sin(cam.yaw);
  const cp = Math.cos(cam.pitch);
  const sp = Math.sin(cam.pitch);
  const out = new Float32Array(vertices.length);
  for (let i = 0; i < vertices.length; i += 3) {
    const x = vertices[i]!;
    const y = vertices[i + 1]!;
    const z = vertices[i + 2]!;
    const x1 = cy * x + sy * y;
    const y1 = -sy * x + cy * y;
    out[i] = x1;
    out[i + 1] = cp * y1 + sp * z;
    out[i + 2] = -sp * y1 + cp * z;
  }
  return out;
}

export interface ShadedFace {
  face: number;
  depth: number;
  lambert: number; // 0..1 flat-shading factor from the camera-space normal
}

/**
 * Depth-sort faces back-to-front and compute a flat shading factor per face.
 * Back-facing triangles are kept (meshes may be open sheets) but shaded dim.
 */
export function shadeFaces(projected: Float32Array, faces: Uint32Array): ShadedFace[] {
  const n = faces.length / 3;
  const out: ShadedFace[] = [];
  for (let k = 0; k < n; k++) {
    const a = faces[k * 3]! * 3;
    const b = faces[k * 3 + 1]! * 3;
    const c = faces[k * 3 + 2]! * 3;
    const e1x = projected[b]! - projected[a]!;
    const e1y = projected[b + 1]! - projected[a + 1]!;
    const e1z = projected[b + 2]! - projected[a + 2]!;
    const e2x = projected[c]! - projected[a]!;
    const e2y = projected[c + 1]! - projected[a + 1]!;
    const e2z = projected[c + 2]! - projected[a + 2]!;
    const nx = e1y * e2z - e1z * e2y;
    const ny = e1z * e2x - e1x * e2z;
    const nz = e1x * e2y - e1y * e2x;
    const len = Math.hypot(nx, ny, nz) || 1;
    const depth = (projected[a + 2]! + projected[b + 2]! + projected[c + 2]!) / 3;
    out.push({ face: k, depth, lambert: 0.35 + 0.65 * Math.abs(nz / len) });
  }
  out.sort((p, q) => p.depth - q.depth);
  return out;
}

/** Draw one geometry revision onto a 2D canvas context. */
export function drawGeometry(
  ctx: CanvasRenderingContext2D,
  width: number,
  height: number,
  geom: Geometry,
  cam: Camera = DEFAULT_CAMERA,
): void {
  ctx.fillStyle = "#10141a";
  ctx.fillRect(0, 0, width, height);
  const projected = projectVertices(geom.vertices, cam);
  const order = shadeFaces(projected, geom.faces);
  const colors = faceColors(geom);
  const scale = Math.min(width, height) / (2 * cam.zoom);
  const ox = width / 2;
  const oy = height / 2;
  for (const { face, lambert } of order) {
    ctx.beginPath();
    for (let c = 0; c < 3; c++) {
      const v = geom.faces[face * 3 + c]! * 3;
      const px = ox + projected[v]! * scale;
      const py = oy - projected[v + 1]! * scale;
      if (c === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    }
    ctx.closePath();
    const r = Math.round(colors[face * 3]! * lambert);
    const g = Math.round(colors[face * 3 + 1]! * lambert);
    const b = Math.round(colors[face * 3 + 2]! * lambert);
    ctx.fillStyle = `rgb(${r},${g},${b})`;
    ctx.fill();
  }
}
