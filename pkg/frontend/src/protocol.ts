/**
 * Wire protocol for the optimizer session endpoint.
 *
 * Server -> client: one binary frame per snapshot,
 *   [u32 LE header length][JSON header][little-endian buffers...]
 * The header's "buffers" list describes the arrays concatenated after it.
 * The face index buffer is present only when topology changed since the
 * client's previous frame (always on the first).
 *
 * Client -> server: JSON text commands {v:1, nonce, cmd, ...}; every command
 * is acked with {type:"ack", nonce, ok, ...}.
 */

export const PROTOCOL_VERSION = 1;

export interface BufferDesc {
  name: string;
  dtype: string;
  count: number;
  components: number;
}

export interface HistoryRow {
  iteration: number;
  E_refl: number;
  mean_vertex_disp?: number;
  mean_adj_normal_diff?: number;
}

export interface SnapshotParams {
  eta: number;
  beta: number;
  tv_alpha: number;
  n_gradient: number;
}

export interface Snapshot {
  v: number;
  revision: number;
  stage: string;
  iteration: number;
  paused: boolean;
  numVertices: number;
  numFaces: number;
  params: SnapshotParams;
  history: HistoryRow[];
  vertices: Float32Array; // numVertices * 3
  faces: Uint32Array | null; // numFaces * 3, only on topology change
  faceEnergy: Float32Array; // numFaces
}

export interface Ack {
  type: "ack";
  nonce: number | null;
  ok: boolean;
  duplicate?: boolean;
  reason?: string;
}

export class ProtocolError extends Error {}

const DTYPE_BYTES: Record<string, number> = { "<f4": 4, "<u4": 4, "<i4": 4 };

function sliceAligned(buf: ArrayBuffer, offset: number, bytes: number): ArrayBuffer {
  // typed-array views require element alignment; the header length is
  // arbitrary, so copy the buffer region instead of viewing in place
  if (offset + bytes > buf.byteLength) {
    throw new ProtocolError(
      `frame truncated: need ${offset + bytes} bytes, have ${buf.byteLength}`,
    );
  }
  return buf.slice(offset, offset + bytes);
}

/** Decode one binary snapshot frame. Throws ProtocolError on malformed input. */
export function decodeSnapshot(frame: ArrayBuffer): Snapshot {
  if (frame.byteLength < 4) throw new ProtocolError("frame shorter than length prefix");
  const view = new DataView(frame);
  const headerLen = view.getUint32(0, true);
  if (4 + headerLen > frame.byteLength) throw new ProtocolError("header length exceeds frame");
  const headerText = new TextDecoder().decode(new Uint8Array(frame, 4, headerLen));
  let header: any;
  try {
    header = JSON.parse(headerText);
  } catch {
    throw new ProtocolError("header is not valid JSON");
  }
  if (header.v !== PROTOCOL_VERSION) {
    throw new ProtocolError(`unsupported protocol version ${header.v}`);
  }
  if (header.type !== "snapshot") {
    throw new ProtocolError(`unexpected frame type ${header.type}`);
  }

  let offset = 4 + headerLen;
  const arrays: Record<string, Float32Array | Uint32Array> = {};
  for (const desc of header.buffers as BufferDesc[]) {
    const itemBytes = DTYPE_BYTES[desc.dtype];
    if (itemBytes === undefined) throw new ProtocolError(`unknown dtype ${desc.dtype}`);
    const comps = desc.components ?? 1;
    const nbytes = itemBytes * desc.count * comps;
    const chunk = sliceAligned(frame, offset, nbytes);
    arrays[desc.name] = desc.dtype === "<f4" ? new Float32Array(chunk) : new Uint32Array(chunk);
    offset += nbytes;
  }

  const vertices = arrays["vertices"];
  const faceEnergy = arrays["face_energy"];
  if (!(vertices instanceof Float32Array) || !(faceEnergy instanceof Float32Array)) {
    throw new ProtocolError("snapshot missing vertex or energy buffer");
  }
  const faces = arrays["faces"];
  if (faces !== undefined && !(faces instanceof Uint32Array)) {
    throw new ProtocolError("face buffer has wrong dtype");
  }
  return {
    v: header.v,
    revision: header.revision,
    stage: header.stage,
    iteration: header.iteration,
    paused: Boolean(header.paused),
    numVertices: header.num_vertices,
    numFaces: header.num_faces,
    params: header.params,
    history: header.energy_history ?? [],
    vertices,
    faces: (faces as Uint32Array | undefined) ?? null,
    faceEnergy,
  };
}

export type CommandName =
  | "pause"
  | "resume"
  | "set_param"
  | "switch_element"
  | "trigger_split"
  | "terminate"
  | "save_checkpoint";

export const SETTABLE_PARAMS = ["eta", "beta", "tv_alpha", "n_gradient"] as const;
export type SettableParam = (typeof SETTABLE_PARAMS)[number];

/**
 * Client-side mirror of the server's parameter validation so obviously bad
 * values (negative step size, zero gradient passes) never reach the wire.
 * Returns an error string, or null when the value is acceptable.
 */
export function validateParam(name: string, value: number): string | null {
  if (!(SETTABLE_PARAMS as readonly string[]).includes(name)) {
    return `parameter ${name} is not settable`;
  }
  if (!Number.isFinite(value)) return "value must be finite";
  if (name === "n_gradient") {
    if (!Number.isInteger(value) || value < 1) return "n_gradient must be a positive integer";
  } else if (name === "beta") {
    if (value < 0) return "beta must be non-negative";
  } else if (value <= 0) {
    return `${name} must be positive`;
  }
  return null;
}

export interface Command {
  v: number;
  nonce: number;
  cmd: CommandName;
  [key: string]: unknown;
}

export function makeCommand(
  nonce: number,
  cmd: CommandName,
  extra: Record<string, unknown> = {},
): Command {
  if (cmd === "set_param") {
    const err = validateParam(String(extra.name), Number(extra.value));
    if (err) throw new ProtocolError(err);
  }
  return { v: PROTOCOL_VERSION, nonce, cmd, ...extra };
}

export function parseAck(text: string): Ack {
  let data: any;
  try {
    data = JSON.parse(text);
  } catch {
    throw new ProtocolError("ack is not valid JSON");
  }
  if (data.type !== "ack") throw new ProtocolError(`unexpected text frame type ${data.type}`);
  return data as Ack;
}
