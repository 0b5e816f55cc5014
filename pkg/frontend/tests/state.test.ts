import { describe, expect, it } from "vitest";
import { decodeSnapshot } from "../src/protocol.js";
import { colormap, faceColors, ViewerStore } from "../src/state.js";
import { buildFrame } from "./frames.js";

const TETRA = {
  vertices: [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
  ],
  faces: [
    [0, 1, 2],
    [0, 1, 3],
    [0, 2, 3],
    [1, 2, 3],
  ],
  faceEnergy: [0.1, 0.2, 0.3, 0.4],
};

function snap(options: Parameters<typeof buildFrame>[0]) {
  return decodeSnapshot(buildFrame(options));
}

describe("ViewerStore", () => {
  it("retains topology across face-less frames", () => {
    const store = new ViewerStore();
    expect(store.apply(snap({ ...TETRA, revision: 1 }))).toBe(true);
    const moved = TETRA.vertices.map(([x, y, z]) => [x! + 1, y!, z!]);
    expect(store.apply(snap({ ...TETRA, vertices: moved, faces: null, revision: 2 }))).toBe(true);
    const geom = store.geometry()!;
    expect(geom.revision).toBe(2);
    expect(geom.vertices[0]).toBe(1);
    expect(Array.from(geom.faces)).toEqual(TETRA.faces.flat());
  });

  it("rejects a first frame without topology", () => {
    const store = new ViewerStore();
    expect(store.apply(snap({ ...TETRA, faces: null }))).toBe(false);
    expect(store.geometry()).toBeNull();
    expect(store.lastError).toMatch(/face buffer/);
  });

  it("rejects stale or duplicate revisions", () => {
    const store = new ViewerStore();
    store.apply(snap({ ...TETRA, revision: 5 }));
    expect(store.apply(snap({ ...TETRA, revision: 5 }))).toBe(false);
    expect(store.apply(snap({ ...TETRA, revision: 4 }))).toBe(false);
    expect(store.geometry()!.revision).toBe(5);
  });

  it("never exposes face indices past the vertex buffer", () => {
    // a topology-change frame whose cached faces no longer fit must be
    // rejected wholesale: geometry stays at the last consistent revision
    const store = new ViewerStore();
    store.apply(snap({ ...TETRA, revision: 1 }));
    const shrunk = snap({
      ...TETRA,
      vertices: TETRA.vertices.slice(0, 3),
      faces: null,
      revision: 2,
    });
    expect(store.apply(shrunk)).toBe(false);
    expect(store.lastError).toMatch(/out of range/);
    expect(store.geometry()!.revision).toBe(1);
  });

  it("rejects mismatched energy buffers", () => {
    const store = new ViewerStore();
    const bad = snap({ ...TETRA, faceEnergy: [0.1, 0.2] });
    expect(store.apply(bad)).toBe(false);
  });

  it("extends the plot series monotonically without reordering", () => {
    const store = new ViewerStore();
    store.apply(
      snap({ ...TETRA, revision: 1, history: [{ iteration: 1, E_refl: 0.5 }, { iteration: 2, E_refl: 0.4 }] }),
    );
    store.apply(
      snap({
        ...TETRA,
        revision: 2,
        faces: null,
        history: [{ iteration: 2, E_refl: 0.4 }, { iteration: 3, E_refl: 0.3 }],
      }),
    );
    expect(store.plotSeries().map((r) => r.iteration)).toEqual([1, 2, 3]);
    expect(store.plotSeries().map((r) => r.E_refl)).toEqual([0.5, 0.4, 0.3]);
  });
});

describe("colormap", () => {
  it("maps the range ends to the first and last stops", () => {
    expect(colormap(0, 0, 1)).toEqual([68, 1, 84]);
    expect(colormap(1, 0, 1)).toEqual([253, 231, 37]);
  });

  it("maps degenerate ranges to the low color", () => {
    expect(colormap(0.7, 0.7, 0.7)).toEqual([68, 1, 84]);
  });

  it("colors a uniform zero-energy mesh uniformly", () => {
    const store = new ViewerStore();
    store.apply(snap({ ...TETRA, faceEnergy: [0, 0, 0, 0] }));
    const colors = faceColors(store.geometry()!);
    for (let i = 0; i < 4; i++) {
      expect(Array.from(colors.slice(i * 3, i * 3 + 3))).toEqual([68, 1, 84]);
    }
  });
});
