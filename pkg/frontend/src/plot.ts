/**
 * Minimal line plots for the run history panels (energy, mean vertex
 * displacement, mean adjacent-normal difference). The polyline layout is a
 * pure function so tests can check ordering and scaling without a canvas.
 */

export interface PlotPoint {
  x: number;
  y: number;
}

/**
 * Map (iteration, value) samples into pixel space. X is the iteration axis
 * in arrival order (monotone, never reordered); Y is autoscaled with a small
 * margin. Returns [] for fewer than two samples.
 */
export function polyline(
  xs: readonly number[],
  ys: readonly number[],
  width: number,
  height: number,
): PlotPoint[] {
  if (xs.length !== ys.length) throw new Error("xs and ys must have equal length");
  if (xs.length < 2) return [];
  for (let i = 1; i < xs.length; i++) {
    if (xs[i]! <= xs[i - 1]!) throw new Error("x axis must be strictly increasing");
  }
  const x0 = xs[0]!;
  const x1 = xs[xs.length - 1]!;
  let lo = Infinity;
  let hi = -Infinity;
  for (const y of ys) {
    if (y < lo) lo = y;
    if (y > hi) hi = y;
  }
  const pad = (hi - lo || Math.abs(hi) || 1) * 0.05;
  lo -= pad;
  hi += pad;
  return xs.map((x, i) => ({
    x: ((x - x0) / (x1 - x0 || 1)) * width,
    y: height - ((ys[i]! - lo) / (hi - lo)) * height,
  }));
}

export function drawSeries(
  ctx: CanvasRenderingContext2D,
  width: number,
  height: number,
  xs: readonly number[],
  ys: readonly number[],
  label: string,
  color = "#6ec1ff",
): void {
  ctx.fillStyle = "#10141a";
  ctx.fillRect(0, 0, width, height);
  ctx.fillStyle = "#9aa4b2";
  ctx.font = "11px system-ui";
  ctx.fillText(label, 6, 14);
  const pts = polyline(xs, ys, width - 10, height - 24);
  if (!pts.length) return;
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  pts.forEach((p, i) => {
    if (i === 0) ctx.moveTo(p.x + 5, p.y + 19);
    else ctx.lineTo(p.x + 5, p.y + 19);
  });
  ctx.stroke();
  const last = ys[ys.length - 1]!;
  ctx.fillStyle = "#e6edf3";
  ctx.fillText(last.toPrecision(4), width - 70, 14);
}
