/** Minimal SVG chart builder: log/linear axes, series, guide lines, legend. */

export type Scale = "linear" | "log";

export interface Series {
  label: string;
  points: [number, number][];
  color: string;
  marker?: boolean;
}

export interface GuideLine {
  /** log-log slope of the guide; anchored to the first series' first point */
  slope: number;
  label: string;
}

export interface ChartSpec {
  title: string;
  xLabel: string;
  yLabel: string;
  xScale: Scale;
  yScale: Scale;
  series: Series[];
  guides?: GuideLine[];
  footer: string;
}

const W = 760;
const H = 520;
const M = { left: 72, right: 24, top: 44, bottom: 88 };

export const PALETTE = ["#1f6feb", "#d73a49", "#1a7f37", "#8250df", "#bf8700", "#0a7aa6", "#6e4c13"];

function mapper(scale: Scale, lo: number, hi: number, outLo: number, outHi: number): (v: number) => number {
  if (scale === "log") {
    const a = Math.log10(lo);
    const b = Math.log10(hi);
    return (v) => outLo + ((Math.log10(v) - a) / (b - a || 1)) * (outHi - outLo);
  }
  return (v) => outLo + ((v - lo) / (hi - lo || 1)) * (outHi - outLo);
}

function extent(values: number[], scale: Scale): [number, number] {
  const usable = values.filter((v) => Number.isFinite(v) && (scale !== "log" || v > 0));
  if (usable.length === 0) {
    throw new Error("no finite values to plot");
  }
  let lo = Math.min(...usable);
  let hi = Math.max(...usable);
  if (lo === hi) {
    lo = scale === "log" ? lo / 2 : lo - 1;
    hi = scale === "log" ? hi * 2 : hi + 1;
  }
  if (scale === "log") {
    return [lo / 1.25, hi * 1.25];
  }
  const pad = 0.06 * (hi - lo);
  return [lo - pad, hi + pad];
}

function ticks(scale: Scale, lo: number, hi: number): number[] {
  if (scale === "log") {
    const out: number[] = [];
    for (let e = Math.ceil(Math.log10(lo)); Math.pow(10, e) <= hi * 1.0001; e++) {
      out.push(Math.pow(10, e));
    }
    if (out.length < 2) {
      // fall back to powers of 2 for narrow ranges
      out.length = 0;
      for (let e = Math.ceil(Math.log2(lo)); Math.pow(2, e) <= hi * 1.0001; e++) {
        out.push(Math.pow(2, e));
      }
    }
    return out;
  }
  const step = (hi - lo) / 5;
  return Array.from({ length: 6 }, (_, i) => lo + i * step);
}

function fmt(v: number): string {
  if (v === 0) return "0";
  const abs = Math.abs(v);
  if (abs >= 0.01 && abs < 10000) {
    return Number(v.toPrecision(4)).toString();
  }
  return v.toExponential(1);
}

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export function renderChart(spec: ChartSpec): string {
  const xs = spec.series.flatMap((s) => s.points.map((p) => p[0]));
  const ys = spec.series.flatMap((s) => s.points.map((p) => p[1]));
  const [x0, x1] = extent(xs, spec.xScale);
  const [y0, y1] = extent(ys, spec.yScale);
  const px = mapper(spec.xScale, x0, x1, M.left, W - M.right);
  const py = mapper(spec.yScale, y0, y1, H - M.bottom, M.top);

  const parts: string[] = [];
  parts.push(`<svg xmlns="http://www.w3.org/2000/svg" width="${W}" height="${H}" viewBox="0 0 ${W} ${H}">`);
  parts.push(`<rect width="${W}" height="${H}" fill="white"/>`);
  parts.push(`<text x="${W / 2}" y="24" text-anchor="middle" font-size="16" font-family="sans-serif">${esc(spec.title)}</text>`);

  for (const tx of ticks(spec.xScale, x0, x1)) {
    const x = px(tx);
    parts.push(`<line x1="${x}" y1="${M.top}" x2="${x}" y2="${H - M.bottom}" stroke="#eee"/>`);
    parts.push(`<text x="${x}" y="${H - M.bottom + 18}" text-anchor="middle" font-size="11" font-family="sans-serif">${fmt(tx)}</text>`);
  }
  for (const ty of ticks(spec.yScale, y0, y1)) {
    const y = py(ty);
    parts.push(`<line x1="${M.left}" y1="${y}" x2="${W - M.right}" y2="${y}" stroke="#eee"/>`);
    parts.push(`<text x="${M.left - 6}" y="${y + 4}" text-anchor="end" font-size="11" font-family="sans-serif">${fmt(ty)}</text>`);
  }
  parts.push(`<rect x="${M.left}" y="${M.top}" width="${W - M.left - M.right}" height="${H - M.top - M.bottom}" fill="none" stroke="#444"/>`);
  parts.push(`<text x="${W / 2}" y="${H - M.bottom + 40}" text-anchor="middle" font-size="13" font-family="sans-serif">${esc(spec.xLabel)}</text>`);
  parts.push(`<text x="20" y="${H / 2}" text-anchor="middle" font-size="13" font-family="sans-serif" transform="rotate(-90 20 ${H / 2})">${esc(spec.yLabel)}</text>`);

  for (const guide of spec.guides ?? []) {
    const anchorSeries = spec.series[0];
    const anchor = anchorSeries?.points[0];
    if (!anchor) continue;
    const [ax, ay] = anchor;
    const gx = [x0 * 1.05, x1 / 1.05];
    const gy = gx.map((x) => ay * Math.pow(x / ax, guide.slope));
    parts.push(
      `<line x1="${px(gx[0]!)}" y1="${py(gy[0]!)}" x2="${px(gx[1]!)}" y2="${py(gy[1]!)}" stroke="#999" stroke-dasharray="6 4"/>`,
    );
    parts.push(
      `<text x="${px(gx[1]!) - 4}" y="${py(gy[1]!) - 6}" text-anchor="end" font-size="11" fill="#666" font-family="sans-serif">${esc(guide.label)}</text>`,
    );
  }

  spec.series.forEach((s) => {
    const coords = s.points
      .filter(([x, y]) => Number.isFinite(x) && Number.isFinite(y) && (spec.xScale !== "log" || x > 0) && (spec.yScale !== "log" || y > 0))
      .map(([x, y]) => `${px(x).toFixed(2)},${py(y).toFixed(2)}`);
    if (coords.length === 0) return;
    parts.push(`<polyline points="${coords.join(" ")}" fill="none" stroke="${s.color}" stroke-width="1.8"/>`);
    if (s.marker ?? true) {
      for (const c of coords) {
        const [cx, cy] = c.split(",");
        parts.push(`<circle cx="${cx}" cy="${cy}" r="3" fill="${s.color}"/>`);
      }
    }
  });

  spec.series.forEach((s, i) => {
    const y = M.top + 16 + i * 16;
    parts.push(`<line x1="${W - M.right - 180}" y1="${y - 4}" x2="${W - M.right - 156}" y2="${y - 4}" stroke="${s.color}" stroke-width="2"/>`);
    parts.push(`<text x="${W - M.right - 150}" y="${y}" font-size="11" font-family="sans-serif">${esc(s.label)}</text>`);
  });

  parts.push(`<text x="${M.left}" y="${H - 14}" font-size="11" fill="#555" font-family="sans-serif">${esc(spec.footer)}</text>`);
  parts.push("</svg>");
  return parts.join("\n");
}
