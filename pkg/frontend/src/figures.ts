/**
 * Figure assembly: one renderer per study kind, all returning an SVG string
 * plus a caption that embeds the run fingerprint and a claim tag.
 */

import {
  FitsFile,
  SchemaError,
  StudyCsv,
  loadFits,
  loadStudyCsv,
  numeric,
  requireColumns,
  requireSameFingerprint,
} from "./csv.js";
import { ChartSpec, PALETTE, Scale, renderChart } from "./svg.js";

export type FigureKind = "strong-order" | "longtime" | "chaos" | "perf" | "stability";

export interface FigureSpec {
  kind: FigureKind;
  /** study CSV paths; most kinds take one */
  inputs: string[];
  /** optional fit-record JSON from the same run */
  fits?: string;
  xScale?: Scale;
  yScale?: Scale;
  /** reference guide overlay, e.g. {slope: 1, label: "slope 1 guide"} */
  overlay?: { slope: number; label: string };
  output: string;
  /** claim tag included in the caption */
  caption: string;
  title?: string;
}

export interface RenderedFigure {
  svg: string;
  caption: string;
  fingerprint: string;
}

function fitSlopeLabel(fits: FitsFile | undefined, key: string): string | undefined {
  const fit = fits?.fits[key];
  if (fit && fit.slope_hat !== null) {
    return `fitted slope ${fit.slope_hat.toFixed(3)} (r2 ${fit.r_squared.toFixed(3)})`;
  }
  return undefined;
}

function groupBy<T>(items: T[], key: (item: T) => string): Map<string, T[]> {
  const out = new Map<string, T[]>();
  for (const item of items) {
    const k = key(item);
    const bucket = out.get(k);
    if (bucket) bucket.push(item);
    else out.set(k, [item]);
  }
  return out;
}

function color(i: number): string {
  return PALETTE[i % PALETTE.length]!;
}

function strongOrderChart(csv: StudyCsv, fits: FitsFile | undefined, spec: FigureSpec): ChartSpec {
  requireColumns(csv, ["pair", "tau", "batch_size", "mse_sup", "failed"]);
  const ok = csv.rows.filter((r) => r["failed"] === "0");
  if (ok.length === 0) throw new SchemaError(`${csv.path}: every grid point failed`);
  const groups = groupBy(ok, (r) => `${r["pair"]} (p=${r["batch_size"]})`);
  const series = [...groups.entries()].map(([label, rows], i) => {
    const pts = rows
      .map((r) => [numeric(r, "tau", csv.path), numeric(r, "mse_sup", csv.path)] as [number, number])
      .sort((a, b) => a[0] - b[0]);
    const fitKey = `order_${rows[0]!["pair"]}_p${rows[0]!["batch_size"]}`;
    const slope = fitSlopeLabel(fits, fitKey);
    return { label: slope ? `${label}: ${slope}` : label, points: pts, color: color(i) };
  });
  return {
    title: spec.title ?? "Coupled strong error vs time step",
    xLabel: "time step tau",
    yLabel: "sup-in-time mean-square error",
    xScale: spec.xScale ?? "log",
    yScale: spec.yScale ?? "log",
    series,
    guides: [spec.overlay ?? { slope: 1, label: "slope 1 guide" }],
    footer: "",
  };
}

function longtimeChart(csv: StudyCsv, fits: FitsFile | undefined, spec: FigureSpec): ChartSpec {
  requireColumns(csv, ["n_particles", "tau", "t", "w1"]);
  const groups = groupBy(csv.rows, (r) => `N=${r["n_particles"]}, tau=${r["tau"]}`);
  const series = [...groups.entries()].map(([label, rows], i) => {
    const first = rows[0]!;
    const fitKey = `decay_n${first["n_particles"]}_tau${Number(first["tau"])}`;
    const fit = fits?.fits[fitKey];
    const suffix = fit && fit.lambda_hat !== null ? `: lambda ${fit.lambda_hat.toFixed(2)}` : "";
    const pts = rows
      .map((r) => [numeric(r, "t", csv.path), numeric(r, "w1", csv.path)] as [number, number])
      .sort((a, b) => a[0] - b[0]);
    return { label: `${label}${suffix}`, points: pts, color: color(i), marker: false };
  });
  return {
    title: spec.title ?? "Sampling error vs time",
    xLabel: "time t",
    yLabel: "W1 to invariant-law estimate",
    xScale: spec.xScale ?? "linear",
    yScale: spec.yScale ?? "log",
    series,
    guides: spec.overlay ? [spec.overlay] : [],
    footer: "",
  };
}

function chaosChart(csv: StudyCsv, fits: FitsFile | undefined, spec: FigureSpec): ChartSpec {
  requireColumns(csv, ["n_particles", "w1_mean"]);
  const pts = csv.rows
    .map((r) => [numeric(r, "n_particles", csv.path), numeric(r, "w1_mean", csv.path)] as [number, number])
    .sort((a, b) => a[0] - b[0]);
  const slope = fitSlopeLabel(fits, "chaos_slope");
  return {
    title: spec.title ?? "Empirical-measure error vs particle count",
    xLabel: "particles N",
    yLabel: "E[W1(empirical, invariant estimate)]",
    xScale: spec.xScale ?? "log",
    yScale: spec.yScale ?? "log",
    series: [{ label: slope ?? "late-time W1", points: pts, color: color(0) }],
    guides: [spec.overlay ?? { slope: -0.5, label: "slope -1/2 guide" }],
    footer: "",
  };
}

function perfChart(csv: StudyCsv, fits: FitsFile | undefined, spec: FigureSpec): ChartSpec {
  requireColumns(csv, ["mode", "n_particles", "seconds_per_step"]);
  const groups = groupBy(csv.rows, (r) => r["mode"]!);
  const series = [...groups.entries()].map(([mode, rows], i) => {
    const pts = rows
      .map((r) => [numeric(r, "n_particles", csv.path), numeric(r, "seconds_per_step", csv.path)] as [number, number])
      .sort((a, b) => a[0] - b[0]);
    const slope = fitSlopeLabel(fits, `perf_${mode}_slope`);
    return { label: slope ? `${mode}: ${slope}` : mode, points: pts, color: color(i) };
  });
  return {
    title: spec.title ?? "Per-step force-evaluation cost",
    xLabel: "particles N",
    yLabel: "seconds per step",
    xScale: spec.xScale ?? "log",
    yScale: spec.yScale ?? "log",
    series,
    guides: spec.overlay ? [spec.overlay] : [{ slope: 2, label: "slope 2 guide" }],
    footer: "",
  };
}

function stabilityChart(csv: StudyCsv, _fits: FitsFile | undefined, spec: FigureSpec): ChartSpec {
  requireColumns(csv, ["tau", "t", "moment4"]);
  const groups = groupBy(csv.rows, (r) => `tau=${r["tau"]}`);
  const series = [...groups.entries()].map(([label, rows], i) => {
    const pts = rows
      .map((r) => [numeric(r, "t", csv.path), numeric(r, "moment4", csv.path)] as [number, number])
      .sort((a, b) => a[0] - b[0]);
    return { label, points: pts, color: color(i), marker: false };
  });
  return {
    title: spec.title ?? "Fourth moment over time",
    xLabel: "time t",
    yLabel: "pooled fourth moment",
    xScale: spec.xScale ?? "linear",
    yScale: spec.yScale ?? "linear",
    series,
    guides: [],
    footer: "",
  };
}

const RENDERERS: Record<FigureKind, (csv: StudyCsv, fits: FitsFile | undefined, spec: FigureSpec) => ChartSpec> = {
  "strong-order": strongOrderChart,
  longtime: longtimeChart,
  chaos: chaosChart,
  perf: perfChart,
  stability: stabilityChart,
};

export function validateSpec(raw: unknown): FigureSpec {
  if (typeof raw !== "object" || raw === null) {
    throw new SchemaError("figure spec must be an object");
  }
  const spec = raw as Partial<FigureSpec>;
  if (!spec.kind || !(spec.kind in RENDERERS)) {
    throw new SchemaError(`unknown figure kind ${JSON.stringify(spec.kind)}`);
  }
  if (!Array.isArray(spec.inputs) || spec.inputs.length === 0) {
    throw new SchemaError("figure spec needs at least one input CSV");
  }
  if (typeof spec.output !== "string" || !spec.output) {
    throw new SchemaError("figure spec needs an output path");
  }
  if (typeof spec.caption !== "string" || !spec.caption) {
    throw new SchemaError("figure spec needs a caption claim tag");
  }
  return spec as FigureSpec;
}

export function renderFigure(spec: FigureSpec): RenderedFigure {
  const csvs = spec.inputs.map(loadStudyCsv);
  const fits = spec.fits ? loadFits(spec.fits) : undefined;
  const fingerprint = requireSameFingerprint([...csvs, ...(fits ? [fits] : [])]);
  const primary = csvs[0]!;
  const chart = RENDERERS[spec.kind](primary, fits, spec);
  const caption = `${spec.caption} | fingerprint=${fingerprint} | source=${spec.inputs.join(", ")}`;
  chart.footer = caption;
  return { svg: renderChart(chart), caption, fingerprint };
}
