import assert from "node:assert/strict";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { test } from "node:test";

import { SchemaError } from "../src/csv.js";
import { renderFigure, validateSpec } from "../src/figures.js";

const FP = "abcdef012345";

function writeCsv(dir: string, name: string, columns: string, rows: string[]): string {
  const path = join(dir, name);
  writeFileSync(path, [`# fingerprint=${FP}`, '# config={"study":"t"}', columns, ...rows, ""].join("\n"));
  return path;
}

function writeFits(dir: string, name: string, fits: Record<string, object>, fp = FP): string {
  const path = join(dir, name);
  writeFileSync(path, JSON.stringify({ fingerprint: fp, fits }));
  return path;
}

test("strong-order figure annotates the fitted slope and embeds the fingerprint", () => {
  const dir = mkdtempSync(join(tmpdir(), "fig-"));
  const csv = writeCsv(dir, "strong_order.csv", "pair,tau,batch_size,mse_sup,stderr,failed", [
    "discrete_rbips_vs_reference_ips,0.0625,2,0.0001,1e-06,0",
    "discrete_rbips_vs_reference_ips,0.03125,2,5e-05,5e-07,0",
    "discrete_rbips_vs_reference_ips,0.015625,2,2.5e-05,2e-07,0",
  ]);
  const fits = writeFits(dir, "fits.json", {
    order_discrete_rbips_vs_reference_ips_p2: {
      lambda_hat: null,
      plateau_hat: null,
      slope_hat: 1.043,
      r_squared: 0.999,
      window_lo: 0,
      window_hi: 3,
    },
  });
  const out = renderFigure({
    kind: "strong-order",
    inputs: [csv],
    fits,
    output: join(dir, "fig.svg"),
    caption: "claim: strong-error order in the time step",
  });
  assert.match(out.svg, /<svg /);
  assert.match(out.svg, /fitted slope 1.043/);
  assert.match(out.svg, /slope 1 guide/);
  assert.ok(out.svg.includes(FP));
  assert.ok(out.caption.includes(FP));
  assert.ok(out.caption.includes("claim:"));
});

test("longtime figure draws one curve per (N, tau) with a decay-rate legend", () => {
  const dir = mkdtempSync(join(tmpdir(), "fig-"));
  const rows: string[] = [];
  for (const n of [16, 64, 256]) {
    for (let i = 0; i <= 10; i++) {
      rows.push(`${n},0.015625,${i * 0.5},${0.01 + Math.exp(-2 * i * 0.5)}`);
    }
  }
  const csv = writeCsv(dir, "longtime_curve.csv", "n_particles,tau,t,w1", rows);
  const fits = writeFits(dir, "fits.json", {
    "decay_n16_tau0.015625": { lambda_hat: 5.61, plateau_hat: 0.01, slope_hat: null, r_squared: 0.99, window_lo: 0, window_hi: 9 },
    "decay_n64_tau0.015625": { lambda_hat: 5.65, plateau_hat: 0.01, slope_hat: null, r_squared: 0.99, window_lo: 0, window_hi: 9 },
    "decay_n256_tau0.015625": { lambda_hat: 5.74, plateau_hat: 0.01, slope_hat: null, r_squared: 0.99, window_lo: 0, window_hi: 9 },
  });
  const out = renderFigure({
    kind: "longtime",
    inputs: [csv],
    fits,
    output: join(dir, "fig.svg"),
    caption: "claim: decay rate uniform in N",
  });
  const curves = out.svg.match(/<polyline /g) ?? [];
  assert.equal(curves.length, 3);
  assert.match(out.svg, /lambda 5.61/);
  assert.match(out.svg, /lambda 5.74/);
});

test("chaos figure gets the -1/2 reference guide", () => {
  const dir = mkdtempSync(join(tmpdir(), "fig-"));
  const csv = writeCsv(dir, "chaos.csv", "n_particles,w1_mean,stderr,replicas", [
    "16,0.31,0.01,40",
    "64,0.16,0.005,40",
    "256,0.08,0.002,40",
  ]);
  const out = renderFigure({
    kind: "chaos",
    inputs: [csv],
    output: join(dir, "fig.svg"),
    caption: "claim: 1/sqrt(N) gap",
  });
  assert.match(out.svg, /slope -1\/2 guide/);
});

test("schema mismatch fails loudly", () => {
  const dir = mkdtempSync(join(tmpdir(), "fig-"));
  const wrong = writeCsv(dir, "strong_order.csv", "tau,value", ["0.1,1"]);
  assert.throws(
    () =>
      renderFigure({
        kind: "strong-order",
        inputs: [wrong],
        output: join(dir, "fig.svg"),
        caption: "claim: x",
      }),
    /missing columns/,
  );
});

test("fits from a different run are refused", () => {
  const dir = mkdtempSync(join(tmpdir(), "fig-"));
  const csv = writeCsv(dir, "chaos.csv", "n_particles,w1_mean", ["16,0.3", "64,0.15", "256,0.08"]);
  const fits = writeFits(dir, "fits.json", {}, "999999999999");
  assert.throws(
    () =>
      renderFigure({
        kind: "chaos",
        inputs: [csv],
        fits,
        output: join(dir, "f.svg"),
        caption: "claim: x",
      }),
    /fingerprint mismatch/,
  );
});

test("validateSpec rejects malformed specs", () => {
  assert.throws(() => validateSpec({}), SchemaError);
  assert.throws(() => validateSpec({ kind: "nope", inputs: ["x"], output: "y", caption: "c" }), /unknown figure kind/);
  assert.throws(() => validateSpec({ kind: "chaos", inputs: [], output: "y", caption: "c" }), /at least one input/);
  assert.throws(() => validateSpec({ kind: "chaos", inputs: ["x"], output: "", caption: "c" }), /output path/);
  assert.throws(() => validateSpec({ kind: "chaos", inputs: ["x"], output: "y", caption: "" }), /caption/);
});

test("perf and stability renderers accept their schemas", () => {
  const dir = mkdtempSync(join(tmpdir(), "fig-"));
  const perf = writeCsv(dir, "perf.csv", "mode,n_particles,batch_size,seconds_per_step", [
    "full,512,,0.012",
    "full,1024,,0.05",
    "full,2048,,0.2",
    "batched,8192,2,0.001",
    "batched,16384,2,0.002",
  ]);
  const out = renderFigure({
    kind: "perf",
    inputs: [perf],
    output: join(dir, "p.svg"),
    caption: "claim: cost scaling",
  });
  assert.match(out.svg, /slope 2 guide/);

  const stab = writeCsv(dir, "stability_curve.csv", "tau,t,moment4", [
    "0.25,1,3.1",
    "0.25,2,3.3",
    "0.25,3,3.2",
  ]);
  const out2 = renderFigure({
    kind: "stability",
    inputs: [stab],
    output: join(dir, "s.svg"),
    caption: "claim: bounded moments",
  });
  assert.match(out2.svg, /tau=0.25/);
});
