/**
 * Readers for the study CSV and fit-record contracts.
 *
 * Every study CSV starts with `# fingerprint=<12 hex>` and `# config=<json>`
 * comment lines, then a header row. Files missing either line, or whose
 * columns do not cover a renderer's needs, are refused with a SchemaError.
 */

import { readFileSync } from "node:fs";

export class SchemaError extends Error {}

export interface StudyCsv {
  path: string;
  fingerprint: string;
  config: Record<string, unknown>;
  columns: string[];
  rows: Record<string, string>[];
}

export interface FitRecord {
  lambda_hat: number | null;
  plateau_hat: number | null;
  slope_hat: number | null;
  r_squared: number;
  window_lo: number;
  window_hi: number;
}

export interface FitsFile {
  path: string;
  fingerprint: string;
  fits: Record<string, FitRecord>;
}

export function parseStudyCsv(path: string, text: string): StudyCsv {
  const lines = text.split(/\r?\n/);
  if (lines.length < 3 || !lines[0]?.startsWith("# fingerprint=")) {
    throw new SchemaError(`${path}: missing '# fingerprint=' header line`);
  }
  if (!lines[1]?.startsWith("# config=")) {
    throw new SchemaError(`${path}: missing '# config=' header line`);
  }
  const fingerprint = lines[0].slice("# fingerprint=".length).trim();
  if (!/^[0-9a-f]{12}$/.test(fingerprint)) {
    throw new SchemaError(`${path}: malformed fingerprint ${JSON.stringify(fingerprint)}`);
  }
  let config: Record<string, unknown>;
  try {
    config = JSON.parse(lines[1].slice("# config=".length)) as Record<string, unknown>;
  } catch (err) {
    throw new SchemaError(`${path}: config header is not valid JSON (${String(err)})`);
  }
  const header = lines[2];
  if (!header) {
    throw new SchemaError(`${path}: missing column header row`);
  }
  const columns = header.split(",");
  const rows: Record<string, string>[] = [];
  for (const line of lines.slice(3)) {
    if (!line) continue;
    const cells = line.split(",");
    if (cells.length !== columns.length) {
      throw new SchemaError(`${path}: row has ${cells.length} cells, expected ${columns.length}`);
    }
    const row: Record<string, string> = {};
    columns.forEach((c, i) => (row[c] = cells[i] ?? ""));
    rows.push(row);
  }
  if (rows.length === 0) {
    throw new SchemaError(`${path}: no data rows`);
  }
  return { path, fingerprint, config, columns, rows };
}

export function loadStudyCsv(path: string): StudyCsv {
  return parseStudyCsv(path, readFileSync(path, "utf8"));
}

export function requireColumns(csv: StudyCsv, needed: string[]): void {
  const missing = needed.filter((c) => !csv.columns.includes(c));
  if (missing.length > 0) {
    throw new SchemaError(`${csv.path}: missing columns ${missing.join(", ")} (has ${csv.columns.join(", ")})`);
  }
}

export function numeric(row: Record<string, string>, column: string, path: string): number {
  const raw = row[column];
  if (raw === undefined || raw === "") {
    return NaN;
  }
  const value = Number(raw);
  if (Number.isNaN(value)) {
    throw new SchemaError(`${path}: non-numeric value ${JSON.stringify(raw)} in column ${column}`);
  }
  return value;
}

export function loadFits(path: string): FitsFile {
  let payload: { fingerprint?: unknown; fits?: unknown };
  try {
    payload = JSON.parse(readFileSync(path, "utf8")) as { fingerprint?: unknown; fits?: unknown };
  } catch (err) {
    throw new SchemaError(`${path}: not valid JSON (${String(err)})`);
  }
  if (typeof payload.fingerprint !== "string" || typeof payload.fits !== "object" || payload.fits === null) {
    throw new SchemaError(`${path}: expected {fingerprint, fits}`);
  }
  return { path, fingerprint: payload.fingerprint, fits: payload.fits as Record<string, FitRecord> };
}

/** All inputs to one figure must come from the same run. */
export function requireSameFingerprint(parts: { path: string; fingerprint: string }[]): string {
  const first = parts[0];
  if (!first) {
    throw new SchemaError("no inputs given");
  }
  for (const part of parts.slice(1)) {
    if (part.fingerprint !== first.fingerprint) {
      throw new SchemaError(
        `fingerprint mismatch: ${first.path} is ${first.fingerprint}, ${part.path} is ${part.fingerprint}`,
      );
    }
  }
  return first.fingerprint;
}
