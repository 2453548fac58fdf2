/**
 * Figure renderer CLI: file-to-file transform from study CSVs to SVG.
 *
 *   node dist/src/cli.js spec.json [more-specs.json ...]
 *   node dist/src/cli.js --kind chaos --input out/chaos/chaos.csv \
 *        --fits out/chaos/chaos_fits.json --out figures/chaos.svg \
 *        --caption "claim: mean-field gap rate in particle count"
 *
 * Each spec yields one SVG plus a sibling .caption.txt. Schema or
 * fingerprint mismatches abort with a descriptive message and exit code 1.
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { dirname, resolve } from "node:path";
import process from "node:process";

import { SchemaError } from "./csv.js";
import { FigureKind, FigureSpec, renderFigure, validateSpec } from "./figures.js";

function specFromFlags(argv: string[]): FigureSpec {
  const flags = new Map<string, string[]>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i]!;
    if (!arg.startsWith("--")) {
      throw new SchemaError(`unexpected argument ${arg}`);
    }
    const value = argv[++i];
    if (value === undefined) {
      throw new SchemaError(`flag ${arg} needs a value`);
    }
    const list = flags.get(arg) ?? [];
    list.push(value);
    flags.set(arg, list);
  }
  const one = (name: string): string | undefined => flags.get(name)?.[0];
  const overlayRaw = one("--overlay-slope");
  return validateSpec({
    kind: one("--kind") as FigureKind,
    inputs: flags.get("--input") ?? [],
    fits: one("--fits"),
    output: one("--out") ?? "",
    caption: one("--caption") ?? "",
    title: one("--title"),
    xScale: one("--x-scale") as FigureSpec["xScale"],
    yScale: one("--y-scale") as FigureSpec["yScale"],
    overlay:
      overlayRaw !== undefined
        ? { slope: Number(overlayRaw), label: one("--overlay-label") ?? `slope ${overlayRaw} guide` }
        : undefined,
  });
}

function loadSpecFile(path: string): FigureSpec {
  let raw: unknown;
  try {
    raw = JSON.parse(readFileSync(path, "utf8"));
  } catch (err) {
    throw new SchemaError(`${path}: cannot read figure spec (${String(err)})`);
  }
  const spec = validateSpec(raw);
  // paths inside a spec file are relative to the spec file itself
  const base = dirname(resolve(path));
  return {
    ...spec,
    inputs: spec.inputs.map((p) => resolve(base, p)),
    fits: spec.fits ? resolve(base, spec.fits) : undefined,
    output: resolve(base, spec.output),
  };
}

export function main(argv: string[]): number {
  try {
    const specs: FigureSpec[] =
      argv.length > 0 && argv[0]!.startsWith("--") ? [specFromFlags(argv)] : argv.map(loadSpecFile);
    if (specs.length === 0) {
      process.stderr.write("usage: cli.js <figure-spec.json>... | --kind ... --input ... --out ... --caption ...\n");
      return 1;
    }
    for (const spec of specs) {
      const rendered = renderFigure(spec);
      mkdirSync(dirname(spec.output), { recursive: true });
      writeFileSync(spec.output, rendered.svg);
      const captionPath = spec.output.replace(/\.svg$/, "") + ".caption.txt";
      writeFileSync(captionPath, rendered.caption + "\n");
      process.stdout.write(`wrote ${spec.output} (${rendered.fingerprint})\n`);
    }
    return 0;
  } catch (err) {
    if (err instanceof SchemaError) {
      process.stderr.write(`schema error: ${err.message}\n`);
      return 1;
    }
    if (err instanceof Error && "code" in err && (err as NodeJS.ErrnoException).code === "ENOENT") {
      process.stderr.write(`missing input: ${err.message}\n`);
      return 1;
    }
    throw err;
  }
}

if (process.argv[1] && resolve(process.argv[1]).endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
