/** Command line: train / infer / labels, mirroring the depth pipeline flags. */

import * as fs from "fs";
import * as path from "path";

import { GridSpec, makeLabels, trueIndexMap } from "./labels";
import { loadCheckpoint, loadSweepDir, readDepthIndices, readGridSidecar, saveCheckpoint } from "./io";
import { CostNetwork, DESK_CONFIG, TABLE_CONFIG } from "./model";
import { DEFAULT_TRAIN, FramePair, buildTrainingSet, train } from "./train";
import { inferAllPairs } from "./infer";

interface Args {
  [key: string]: string | string[] | boolean;
}

function parseArgs(argv: string[]): { command: string; args: Args } {
  const command = argv[0];
  const args: Args = {};
  let i = 1;
  while (i < argv.length) {
    const tok = argv[i];
    if (!tok.startsWith("--")) throw new Error(`unexpected argument ${tok}`);
    const key = tok.slice(2);
    const vals: string[] = [];
    i++;
    while (i < argv.length && !argv[i].startsWith("--")) {
      vals.push(argv[i]);
      i++;
    }
    args[key] = vals.length === 0 ? true : vals.length === 1 ? vals[0] : vals;
  }
  return { command, args };
}

function num(args: Args, key: string, dflt: number): number {
  const v = args[key];
  if (v === undefined) return dflt;
  const n = Number(v);
  if (!Number.isFinite(n)) throw new Error(`--${key} expects a number`);
  return n;
}

function str(args: Args, key: string): string {
  const v = args[key];
  if (typeof v !== "string") throw new Error(`--${key} is required`);
  return v;
}

function gridFromArgs(args: Args, sweepDir?: string): GridSpec {
  if (sweepDir) {
    const sidecar = path.join(sweepDir, "grid.json");
    if (fs.existsSync(sidecar)) {
      const g = readGridSidecar(sidecar);
      return { width: g.width, height: g.height, nSpheres: g.nSpheres, dMin: g.dMin };
    }
  }
  return {
    width: num(args, "width", 200),
    height: num(args, "height", 50),
    nSpheres: num(args, "n-spheres", 32),
    dMin: num(args, "d-min", 1.2),
  };
}

function loadFrames(dirs: string[], camA: number, camB: number, grid: GridSpec): FramePair[] {
  return dirs.map((dir) => {
    const byCamera = loadSweepDir(path.join(dir, "sweep"));
    const a = byCamera.get(camA);
    const b = byCamera.get(camB);
    if (!a || !b) throw new Error(`${dir}: cameras ${camA},${camB} missing from sweep`);
    const gt = readDepthIndices(path.join(dir, "gt_depth.ocsv"));
    if (gt.w !== grid.width || gt.h !== grid.height) {
      throw new Error(`${dir}: ground truth is ${gt.w}x${gt.h}, grid wants ` +
                      `${grid.width}x${grid.height}`);
    }
    const depth = new Float64Array(gt.index.length);
    const scale = grid.dMin * (grid.nSpheres - 1);
    for (let i = 0; i < depth.length; i++) {
      depth[i] = gt.index[i] === 0 ? Infinity : scale / gt.index[i];
    }
    const spheres = new Map<number, { a: Float64Array; b: Float64Array; valid: Uint8Array }>();
    for (const [n, sa] of a) {
      const sb = b.get(n);
      if (!sb) continue;
      const valid = new Uint8Array(sa.mask.length);
      for (let i = 0; i < valid.length; i++) valid[i] = sa.mask[i] && sb.mask[i] ? 1 : 0;
      spheres.set(n, { a: sa.data, b: sb.data, valid });
    }
    return { spheres, depthMeters: depth };
  });
}

function cmdTrain(args: Args): number {
  const frames = ([] as string[]).concat(args["frames"] as string[] | string);
  const grid = gridFromArgs(args, path.join(frames[0], "sweep"));
  const camA = num(args, "cam-a", 0);
  const camB = num(args, "cam-b", 1);
  const config = {
    ...DEFAULT_TRAIN,
    epochs: num(args, "epochs", DEFAULT_TRAIN.epochs),
    initialLr: num(args, "lr", DEFAULT_TRAIN.initialLr),
    lateLr: num(args, "late-lr", DEFAULT_TRAIN.lateLr),
    lrDropEpoch: num(args, "lr-drop-epoch", DEFAULT_TRAIN.lrDropEpoch),
    momentum: num(args, "momentum", DEFAULT_TRAIN.momentum),
    capPerClass: num(args, "cap-per-class", DEFAULT_TRAIN.capPerClass),
    seed: num(args, "seed", DEFAULT_TRAIN.seed),
    targetLoss: args["target-loss"] !== undefined ? num(args, "target-loss", 0) : undefined,
    log: (line: string) => process.stdout.write(line + "\n"),
  };
  const channels = String(args["channels"] ?? "desk");
  const model = new CostNetwork(channels === "table" ? TABLE_CONFIG
    : channels === "desk" ? DESK_CONFIG
    : { branchChannels: num(args, "branch-channels", 8),
        headChannels: num(args, "head-channels", 32),
        fcChannels: num(args, "fc-channels", 64) },
    num(args, "init-seed", 7));
  const data = loadFrames(frames, camA, camB, grid);
  const samples = buildTrainingSet(data, grid, config);
  process.stdout.write(`training on ${samples.length} (frame, sphere) samples\n`);
  const result = train(model, samples, grid, config);
  const out = str(args, "out");
  saveCheckpoint(out, model, {
    grid: { width: grid.width, height: grid.height, nSpheres: grid.nSpheres, dMin: grid.dMin },
    normalizedInputs: true,
    epoch: result.epochsRun,
    lossLog: result.lossLog,
  });
  process.stdout.write(`saved checkpoint ${out}.json/.bin (final loss ` +
                       `${result.lossLog[result.lossLog.length - 1]?.toFixed(4)})\n`);
  return result.aborted ? 2 : 0;
}

function cmdInfer(args: Args): number {
  const { model, meta } = loadCheckpoint(str(args, "checkpoint"));
  const sweepDir = str(args, "sweep-dir");
  const grid = gridFromArgs(args, sweepDir);
  if (meta.grid && (meta.grid.width !== grid.width || meta.grid.height !== grid.height)) {
    throw new Error(`checkpoint was trained at ${meta.grid.width}x${meta.grid.height}, ` +
                    `sweep is ${grid.width}x${grid.height}`);
  }
  const pairsArg = args["pairs"];
  let pairs: [number, number][] | undefined;
  if (typeof pairsArg === "string" && pairsArg !== "all") {
    pairs = pairsArg.split(",").map((tok) => {
      const [a, b] = tok.split("-").map(Number);
      return [a, b] as [number, number];
    });
  }
  const results = inferAllPairs(model, sweepDir, str(args, "out"), pairs);
  for (const r of results) {
    process.stdout.write(`pair ${r.pair[0]}-${r.pair[1]}: ${r.spheres} spheres -> ${r.file}\n`);
  }
  return 0;
}

function cmdLabels(args: Args): number {
  const gtFile = str(args, "gt");
  const grid = gridFromArgs(args);
  const gt = readDepthIndices(gtFile);
  const scale = grid.dMin * (grid.nSpheres - 1);
  const depth = new Float64Array(gt.index.length);
  for (let i = 0; i < depth.length; i++) {
    depth[i] = gt.index[i] === 0 ? Infinity : scale / gt.index[i];
  }
  const labels = makeLabels(depth, grid);
  const { index } = trueIndexMap(depth, grid);
  const summary = {
    retained_spheres: labels.map((l) => ({
      sphere: l.sphere, positives: l.positives.length, negatives: l.negatives.length,
    })),
    pixels: index.length,
  };
  const out = args["out"];
  const text = JSON.stringify(summary, null, 2);
  if (typeof out === "string") fs.writeFileSync(out, text + "\n");
  process.stdout.write(text + "\n");
  return 0;
}

export function main(argv: string[]): number {
  try {
    const { command, args } = parseArgs(argv);
    switch (command) {
      case "train":
        return cmdTrain(args);
      case "infer":
        return cmdInfer(args);
      case "labels":
        return cmdLabels(args);
      default:
        process.stderr.write("usage: costnet <train|infer|labels> [--flags]\n");
        return 1;
    }
  } catch (err) {
    process.stderr.write(`error: ${err instanceof Error ? err.message : err}\n`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
