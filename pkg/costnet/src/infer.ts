/** Batch inference: spherical image pairs in, per-pair OCSV cost volumes out. */

import * as fs from "fs";
import * as path from "path";

import { SphericalImage, loadSweepDir, writeOcsv } from "./io";
import { CostNetwork } from "./model";

export interface InferResult {
  pair: [number, number];
  file: string;
  spheres: number;
}

export function inferPairVolume(model: CostNetwork, byCamera: Map<number, Map<number, SphericalImage>>,
                                camA: number, camB: number, outFile: string): InferResult {
  const a = byCamera.get(camA);
  const b = byCamera.get(camB);
  if (!a || !b) throw new Error(`cameras ${camA},${camB} not present in the sweep set`);
  const spheres = [...a.keys()].sort((x, y) => x - y);
  const first = a.get(spheres[0])!;
  const W = first.width;
  const H = first.height;
  if (W % 2 !== 0 || H % 2 !== 0) {
    throw new Error(`spherical image size ${W}x${H} must be even for the stride-2 branch`);
  }
  const N = spheres.length;
  const data = new Float32Array(N * H * W);
  const mask = new Uint8Array(N * H * W);
  spheres.forEach((n, slice) => {
    const sa = a.get(n);
    const sb = b.get(n);
    if (!sa || !sb) throw new Error(`sphere ${n} missing for camera pair ${camA},${camB}`);
    if (sa.width !== W || sa.height !== H || sb.width !== W || sb.height !== H) {
      throw new Error(`sphere ${n}: image dimensions disagree with the grid header`);
    }
    const { cost } = model.forward(sa.data, sb.data, H, W);
    const base = slice * H * W;
    for (let i = 0; i < H * W; i++) {
      data[base + i] = cost[i];
      mask[base + i] = sa.mask[i] && sb.mask[i] ? 1 : 0;
    }
  });
  writeOcsv(outFile, data, mask, W, H, N);
  return { pair: [camA, camB], file: outFile, spheres: N };
}

export function inferAllPairs(model: CostNetwork, sweepDir: string, outDir: string,
                              pairs?: [number, number][]): InferResult[] {
  const byCamera = loadSweepDir(sweepDir);
  const cams = [...byCamera.keys()].sort((x, y) => x - y);
  const selected = pairs ?? cams.flatMap((i, ii) => cams.slice(ii + 1).map((j) => [i, j] as [number, number]));
  fs.mkdirSync(outDir, { recursive: true });
  return selected.map(([i, j]) =>
    inferPairVolume(model, byCamera, i, j, path.join(outDir, `pair_${i}_${j}.ocsv`)));
}
