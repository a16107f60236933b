/** Training labels from ground-truth depth.
 *
 * A pixel's true sphere index is round(dMin * (N - 1) / depth); position p on
 * sphere n is positive (0) when n equals that index and negative (1)
 * otherwise. Spheres with fewer than 32 positives in a frame are discarded.
 */

import { Pcg32 } from "./tensor";

export const MIN_POSITIVES = 32;

export interface GridSpec {
  width: number;
  height: number;
  nSpheres: number;
  dMin: number;
}

export interface SphereLabels {
  sphere: number;
  positives: Int32Array; // flat pixel indices
  negatives: Int32Array;
}

export function trueIndexMap(depthMeters: Float64Array, grid: GridSpec):
    { index: Int32Array; clamped: number } {
  const scale = grid.dMin * (grid.nSpheres - 1);
  const out = new Int32Array(depthMeters.length);
  let clamped = 0;
  for (let i = 0; i < depthMeters.length; i++) {
    const d = depthMeters[i];
    if (!(d > 0)) throw new Error(`non-positive depth at pixel ${i}`);
    let n = Number.isFinite(d) ? Math.round(scale / d) : 0;
    if (n > grid.nSpheres - 1) {
      n = grid.nSpheres - 1;
      clamped++;
    }
    out[i] = n;
  }
  return { index: out, clamped };
}

/** Positive/negative pixel sets per retained sphere for one frame. */
export function makeLabels(depthMeters: Float64Array, grid: GridSpec,
                           validMask?: Uint8Array): SphereLabels[] {
  const { index, clamped } = trueIndexMap(depthMeters, grid);
  if (clamped > 0) {
    process.stderr.write(`warning: ${clamped} pixels closer than dMin clamped to the last sphere\n`);
  }
  const byIndex: number[][] = Array.from({ length: grid.nSpheres }, () => []);
  const usable: number[] = [];
  for (let i = 0; i < index.length; i++) {
    if (validMask && !validMask[i]) continue;
    byIndex[index[i]].push(i);
    usable.push(i);
  }
  const out: SphereLabels[] = [];
  for (let n = 0; n < grid.nSpheres; n++) {
    const pos = byIndex[n];
    if (pos.length < MIN_POSITIVES) continue;
    const negatives: number[] = [];
    for (const i of usable) if (index[i] !== n) negatives.push(i);
    out.push({
      sphere: n,
      positives: Int32Array.from(pos),
      negatives: Int32Array.from(negatives),
    });
  }
  return out;
}

export interface BalancedSample {
  sphere: number;
  pixels: Int32Array;
  targets: Float64Array; // 0 positive, 1 negative
}

/** Equal positive/negative counts, optionally capped, deterministic given the rng. */
export function balancedSample(labels: SphereLabels, rng: Pcg32,
                               capPerClass = Infinity): BalancedSample {
  const count = Math.min(labels.positives.length, labels.negatives.length, capPerClass);
  const pick = (arr: Int32Array): number[] => {
    const idx = Array.from({ length: arr.length }, (_, i) => i);
    rng.shuffle(idx);
    return idx.slice(0, count).map((i) => arr[i]);
  };
  const pos = pick(labels.positives);
  const neg = pick(labels.negatives);
  const pixels = new Int32Array(2 * count);
  const targets = new Float64Array(2 * count);
  for (let i = 0; i < count; i++) {
    pixels[2 * i] = pos[i];
    targets[2 * i] = 0;
    pixels[2 * i + 1] = neg[i];
    targets[2 * i + 1] = 1;
  }
  return { sphere: labels.sphere, pixels, targets };
}
