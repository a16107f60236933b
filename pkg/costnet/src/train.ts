/** SGD-with-momentum training over (frame, sphere) spherical image pairs. */

import { BalancedSample, GridSpec, SphereLabels, balancedSample, makeLabels } from "./labels";
import { CostNetwork, LabeledPixel, ParamMap, trainingStep } from "./model";
import { Pcg32 } from "./tensor";

export interface TrainConfig {
  epochs: number;
  initialLr: number;       // first lrDropEpoch epochs
  lateLr: number;          // afterwards
  lrDropEpoch: number;     // epochs at the initial rate
  momentum: number;
  capPerClass: number;     // balanced-sample cap per class per sphere
  seed: number;
  targetLoss?: number;     // optional early stop on epoch loss
  log?: (line: string) => void;
}

export const DEFAULT_TRAIN: TrainConfig = {
  epochs: 14,
  initialLr: 0.003,
  lateLr: 0.0003,
  lrDropEpoch: 11,
  momentum: 0.9,
  capPerClass: 128,
  seed: 1,
};

export interface FrameSample {
  frame: number;
  sphere: number;
  imgA: Float64Array;
  imgB: Float64Array;
  labels: LabeledPixel[];
}

export interface FramePair {
  /** warped image pairs indexed by sphere */
  spheres: Map<number, { a: Float64Array; b: Float64Array; valid: Uint8Array }>;
  /** per-pixel true depth in meters (from the ground-truth index map) */
  depthMeters: Float64Array;
}

export class Sgd {
  private velocity: ParamMap;

  constructor(private model: CostNetwork, private momentum: number) {
    this.velocity = model.newGradMap();
  }

  apply(grads: ParamMap, lr: number): void {
    for (const [name, p] of this.model.params) {
      const g = grads.get(name)!;
      const v = this.velocity.get(name)!;
      for (const field of ["weight", "bias"] as const) {
        const pv = p[field].data;
        const gv = g[field].data;
        const vv = v[field].data;
        for (let i = 0; i < pv.length; i++) {
          vv[i] = this.momentum * vv[i] - lr * gv[i];
          pv[i] += vv[i];
        }
      }
    }
  }
}

export function buildTrainingSet(frames: FramePair[], grid: GridSpec,
                                 config: TrainConfig): FrameSample[] {
  const rng = new Pcg32(config.seed, 11n);
  const samples: FrameSample[] = [];
  const W = grid.width;
  frames.forEach((frame, fi) => {
    // only pixels visible in both warps make meaningful labels; use the
    // validity of the shallowest stored sphere as the common gate per sphere
    frame.spheres.forEach((pair, n) => {
      const labels: SphereLabels[] = makeLabels(frame.depthMeters, grid, pair.valid);
      const forSphere = labels.find((l) => l.sphere === n);
      if (!forSphere) return;
      const bal: BalancedSample = balancedSample(forSphere, rng, config.capPerClass);
      const pix: LabeledPixel[] = [];
      for (let i = 0; i < bal.pixels.length; i++) {
        const p = bal.pixels[i];
        pix.push({ y: Math.floor(p / W), x: p % W, target: bal.targets[i] });
      }
      if (pix.length >= 2) {
        samples.push({ frame: fi, sphere: n, imgA: pair.a, imgB: pair.b, labels: pix });
      }
    });
  });
  return samples;
}

export interface TrainResult {
  lossLog: number[];
  lrLog: number[];
  epochsRun: number;
  aborted: boolean;
}

export function train(model: CostNetwork, samples: FrameSample[], grid: GridSpec,
                      config: TrainConfig): TrainResult {
  if (samples.length === 0) throw new Error("no labeled samples to train on");
  const sgd = new Sgd(model, config.momentum);
  const rng = new Pcg32(config.seed, 29n);
  const lossLog: number[] = [];
  const lrLog: number[] = [];
  const log = config.log ?? (() => undefined);
  for (let epoch = 1; epoch <= config.epochs; epoch++) {
    const lr = epoch <= config.lrDropEpoch ? config.initialLr : config.lateLr;
    lrLog.push(lr);
    const order = rng.shuffle(samples.map((_, i) => i));
    let lossSum = 0;
    let count = 0;
    for (const si of order) {
      const s = samples[si];
      const grads = model.newGradMap();
      const { loss, count: n } = trainingStep(model, s.imgA, s.imgB,
                                              grid.height, grid.width, s.labels, grads);
      if (!Number.isFinite(loss)) {
        log(`epoch ${epoch}: non-finite loss, aborting with the last good state`);
        return { lossLog, lrLog, epochsRun: epoch - 1, aborted: true };
      }
      sgd.apply(grads, lr);
      lossSum += loss * n;
      count += n;
    }
    const epochLoss = lossSum / count;
    lossLog.push(epochLoss);
    log(`epoch ${epoch}: lr=${lr} loss=${epochLoss.toFixed(4)} (${samples.length} samples)`);
    if (config.targetLoss !== undefined && epochLoss < config.targetLoss) {
      return { lossLog, lrLog, epochsRun: epoch, aborted: false };
    }
  }
  return { lossLog, lrLog, epochsRun: config.epochs, aborted: false };
}
