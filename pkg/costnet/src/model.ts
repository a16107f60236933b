/** Siamese residual cost network.
 *
 * Two grayscale spherical images are circularly padded by two columns, pushed
 * through shared residual branches at half resolution, concatenated, upsampled
 * with a transposed convolution and mapped per-pixel to a matching cost in
 * (0, 1) by 1x1 layers and a sigmoid. Low output means "same surface".
 */

import {
  ConvParams, ConvSpec, addInPlace, concatChannels, conv2d, conv2dBackward,
  convTranspose2d, convTranspose2dBackward, padColumnsCircular, reluBackwardInPlace,
  reluInPlace, sigmoid,
} from "./layers";
import { Pcg32, Tensor } from "./tensor";

export interface ModelConfig {
  branchChannels: number; // feature width of the shared branches
  headChannels: number;   // conv19 / deconv / conv20 width
  fcChannels: number;     // 1x1 stack width
}

export const TABLE_CONFIG: ModelConfig = { branchChannels: 32, headChannels: 128, fcChannels: 256 };
export const DESK_CONFIG: ModelConfig = { branchChannels: 16, headChannels: 64, fcChannels: 128 };

export const INPUT_COLUMN_PAD = 2;
const RES_BLOCKS = 8; // conv2..conv17 in pairs

const S1: ConvSpec = { stride: 1, padH: 1, padW: 1 };

export type ParamMap = Map<string, ConvParams>;

function heInit(rng: Pcg32, shape: number[], fanIn: number): Tensor {
  const t = new Tensor(shape);
  const std = Math.sqrt(2 / fanIn);
  for (let i = 0; i < t.data.length; i++) t.data[i] = rng.normal() * std;
  return t;
}

export class CostNetwork {
  readonly config: ModelConfig;
  readonly params: ParamMap = new Map();

  /** He-initialized weights; by default the second conv of each residual
   * block starts at zero so every block begins as the identity, which keeps
   * the deep branch trainable with plain SGD. */
  constructor(config: ModelConfig = TABLE_CONFIG, seed = 7, identityResiduals = true) {
    this.config = config;
    const rng = new Pcg32(seed);
    const C = config.branchChannels;
    const HC = config.headChannels;
    const FC = config.fcChannels;
    const add = (name: string, shape: number[], fanIn: number) => {
      this.params.set(name, {
        weight: heInit(rng, shape, fanIn),
        bias: new Tensor([shape[name.startsWith("deconv") ? 1 : 0]]),
      });
    };
    add("conv1", [C, 1, 5, 5], 25);
    for (let i = 2; i <= 18; i++) add(`conv${i}`, [C, C, 3, 3], 9 * C);
    add("conv19", [HC, 2 * C, 3, 3], 9 * 2 * C);
    add("deconv1", [HC, HC, 3, 3], 9 * HC); // [cIn, cOut, kh, kw]
    add("conv20", [HC, HC, 3, 3], 9 * HC);
    add("fc1", [FC, HC, 1, 1], HC);
    for (let i = 2; i <= 4; i++) add(`fc${i}`, [FC, FC, 1, 1], FC);
    add("fc5", [1, FC, 1, 1], FC);
    if (identityResiduals) {
      for (let i = 3; i <= 17; i += 2) this.p(`conv${i}`).weight.fill(0);
    }
  }

  p(name: string): ConvParams {
    const v = this.params.get(name);
    if (!v) throw new Error(`unknown parameter ${name}`);
    return v;
  }

  /** Shared feature branch; returns all post-activation intermediates. */
  branchForward(img: Float64Array, H: number, W: number): { feats: Tensor; cache: Tensor[] } {
    if (W % 2 !== 0 || H % 2 !== 0) {
      throw new Error(`image size ${W}x${H} must be even for the stride-2 branch`);
    }
    const cache: Tensor[] = [];
    const padded = padColumnsCircular(img, H, W, INPUT_COLUMN_PAD);
    cache.push(padded);
    let x = reluInPlace(conv2d(padded, this.p("conv1"), { stride: 2, padH: 2, padW: 0 }));
    cache.push(x);
    for (let b = 0; b < RES_BLOCKS; b++) {
      const c2 = `conv${2 + 2 * b}`;
      const c3 = `conv${3 + 2 * b}`;
      const t = reluInPlace(conv2d(x, this.p(c2), S1));
      cache.push(t);
      const u = conv2d(t, this.p(c3), S1);
      addInPlace(u, x);
      reluInPlace(u);
      cache.push(u);
      x = u;
    }
    const out = reluInPlace(conv2d(x, this.p("conv18"), S1));
    cache.push(out);
    return { feats: out, cache };
  }

  branchBackward(gradFeats: Tensor, cache: Tensor[], grads: ParamMap): void {
    const n = cache.length;
    let g = gradFeats;
    reluBackwardInPlace(g, cache[n - 1]);
    g = this.accumulate("conv18", cache[n - 2], S1, g, grads);
    for (let b = RES_BLOCKS - 1; b >= 0; b--) {
      const c2 = `conv${2 + 2 * b}`;
      const c3 = `conv${3 + 2 * b}`;
      const blockOut = cache[2 + 2 * b + 1];
      const blockMid = cache[2 + 2 * b];
      const blockIn = cache[2 + 2 * b - 1];
      reluBackwardInPlace(g, blockOut);
      const gSkip = g.clone();
      const gMid = this.accumulate(c3, blockMid, S1, g, grads);
      reluBackwardInPlace(gMid, blockMid);
      const gIn = this.accumulate(c2, blockIn, S1, gMid, grads);
      addInPlace(gIn, gSkip);
      g = gIn;
    }
    reluBackwardInPlace(g, cache[1]);
    this.accumulate("conv1", cache[0], { stride: 2, padH: 2, padW: 0 }, g, grads);
  }

  private accumulate(name: string, input: Tensor, spec: ConvSpec, gradOut: Tensor,
                     grads: ParamMap): Tensor {
    const { gradInput, gradWeight, gradBias } = conv2dBackward(input, this.p(name), spec, gradOut);
    const slot = grads.get(name)!;
    addInPlace(slot.weight, gradWeight);
    addInPlace(slot.bias, gradBias);
    return gradInput;
  }

  /** Full forward pass: cost map plus the shapes seen along the way. */
  forward(imgA: Float64Array, imgB: Float64Array, H: number, W: number):
      { cost: Float64Array; shapes: Record<string, number[]> } {
    const a = this.branchForward(imgA, H, W);
    const b = this.branchForward(imgB, H, W);
    const cat = concatChannels(a.feats, b.feats);
    const g = reluInPlace(conv2d(cat, this.p("conv19"), S1));
    const d = reluInPlace(convTranspose2d(g, this.p("deconv1"), 2, 1, 1));
    const c20 = reluInPlace(conv2d(d, this.p("conv20"), S1));
    let f = c20;
    for (let i = 1; i <= 4; i++) {
      f = reluInPlace(conv2d(f, this.p(`fc${i}`), { stride: 1, padH: 0, padW: 0 }));
    }
    const logits = conv2d(f, this.p("fc5"), { stride: 1, padH: 0, padW: 0 });
    const cost = new Float64Array(logits.data.length);
    for (let i = 0; i < cost.length; i++) cost[i] = sigmoid(logits.data[i]);
    return {
      cost,
      shapes: {
        paddedInput: [H, W + 2 * INPUT_COLUMN_PAD],
        branch: a.feats.shape.slice(),
        concat: cat.shape.slice(),
        head: d.shape.slice(),
        output: logits.shape.slice(),
      },
    };
  }

  newGradMap(): ParamMap {
    const grads: ParamMap = new Map();
    for (const [name, p] of this.params) {
      grads.set(name, { weight: Tensor.zerosLike(p.weight), bias: Tensor.zerosLike(p.bias) });
    }
    return grads;
  }
}

// ---------------------------------------------------------------------------
// training step with a sparse head: the branch features and conv19 are dense,
// but the upsampling head and the 1x1 stack only touch the labeled pixels

export interface LabeledPixel {
  y: number;
  x: number;
  target: number; // 0 positive (match), 1 negative
}

export interface StepResult {
  loss: number;
  count: number;
}

const EPS = 1e-7;

export function lossAndGradAt(pred: number, target: number): { loss: number; grad: number } {
  const y = Math.min(1 - EPS, Math.max(EPS, pred));
  const loss = -(target * Math.log(y) + (1 - target) * Math.log(1 - y));
  // d(loss)/d(logit) through the sigmoid
  const grad = y - target;
  return { loss, grad };
}

/** Mean binary cross-entropy over a labeled set; predictions are clamped. */
export function bceLoss(preds: ArrayLike<number>, targets: ArrayLike<number>): number {
  if (preds.length !== targets.length) throw new Error("length mismatch");
  if (preds.length === 0) throw new Error("empty labeled set");
  let sum = 0;
  for (let i = 0; i < preds.length; i++) {
    sum += lossAndGradAt(preds[i], targets[i]).loss;
  }
  return sum / preds.length;
}

export function trainingStep(model: CostNetwork, imgA: Float64Array, imgB: Float64Array,
                             H: number, W: number, labels: LabeledPixel[],
                             grads: ParamMap): StepResult {
  const cfg = model.config;
  const HC = cfg.headChannels;
  const FC = cfg.fcChannels;
  const a = model.branchForward(imgA, H, W);
  const b = model.branchForward(imgB, H, W);
  const cat = concatChannels(a.feats, b.feats);
  const G = reluInPlace(conv2d(cat, model.p("conv19"), S1));
  const [, gh, gw] = G.shape;

  // positions of the deconv output needed by the sampled conv20 windows
  const posIndex = new Int32Array(H * W).fill(-1);
  const posList: number[] = [];
  for (const s of labels) {
    for (let dy = -1; dy <= 1; dy++) {
      for (let dx = -1; dx <= 1; dx++) {
        const y = s.y + dy;
        const x = s.x + dx;
        if (y < 0 || y >= H || x < 0 || x >= W) continue;
        const key = y * W + x;
        if (posIndex[key] < 0) {
          posIndex[key] = posList.length;
          posList.push(key);
        }
      }
    }
  }
  const nPos = posList.length;

  // sparse deconv gather (stride 2, pad 1, kernel 3), then relu
  const dw = model.p("deconv1").weight.data;
  const db = model.p("deconv1").bias.data;
  const D = new Float64Array(nPos * HC);
  for (let pi = 0; pi < nPos; pi++) {
    const key = posList[pi];
    const y = Math.floor(key / W);
    const x = key % W;
    for (let co = 0; co < HC; co++) D[pi * HC + co] = db[co];
    for (let ky = 0; ky < 3; ky++) {
      const ny = y + 1 - ky;
      if (ny < 0 || ny % 2 !== 0) continue;
      const sy = ny / 2;
      if (sy >= gh) continue;
      for (let kx = 0; kx < 3; kx++) {
        const nx = x + 1 - kx;
        if (nx < 0 || nx % 2 !== 0) continue;
        const sx = nx / 2;
        if (sx >= gw) continue;
        for (let ci = 0; ci < HC; ci++) {
          const gv = G.data[(ci * gh + sy) * gw + sx];
          if (gv === 0) continue;
          const wBase = ((ci * HC) * 3 + ky) * 3 + kx;
          for (let co = 0; co < HC; co++) {
            D[pi * HC + co] += dw[wBase + co * 9] * gv;
          }
        }
      }
    }
  }
  for (let i = 0; i < D.length; i++) if (D[i] < 0) D[i] = 0;

  // sparse conv20 + 1x1 stack per sample
  const w20 = model.p("conv20").weight.data;
  const b20 = model.p("conv20").bias.data;
  const nS = labels.length;
  const c20 = new Float64Array(nS * HC);
  for (let si = 0; si < nS; si++) {
    const s = labels[si];
    for (let co = 0; co < HC; co++) c20[si * HC + co] = b20[co];
    for (let ky = 0; ky < 3; ky++) {
      const y = s.y - 1 + ky;
      if (y < 0 || y >= H) continue;
      for (let kx = 0; kx < 3; kx++) {
        const x = s.x - 1 + kx;
        if (x < 0 || x >= W) continue;
        const pi = posIndex[y * W + x];
        for (let ci = 0; ci < HC; ci++) {
          const dv = D[pi * HC + ci];
          if (dv === 0) continue;
          const wBase = (ci * 3 + ky) * 3 + kx;
          for (let co = 0; co < HC; co++) {
            c20[si * HC + co] += w20[co * HC * 9 + wBase] * dv;
          }
        }
      }
    }
    for (let co = 0; co < HC; co++) if (c20[si * HC + co] < 0) c20[si * HC + co] = 0;
  }

  const fcNames = ["fc1", "fc2", "fc3", "fc4"];
  const acts: Float64Array[] = [c20];
  let cur = c20;
  let curC = HC;
  for (const name of fcNames) {
    const wp = model.p(name);
    const w = wp.weight.data;
    const bias = wp.bias.data;
    const next = new Float64Array(nS * FC);
    for (let si = 0; si < nS; si++) {
      for (let co = 0; co < FC; co++) {
        let acc = bias[co];
        const wRow = co * curC;
        const xRow = si * curC;
        for (let ci = 0; ci < curC; ci++) acc += w[wRow + ci] * cur[xRow + ci];
        next[si * FC + co] = acc > 0 ? acc : 0;
      }
    }
    acts.push(next);
    cur = next;
    curC = FC;
  }
  const w5 = model.p("fc5").weight.data;
  const b5 = model.p("fc5").bias.data[0];
  let lossSum = 0;
  const gLogit = new Float64Array(nS);
  for (let si = 0; si < nS; si++) {
    let acc = b5;
    const xRow = si * FC;
    for (let ci = 0; ci < FC; ci++) acc += w5[ci] * cur[xRow + ci];
    const pred = sigmoid(acc);
    const { loss, grad } = lossAndGradAt(pred, labels[si].target);
    lossSum += loss;
    gLogit[si] = grad / nS;
  }

  // ---- backward ----
  const g5 = grads.get("fc5")!;
  let gCur = new Float64Array(nS * FC);
  for (let si = 0; si < nS; si++) {
    const g = gLogit[si];
    const xRow = si * FC;
    g5.bias.data[0] += g;
    for (let ci = 0; ci < FC; ci++) {
      g5.weight.data[ci] += g * cur[xRow + ci];
      gCur[xRow + ci] = g * w5[ci];
    }
  }
  for (let li = fcNames.length - 1; li >= 0; li--) {
    const name = fcNames[li];
    const inAct = acts[li];
    const outAct = acts[li + 1];
    const inC = li === 0 ? HC : FC;
    const wp = model.p(name);
    const w = wp.weight.data;
    const slot = grads.get(name)!;
    const gIn = new Float64Array(nS * inC);
    for (let si = 0; si < nS; si++) {
      const oRow = si * FC;
      const iRow = si * inC;
      for (let co = 0; co < FC; co++) {
        if (outAct[oRow + co] <= 0) continue;
        const g = gCur[oRow + co];
        if (g === 0) continue;
        slot.bias.data[co] += g;
        const wRow = co * inC;
        for (let ci = 0; ci < inC; ci++) {
          slot.weight.data[wRow + ci] += g * inAct[iRow + ci];
          gIn[iRow + ci] += g * w[wRow + ci];
        }
      }
    }
    gCur = gIn;
  }

  // conv20 backward (sparse)
  const gD = new Float64Array(nPos * HC);
  const slot20 = grads.get("conv20")!;
  for (let si = 0; si < nS; si++) {
    const s = labels[si];
    for (let co = 0; co < HC; co++) {
      if (c20[si * HC + co] <= 0) continue;
      const g = gCur[si * HC + co];
      if (g === 0) continue;
      slot20.bias.data[co] += g;
      for (let ky = 0; ky < 3; ky++) {
        const y = s.y - 1 + ky;
        if (y < 0 || y >= H) continue;
        for (let kx = 0; kx < 3; kx++) {
          const x = s.x - 1 + kx;
          if (x < 0 || x >= W) continue;
          const pi = posIndex[y * W + x];
          const wBase = (ky * 3 + kx);
          for (let ci = 0; ci < HC; ci++) {
            const dv = D[pi * HC + ci];
            slot20.weight.data[(co * HC + ci) * 9 + wBase] += g * dv;
            gD[pi * HC + ci] += g * w20[(co * HC + ci) * 9 + wBase];
          }
        }
      }
    }
  }

  // deconv backward from the sparse positions into a dense G gradient
  for (let i = 0; i < gD.length; i++) if (D[i] <= 0) gD[i] = 0;
  const gG = new Tensor([G.shape[0], gh, gw]);
  const slotDec = grads.get("deconv1")!;
  for (let pi = 0; pi < nPos; pi++) {
    for (let co = 0; co < HC; co++) {
      slotDec.bias.data[co] += gD[pi * HC + co];
    }
  }
  for (let pi = 0; pi < nPos; pi++) {
    const key = posList[pi];
    const y = Math.floor(key / W);
    const x = key % W;
    for (let ky = 0; ky < 3; ky++) {
      const ny = y + 1 - ky;
      if (ny < 0 || ny % 2 !== 0) continue;
      const sy = ny / 2;
      if (sy >= gh) continue;
      for (let kx = 0; kx < 3; kx++) {
        const nx = x + 1 - kx;
        if (nx < 0 || nx % 2 !== 0) continue;
        const sx = nx / 2;
        if (sx >= gw) continue;
        for (let co = 0; co < HC; co++) {
          const g = gD[pi * HC + co];
          if (g === 0) continue;
          for (let ci = 0; ci < HC; ci++) {
            const gv = G.data[(ci * gh + sy) * gw + sx];
            const wIdx = ((ci * HC + co) * 3 + ky) * 3 + kx;
            slotDec.weight.data[wIdx] += g * gv;
            gG.data[(ci * gh + sy) * gw + sx] += g * dw[wIdx];
          }
        }
      }
    }
  }

  reluBackwardInPlace(gG, G);
  const { gradInput: gCat, gradWeight: gw19, gradBias: gb19 } =
    conv2dBackward(cat, model.p("conv19"), S1, gG);
  const slot19 = grads.get("conv19")!;
  addInPlace(slot19.weight, gw19);
  addInPlace(slot19.bias, gb19);

  const C = cfg.branchChannels;
  const planeSize = a.feats.shape[1] * a.feats.shape[2];
  const gA = new Tensor([C, a.feats.shape[1], a.feats.shape[2]],
                        gCat.data.slice(0, C * planeSize));
  const gB = new Tensor([C, a.feats.shape[1], a.feats.shape[2]],
                        gCat.data.slice(C * planeSize));
  model.branchBackward(gA, a.cache, grads);
  model.branchBackward(gB, b.cache, grads);

  return { loss: lossSum / nS, count: nS };
}
