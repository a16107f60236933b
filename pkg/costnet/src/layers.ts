/** Convolutional building blocks with explicit backward passes.
 *
 * Feature maps are CHW Float64Array tensors. Loops keep the innermost index
 * on the contiguous x axis with hoisted weight scalars, which V8 compiles to
 * reasonably tight code.
 */

import { Tensor } from "./tensor";

export interface ConvParams {
  weight: Tensor; // [cOut, cIn, kh, kw]
  bias: Tensor;   // [cOut]
}

export interface ConvSpec {
  stride: number;
  padH: number;
  padW: number;
}

export function convOutSize(inSize: number, k: number, stride: number, pad: number): number {
  return Math.floor((inSize + 2 * pad - k) / stride) + 1;
}

/** 3x3/stride-1/pad-1 fast path: pre-padded rows and a fused 9-tap loop. */
function conv3x3s1(input: Tensor, p: ConvParams): Tensor {
  const [cIn, H, W] = input.shape;
  const cOut = p.weight.shape[0];
  const out = new Tensor([cOut, H, W]);
  const Wp = W + 2;
  const padded = new Float64Array(cIn * (H + 2) * Wp);
  const x = input.data;
  for (let ci = 0; ci < cIn; ci++) {
    const src = ci * H * W;
    const dst = ci * (H + 2) * Wp;
    for (let y = 0; y < H; y++) {
      padded.set(x.subarray(src + y * W, src + (y + 1) * W), dst + (y + 1) * Wp + 1);
    }
  }
  const w = p.weight.data;
  const o = out.data;
  for (let co = 0; co < cOut; co++) {
    const oBase = co * H * W;
    o.fill(p.bias.data[co], oBase, oBase + H * W);
    for (let ci = 0; ci < cIn; ci++) {
      const wB = (co * cIn + ci) * 9;
      const w00 = w[wB], w01 = w[wB + 1], w02 = w[wB + 2];
      const w10 = w[wB + 3], w11 = w[wB + 4], w12 = w[wB + 5];
      const w20 = w[wB + 6], w21 = w[wB + 7], w22 = w[wB + 8];
      const pB = ci * (H + 2) * Wp;
      for (let y = 0; y < H; y++) {
        const r0 = pB + y * Wp;
        const r1 = r0 + Wp;
        const r2 = r1 + Wp;
        const oRow = oBase + y * W;
        for (let xcol = 0; xcol < W; xcol++) {
          o[oRow + xcol] +=
            w00 * padded[r0 + xcol] + w01 * padded[r0 + xcol + 1] + w02 * padded[r0 + xcol + 2]
            + w10 * padded[r1 + xcol] + w11 * padded[r1 + xcol + 1] + w12 * padded[r1 + xcol + 2]
            + w20 * padded[r2 + xcol] + w21 * padded[r2 + xcol + 1] + w22 * padded[r2 + xcol + 2];
        }
      }
    }
  }
  return out;
}

export function conv2d(input: Tensor, p: ConvParams, s: ConvSpec): Tensor {
  const [cIn, H, W] = input.shape;
  const [cOut, cInW, kh, kw] = p.weight.shape;
  if (cIn !== cInW) throw new Error(`conv2d: ${cIn} input channels, weights expect ${cInW}`);
  if (kh === 3 && kw === 3 && s.stride === 1 && s.padH === 1 && s.padW === 1) {
    return conv3x3s1(input, p);
  }
  const oh = convOutSize(H, kh, s.stride, s.padH);
  const ow = convOutSize(W, kw, s.stride, s.padW);
  const out = new Tensor([cOut, oh, ow]);
  const x = input.data;
  const w = p.weight.data;
  const o = out.data;
  for (let co = 0; co < cOut; co++) {
    const b = p.bias.data[co];
    const oBase = co * oh * ow;
    for (let i = oBase; i < oBase + oh * ow; i++) o[i] = b;
    for (let ci = 0; ci < cIn; ci++) {
      const xBase = ci * H * W;
      for (let ky = 0; ky < kh; ky++) {
        for (let kx = 0; kx < kw; kx++) {
          const wv = w[((co * cIn + ci) * kh + ky) * kw + kx];
          if (wv === 0) continue;
          for (let oy = 0; oy < oh; oy++) {
            const iy = oy * s.stride - s.padH + ky;
            if (iy < 0 || iy >= H) continue;
            const oRow = oBase + oy * ow;
            const xRow = xBase + iy * W;
            // valid output x range for this kx
            let ox0 = 0;
            let ox1 = ow - 1;
            const off = kx - s.padW;
            // need 0 <= ox*stride + off < W
            while (ox0 <= ox1 && ox0 * s.stride + off < 0) ox0++;
            while (ox1 >= ox0 && ox1 * s.stride + off >= W) ox1--;
            for (let ox = ox0; ox <= ox1; ox++) {
              o[oRow + ox] += wv * x[xRow + ox * s.stride + off];
            }
          }
        }
      }
    }
  }
  return out;
}

export interface ConvGrads {
  gradInput: Tensor;
  gradWeight: Tensor;
  gradBias: Tensor;
}

function pad1(src: Float64Array, c: number, H: number, W: number): Float64Array {
  const Wp = W + 2;
  const out = new Float64Array(c * (H + 2) * Wp);
  for (let ci = 0; ci < c; ci++) {
    const s0 = ci * H * W;
    const d0 = ci * (H + 2) * Wp;
    for (let y = 0; y < H; y++) {
      out.set(src.subarray(s0 + y * W, s0 + (y + 1) * W), d0 + (y + 1) * Wp + 1);
    }
  }
  return out;
}

function conv3x3s1Backward(input: Tensor, p: ConvParams, gradOut: Tensor): ConvGrads {
  const [cIn, H, W] = input.shape;
  const cOut = p.weight.shape[0];
  const gi = new Tensor([cIn, H, W]);
  const gw = Tensor.zerosLike(p.weight);
  const gb = Tensor.zerosLike(p.bias);
  const Wp = W + 2;
  const pin = pad1(input.data, cIn, H, W);
  const pgo = pad1(gradOut.data, cOut, H, W);
  const go = gradOut.data;
  const w = p.weight.data;
  for (let co = 0; co < cOut; co++) {
    const goBase = co * H * W;
    let bsum = 0;
    for (let i = goBase; i < goBase + H * W; i++) bsum += go[i];
    gb.data[co] = bsum;
    const pgoBase = co * (H + 2) * Wp;
    for (let ci = 0; ci < cIn; ci++) {
      const wB = (co * cIn + ci) * 9;
      // weight gradient: nine shifted dot products in one pass
      let g00 = 0, g01 = 0, g02 = 0, g10 = 0, g11 = 0, g12 = 0, g20 = 0, g21 = 0, g22 = 0;
      const pinBase = ci * (H + 2) * Wp;
      for (let y = 0; y < H; y++) {
        const r0 = pinBase + y * Wp;
        const r1 = r0 + Wp;
        const r2 = r1 + Wp;
        const gRow = goBase + y * W;
        for (let xcol = 0; xcol < W; xcol++) {
          const g = go[gRow + xcol];
          if (g === 0) continue;
          g00 += g * pin[r0 + xcol];
          g01 += g * pin[r0 + xcol + 1];
          g02 += g * pin[r0 + xcol + 2];
          g10 += g * pin[r1 + xcol];
          g11 += g * pin[r1 + xcol + 1];
          g12 += g * pin[r1 + xcol + 2];
          g20 += g * pin[r2 + xcol];
          g21 += g * pin[r2 + xcol + 1];
          g22 += g * pin[r2 + xcol + 2];
        }
      }
      gw.data[wB] += g00; gw.data[wB + 1] += g01; gw.data[wB + 2] += g02;
      gw.data[wB + 3] += g10; gw.data[wB + 4] += g11; gw.data[wB + 5] += g12;
      gw.data[wB + 6] += g20; gw.data[wB + 7] += g21; gw.data[wB + 8] += g22;
      // input gradient: correlation with the rotated kernel
      const w00 = w[wB + 8], w01 = w[wB + 7], w02 = w[wB + 6];
      const w10 = w[wB + 5], w11 = w[wB + 4], w12 = w[wB + 3];
      const w20 = w[wB + 2], w21 = w[wB + 1], w22 = w[wB];
      const giBase = ci * H * W;
      for (let y = 0; y < H; y++) {
        const r0 = pgoBase + y * Wp;
        const r1 = r0 + Wp;
        const r2 = r1 + Wp;
        const giRow = giBase + y * W;
        for (let xcol = 0; xcol < W; xcol++) {
          gi.data[giRow + xcol] +=
            w00 * pgo[r0 + xcol] + w01 * pgo[r0 + xcol + 1] + w02 * pgo[r0 + xcol + 2]
            + w10 * pgo[r1 + xcol] + w11 * pgo[r1 + xcol + 1] + w12 * pgo[r1 + xcol + 2]
            + w20 * pgo[r2 + xcol] + w21 * pgo[r2 + xcol + 1] + w22 * pgo[r2 + xcol + 2];
        }
      }
    }
  }
  return { gradInput: gi, gradWeight: gw, gradBias: gb };
}

export function conv2dBackward(input: Tensor, p: ConvParams, s: ConvSpec,
                               gradOut: Tensor): ConvGrads {
  const [cIn, H, W] = input.shape;
  const [cOut, , kh, kw] = p.weight.shape;
  const [, oh, ow] = gradOut.shape;
  if (kh === 3 && kw === 3 && s.stride === 1 && s.padH === 1 && s.padW === 1
      && oh === H && ow === W) {
    return conv3x3s1Backward(input, p, gradOut);
  }
  const gi = new Tensor([cIn, H, W]);
  const gw = Tensor.zerosLike(p.weight);
  const gb = Tensor.zerosLike(p.bias);
  const x = input.data;
  const w = p.weight.data;
  const go = gradOut.data;
  for (let co = 0; co < cOut; co++) {
    const oBase = co * oh * ow;
    let bsum = 0;
    for (let i = oBase; i < oBase + oh * ow; i++) bsum += go[i];
    gb.data[co] = bsum;
    for (let ci = 0; ci < cIn; ci++) {
      const xBase = ci * H * W;
      for (let ky = 0; ky < kh; ky++) {
        for (let kx = 0; kx < kw; kx++) {
          const wIdx = ((co * cIn + ci) * kh + ky) * kw + kx;
          const wv = w[wIdx];
          let wsum = 0;
          const off = kx - s.padW;
          for (let oy = 0; oy < oh; oy++) {
            const iy = oy * s.stride - s.padH + ky;
            if (iy < 0 || iy >= H) continue;
            const oRow = oBase + oy * ow;
            const xRow = xBase + iy * W;
            let ox0 = 0;
            let ox1 = ow - 1;
            while (ox0 <= ox1 && ox0 * s.stride + off < 0) ox0++;
            while (ox1 >= ox0 && ox1 * s.stride + off >= W) ox1--;
            for (let ox = ox0; ox <= ox1; ox++) {
              const g = go[oRow + ox];
              const xi = xRow + ox * s.stride + off;
              wsum += g * x[xi];
              gi.data[xi] += wv * g;
            }
          }
          gw.data[wIdx] += wsum;
        }
      }
    }
  }
  return { gradInput: gi, gradWeight: gw, gradBias: gb };
}

/** Transposed convolution; weight layout [cIn, cOut, kh, kw].
 * out = (in - 1) * stride - 2 * pad + k + outPad.
 */
export function convTranspose2d(input: Tensor, p: ConvParams, stride: number,
                                pad: number, outPad: number): Tensor {
  const [cIn, H, W] = input.shape;
  const [cInW, cOut, kh, kw] = p.weight.shape;
  if (cIn !== cInW) throw new Error("convTranspose2d: channel mismatch");
  const oh = (H - 1) * stride - 2 * pad + kh + outPad;
  const ow = (W - 1) * stride - 2 * pad + kw + outPad;
  const out = new Tensor([cOut, oh, ow]);
  const o = out.data;
  for (let co = 0; co < cOut; co++) {
    const b = p.bias.data[co];
    const oBase = co * oh * ow;
    for (let i = oBase; i < oBase + oh * ow; i++) o[i] = b;
  }
  const x = input.data;
  const w = p.weight.data;
  for (let ci = 0; ci < cIn; ci++) {
    const xBase = ci * H * W;
    for (let co = 0; co < cOut; co++) {
      const oBase = co * oh * ow;
      for (let ky = 0; ky < kh; ky++) {
        for (let kx = 0; kx < kw; kx++) {
          const wv = w[((ci * cOut + co) * kh + ky) * kw + kx];
          if (wv === 0) continue;
          for (let y = 0; y < H; y++) {
            const oy = y * stride - pad + ky;
            if (oy < 0 || oy >= oh) continue;
            const xRow = xBase + y * W;
            const oRow = oBase + oy * ow;
            for (let xcol = 0; xcol < W; xcol++) {
              const ox = xcol * stride - pad + kx;
              if (ox < 0 || ox >= ow) continue;
              o[oRow + ox] += wv * x[xRow + xcol];
            }
          }
        }
      }
    }
  }
  return out;
}

export function convTranspose2dBackward(input: Tensor, p: ConvParams, stride: number,
                                        pad: number, gradOut: Tensor): ConvGrads {
  const [cIn, H, W] = input.shape;
  const [, cOut, kh, kw] = p.weight.shape;
  const [, oh, ow] = gradOut.shape;
  const gi = new Tensor([cIn, H, W]);
  const gw = Tensor.zerosLike(p.weight);
  const gb = Tensor.zerosLike(p.bias);
  const go = gradOut.data;
  const x = input.data;
  const w = p.weight.data;
  for (let co = 0; co < cOut; co++) {
    const oBase = co * oh * ow;
    let bsum = 0;
    for (let i = oBase; i < oBase + oh * ow; i++) bsum += go[i];
    gb.data[co] = bsum;
  }
  for (let ci = 0; ci < cIn; ci++) {
    const xBase = ci * H * W;
    for (let co = 0; co < cOut; co++) {
      const oBase = co * oh * ow;
      for (let ky = 0; ky < kh; ky++) {
        for (let kx = 0; kx < kw; kx++) {
          const wIdx = ((ci * cOut + co) * kh + ky) * kw + kx;
          const wv = w[wIdx];
          let wsum = 0;
          for (let y = 0; y < H; y++) {
            const oy = y * stride - pad + ky;
            if (oy < 0 || oy >= oh) continue;
            const xRow = xBase + y * W;
            const oRow = oBase + oy * ow;
            for (let xcol = 0; xcol < W; xcol++) {
              const ox = xcol * stride - pad + kx;
              if (ox < 0 || ox >= ow) continue;
              const g = go[oRow + ox];
              wsum += g * x[xRow + xcol];
              gi.data[xRow + xcol] += wv * g;
            }
          }
          gw.data[wIdx] += wsum;
        }
      }
    }
  }
  return { gradInput: gi, gradWeight: gw, gradBias: gb };
}

export function reluInPlace(t: Tensor): Tensor {
  const d = t.data;
  for (let i = 0; i < d.length; i++) if (d[i] < 0) d[i] = 0;
  return t;
}

/** Backward through relu given the forward OUTPUT (post-activation). */
export function reluBackwardInPlace(grad: Tensor, output: Tensor): Tensor {
  const g = grad.data;
  const o = output.data;
  for (let i = 0; i < g.length; i++) if (o[i] <= 0) g[i] = 0;
  return grad;
}

export function addInPlace(dst: Tensor, src: Tensor): Tensor {
  const d = dst.data;
  const s = src.data;
  for (let i = 0; i < d.length; i++) d[i] += s[i];
  return dst;
}

export function concatChannels(a: Tensor, b: Tensor): Tensor {
  const [ca, H, W] = a.shape;
  const [cb] = b.shape;
  const out = new Tensor([ca + cb, H, W]);
  out.data.set(a.data, 0);
  out.data.set(b.data, ca * H * W);
  return out;
}

/** Circular column padding of a single-channel H x W image. */
export function padColumnsCircular(img: Float64Array, H: number, W: number,
                                   pad: number): Tensor {
  const out = new Tensor([1, H, W + 2 * pad]);
  const o = out.data;
  const ow = W + 2 * pad;
  for (let y = 0; y < H; y++) {
    const src = y * W;
    const dst = y * ow;
    for (let p = 0; p < pad; p++) o[dst + p] = img[src + W - pad + p];
    for (let x = 0; x < W; x++) o[dst + pad + x] = img[src + x];
    for (let p = 0; p < pad; p++) o[dst + pad + W + p] = img[src + p];
  }
  return out;
}

export function sigmoid(v: number): number {
  return 1 / (1 + Math.exp(-v));
}
