import { describe, expect, it } from "vitest";

import {
  conv2d, conv2dBackward, convTranspose2d, convTranspose2dBackward,
  padColumnsCircular, reluBackwardInPlace, reluInPlace,
} from "../src/layers";
import { Pcg32, Tensor } from "../src/tensor";

function randTensor(rng: Pcg32, shape: number[]): Tensor {
  const t = new Tensor(shape);
  for (let i = 0; i < t.data.length; i++) t.data[i] = rng.normal();
  return t;
}

function numericGrad(f: () => number, x: Float64Array, i: number, h = 1e-6): number {
  const old = x[i];
  x[i] = old + h;
  const fp = f();
  x[i] = old - h;
  const fm = f();
  x[i] = old;
  return (fp - fm) / (2 * h);
}

describe("conv2d", () => {
  it("matches a hand computation on a tiny case", () => {
    const input = new Tensor([1, 2, 3], Float64Array.from([1, 2, 3, 4, 5, 6]));
    const weight = new Tensor([1, 1, 2, 2], Float64Array.from([1, 0, 0, 1]));
    const bias = new Tensor([1], Float64Array.from([0.5]));
    const out = conv2d(input, { weight, bias }, { stride: 1, padH: 0, padW: 0 });
    expect(out.shape).toEqual([1, 1, 2]);
    expect(Array.from(out.data)).toEqual([1 + 5 + 0.5, 2 + 6 + 0.5]);
  });

  it("backward matches finite differences", () => {
    const rng = new Pcg32(1);
    const input = randTensor(rng, [2, 5, 6]);
    const weight = randTensor(rng, [3, 2, 3, 3]);
    const bias = randTensor(rng, [3]);
    const spec = { stride: 2, padH: 1, padW: 1 };
    const gradOut = randTensor(rng, conv2d(input, { weight, bias }, spec).shape);
    const loss = () => {
      const o = conv2d(input, { weight, bias }, spec);
      let s = 0;
      for (let i = 0; i < o.data.length; i++) s += o.data[i] * gradOut.data[i];
      return s;
    };
    const g = conv2dBackward(input, { weight, bias }, spec, gradOut);
    for (const [buf, grad] of [[input.data, g.gradInput.data],
                               [weight.data, g.gradWeight.data],
                               [bias.data, g.gradBias.data]] as const) {
      for (let k = 0; k < 12; k++) {
        const i = new Pcg32(k + 10).nextUint32() % buf.length;
        const fd = numericGrad(loss, buf, i);
        expect(Math.abs(fd - grad[i])).toBeLessThan(1e-5 * Math.max(1, Math.abs(fd)));
      }
    }
  });
});

describe("convTranspose2d", () => {
  it("doubles the spatial size with stride 2, pad 1, output pad 1", () => {
    const rng = new Pcg32(2);
    const input = randTensor(rng, [2, 4, 5]);
    const weight = randTensor(rng, [2, 3, 3, 3]);
    const bias = randTensor(rng, [3]);
    const out = convTranspose2d(input, { weight, bias }, 2, 1, 1);
    expect(out.shape).toEqual([3, 8, 10]);
  });

  it("is the adjoint of conv2d with the transposed weight layout", () => {
    // <conv(x), y> == <x, convT(y)> without biases
    const rng = new Pcg32(3);
    const x = randTensor(rng, [2, 6, 6]);
    const w = randTensor(rng, [3, 2, 3, 3]); // conv weight [cOut, cIn, kh, kw]
    const zeroB3 = new Tensor([3]);
    const zeroB2 = new Tensor([2]);
    const y = randTensor(rng, conv2d(x, { weight: w, bias: zeroB3 }, { stride: 2, padH: 1, padW: 1 }).shape);
    const cx = conv2d(x, { weight: w, bias: zeroB3 }, { stride: 2, padH: 1, padW: 1 });
    // transpose layout to [cIn=3, cOut=2, kh, kw] view of the same kernel
    const wt = new Tensor([3, 2, 3, 3]);
    for (let co = 0; co < 3; co++)
      for (let ci = 0; ci < 2; ci++)
        for (let k = 0; k < 9; k++)
          wt.data[(co * 2 + ci) * 9 + k] = w.data[(co * 2 + ci) * 9 + k];
    const cty = convTranspose2d(y, { weight: wt, bias: zeroB2 }, 2, 1, 1);
    let lhs = 0;
    for (let i = 0; i < cx.data.length; i++) lhs += cx.data[i] * y.data[i];
    let rhs = 0;
    const n = Math.min(x.data.length, cty.data.length);
    for (let i = 0; i < n; i++) rhs += x.data[i] * cty.data[i];
    // output padding makes convT output one larger than x; restrict to x extent
    expect(cty.shape[1]).toBeGreaterThanOrEqual(x.shape[1]);
    // compare inner products over the shared region
    let rhs2 = 0;
    for (let c = 0; c < 2; c++)
      for (let yy = 0; yy < 6; yy++)
        for (let xx = 0; xx < 6; xx++)
          rhs2 += x.data[(c * 6 + yy) * 6 + xx] * cty.data[(c * cty.shape[1] + yy) * cty.shape[2] + xx];
    expect(Math.abs(lhs - rhs2)).toBeLessThan(1e-9 * Math.max(1, Math.abs(lhs)));
  });

  it("backward matches finite differences", () => {
    const rng = new Pcg32(4);
    const input = randTensor(rng, [2, 3, 4]);
    const weight = randTensor(rng, [2, 3, 3, 3]);
    const bias = randTensor(rng, [3]);
    const out0 = convTranspose2d(input, { weight, bias }, 2, 1, 1);
    const gradOut = randTensor(rng, out0.shape);
    const loss = () => {
      const o = convTranspose2d(input, { weight, bias }, 2, 1, 1);
      let s = 0;
      for (let i = 0; i < o.data.length; i++) s += o.data[i] * gradOut.data[i];
      return s;
    };
    const g = convTranspose2dBackward(input, { weight, bias }, 2, 1, gradOut);
    for (const [buf, grad] of [[input.data, g.gradInput.data],
                               [weight.data, g.gradWeight.data],
                               [bias.data, g.gradBias.data]] as const) {
      for (let k = 0; k < 10; k++) {
        const i = new Pcg32(k + 99).nextUint32() % buf.length;
        const fd = numericGrad(loss, buf, i);
        expect(Math.abs(fd - grad[i])).toBeLessThan(1e-5 * Math.max(1, Math.abs(fd)));
      }
    }
  });
});

describe("padColumnsCircular", () => {
  it("wraps columns from the opposite side", () => {
    const img = Float64Array.from([1, 2, 3, 4, 5, 6]);
    const out = padColumnsCircular(img, 2, 3, 2);
    expect(out.shape).toEqual([1, 2, 7]);
    expect(Array.from(out.data.slice(0, 7))).toEqual([2, 3, 1, 2, 3, 1, 2]);
    expect(Array.from(out.data.slice(7))).toEqual([5, 6, 4, 5, 6, 4, 5]);
  });
});

describe("relu", () => {
  it("masks gradients where the forward output was clipped", () => {
    const t = new Tensor([1, 1, 4], Float64Array.from([-1, 0.5, -0.2, 2]));
    const out = reluInPlace(t.clone());
    const g = new Tensor([1, 1, 4], Float64Array.from([1, 1, 1, 1]));
    reluBackwardInPlace(g, out);
    expect(Array.from(g.data)).toEqual([0, 1, 0, 1]);
  });
});
