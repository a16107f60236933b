/** Minimal planar tensors: CHW layout in a flat Float64Array. */

export class Tensor {
  readonly data: Float64Array;
  readonly shape: number[];

  constructor(shape: number[], data?: Float64Array) {
    const size = shape.reduce((a, b) => a * b, 1);
    if (data !== undefined && data.length !== size) {
      throw new Error(`buffer length ${data.length} does not match shape [${shape}]`);
    }
    this.shape = shape.slice();
    this.data = data ?? new Float64Array(size);
  }

  get size(): number {
    return this.data.length;
  }

  static zerosLike(t: Tensor): Tensor {
    return new Tensor(t.shape);
  }

  clone(): Tensor {
    return new Tensor(this.shape, this.data.slice());
  }

  fill(v: number): this {
    this.data.fill(v);
    return this;
  }
}

export interface Rng {
  next(): number; // uniform in [0, 1)
}

/** Deterministic 32-bit PCG-style generator, so runs reproduce exactly. */
export class Pcg32 implements Rng {
  private state: bigint;
  private inc: bigint;

  constructor(seed: number, seq = 54n) {
    this.state = 0n;
    this.inc = (BigInt(seq) << 1n) | 1n;
    this.nextUint32();
    this.state += BigInt(seed >>> 0) + (BigInt(Math.floor(seed / 2 ** 32)) << 32n);
    this.nextUint32();
  }

  nextUint32(): number {
    const old = this.state;
    this.state = (old * 6364136223846793005n + this.inc) & 0xffffffffffffffffn;
    const xorshifted = Number(((old >> 18n) ^ old) >> 27n & 0xffffffffn) >>> 0;
    const rot = Number(old >> 59n) & 31;
    return ((xorshifted >>> rot) | (xorshifted << ((-rot) & 31))) >>> 0;
  }

  next(): number {
    return this.nextUint32() / 2 ** 32;
  }

  /** Approximately standard normal (sum of 12 uniforms). */
  normal(): number {
    let s = 0;
    for (let i = 0; i < 12; i++) s += this.next();
    return s - 6;
  }

  shuffle<T>(arr: T[]): T[] {
    for (let i = arr.length - 1; i > 0; i--) {
      const j = this.nextUint32() % (i + 1);
      [arr[i], arr[j]] = [arr[j], arr[i]];
    }
    return arr;
  }
}
