/** Binary interchange with the depth pipeline: OSPH spherical images in, OCSV
 * cost volumes out, plus the checkpoint archive (JSON manifest + raw f32).
 */

import * as fs from "fs";
import * as path from "path";

import { ModelConfig, CostNetwork } from "./model";
import { Tensor } from "./tensor";

const FORMAT_VERSION = 1;

export interface SphericalImage {
  width: number;
  height: number;
  cameraId: number;
  sphereIndex: number;
  data: Float64Array;
  mask: Uint8Array;
}

export function readOsph(file: string): SphericalImage {
  const blob = fs.readFileSync(file);
  if (blob.length < 24) throw new Error(`${file}: truncated header`);
  if (blob.toString("ascii", 0, 4) !== "OSPH") {
    throw new Error(`${file}: bad magic, expected OSPH`);
  }
  const version = blob.readUInt32LE(4);
  if (version !== FORMAT_VERSION) throw new Error(`${file}: unsupported version ${version}`);
  const w = blob.readUInt32LE(8);
  const h = blob.readUInt32LE(12);
  const cameraId = blob.readUInt32LE(16);
  const sphereIndex = blob.readUInt32LE(20);
  const count = w * h;
  const need = 24 + 4 * count + count;
  if (blob.length !== need) {
    throw new Error(`${file}: expected ${need} bytes, got ${blob.length}`);
  }
  const payload = new Float32Array(blob.buffer, blob.byteOffset + 24, count);
  const data = new Float64Array(count);
  for (let i = 0; i < count; i++) data[i] = payload[i];
  const mask = new Uint8Array(blob.buffer, blob.byteOffset + 24 + 4 * count, count).slice();
  return { width: w, height: h, cameraId, sphereIndex, data, mask };
}

export function writeOcsv(file: string, data: Float32Array, mask: Uint8Array,
                          w: number, h: number, n: number): void {
  const count = w * h * n;
  if (data.length !== count || mask.length !== count) {
    throw new Error("payload size does not match dimensions");
  }
  const buf = Buffer.alloc(20 + 4 * count + count);
  buf.write("OCSV", 0, "ascii");
  buf.writeUInt32LE(FORMAT_VERSION, 4);
  buf.writeUInt32LE(w, 8);
  buf.writeUInt32LE(h, 12);
  buf.writeUInt32LE(n, 16);
  Buffer.from(new Uint8Array(data.buffer, data.byteOffset, 4 * count)).copy(buf, 20);
  Buffer.from(mask).copy(buf, 20 + 4 * count);
  fs.writeFileSync(file, buf);
}

export function readOcsv(file: string): { data: Float32Array; mask: Uint8Array;
                                          w: number; h: number; n: number } {
  const blob = fs.readFileSync(file);
  if (blob.toString("ascii", 0, 4) !== "OCSV") throw new Error(`${file}: bad magic`);
  const version = blob.readUInt32LE(4);
  if (version !== FORMAT_VERSION) throw new Error(`${file}: unsupported version ${version}`);
  const w = blob.readUInt32LE(8);
  const h = blob.readUInt32LE(12);
  const n = blob.readUInt32LE(16);
  const count = w * h * n;
  const need = 20 + 5 * count;
  if (blob.length !== need) throw new Error(`${file}: expected ${need} bytes, got ${blob.length}`);
  const data = new Float32Array(count);
  for (let i = 0; i < count; i++) data[i] = blob.readFloatLE(20 + 4 * i);
  const mask = new Uint8Array(blob.buffer, blob.byteOffset + 20 + 4 * count, count).slice();
  return { data, mask, w, h, n };
}

export function readDepthIndices(file: string): { index: Int32Array; mask: Uint8Array;
                                                  w: number; h: number } {
  const { data, mask, w, h, n } = readOcsv(file);
  if (n !== 1) throw new Error(`${file}: depth file must have a single slice`);
  const index = new Int32Array(w * h);
  for (let i = 0; i < index.length; i++) index[i] = Math.round(data[i]);
  return { index, mask, w, h };
}

export interface GridSidecar {
  width: number;
  height: number;
  nSpheres: number;
  dMin: number;
}

export function readGridSidecar(file: string): GridSidecar {
  const doc = JSON.parse(fs.readFileSync(file, "utf8"));
  const grid = doc.grid;
  if (!grid) throw new Error(`${file}: no grid field`);
  return {
    width: grid.width, height: grid.height,
    nSpheres: grid.n_spheres, dMin: grid.d_min,
  };
}

// ---------------------------------------------------------------------------
// checkpoints: <name>.json manifest + <name>.bin little-endian float32

export interface CheckpointMeta {
  grid?: GridSidecar;
  normalizedInputs?: boolean;
  epoch?: number;
  lossLog?: number[];
}

export function saveCheckpoint(base: string, model: CostNetwork, meta: CheckpointMeta): void {
  const tensors: { name: string; shape: number[]; offset: number; length: number }[] = [];
  let total = 0;
  const entries: { name: string; t: Tensor }[] = [];
  for (const [name, p] of model.params) {
    entries.push({ name: `${name}.weight`, t: p.weight });
    entries.push({ name: `${name}.bias`, t: p.bias });
  }
  for (const e of entries) {
    tensors.push({ name: e.name, shape: e.t.shape.slice(), offset: total, length: e.t.size });
    total += e.t.size;
  }
  const payload = new Float32Array(total);
  for (let i = 0; i < entries.length; i++) {
    payload.set(Float32Array.from(entries[i].t.data), tensors[i].offset);
  }
  const manifest = {
    format: "costnet-checkpoint",
    version: FORMAT_VERSION,
    config: model.config,
    meta,
    tensors,
  };
  fs.mkdirSync(path.dirname(base), { recursive: true });
  fs.writeFileSync(`${base}.json`, JSON.stringify(manifest, null, 2) + "\n");
  fs.writeFileSync(`${base}.bin`,
                   Buffer.from(new Uint8Array(payload.buffer, 0, 4 * total)));
}

export function loadCheckpoint(base: string): { model: CostNetwork; meta: CheckpointMeta } {
  const manifest = JSON.parse(fs.readFileSync(`${base}.json`, "utf8"));
  if (manifest.format !== "costnet-checkpoint") {
    throw new Error(`${base}.json is not a checkpoint manifest`);
  }
  if (manifest.version !== FORMAT_VERSION) {
    throw new Error(`unsupported checkpoint version ${manifest.version}`);
  }
  const blob = fs.readFileSync(`${base}.bin`);
  const payload = new Float32Array(blob.buffer, blob.byteOffset, blob.length / 4);
  const model = new CostNetwork(manifest.config as ModelConfig);
  for (const entry of manifest.tensors) {
    const [param, field] = String(entry.name).split(".");
    const p = model.params.get(param);
    if (!p) throw new Error(`checkpoint carries unknown parameter ${entry.name}`);
    const target = field === "weight" ? p.weight : p.bias;
    if (target.size !== entry.length) {
      throw new Error(`${entry.name}: size ${entry.length} does not match model (${target.size})`);
    }
    for (let i = 0; i < entry.length; i++) {
      target.data[i] = payload[entry.offset + i];
    }
  }
  return { model, meta: manifest.meta ?? {} };
}

/** OSPH files from the sweep stage, grouped into frames by directory. */
export function loadSweepDir(dir: string): Map<number, Map<number, SphericalImage>> {
  const files = fs.readdirSync(dir).filter((f) => f.endsWith(".osph")).sort();
  if (files.length === 0) throw new Error(`no .osph files in ${dir}`);
  const byCamera = new Map<number, Map<number, SphericalImage>>();
  for (const f of files) {
    const sph = readOsph(path.join(dir, f));
    if (!byCamera.has(sph.cameraId)) byCamera.set(sph.cameraId, new Map());
    byCamera.get(sph.cameraId)!.set(sph.sphereIndex, sph);
  }
  return byCamera;
}
