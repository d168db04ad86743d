/** Shared fixture generation: phantom map stack, prior config, CLI access. */

import { spawnSync } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import path from "node:path";

import { writeNifti } from "../src/nifti.js";

export const PHYSIMRI_CLI = process.env.PHYSIMRI_CLI ?? "physimri";

export interface Phantom {
  dir: string;
  mpmPath: string;
  priorPath: string;
  dims: [number, number, number];
}

/** CSF/GM/WM blocks along x plus a pd=0 background slab, as one 4D stack. */
export function makePhantom(dims: [number, number, number] = [12, 12, 12]): Phantom {
  const dir = mkdtempSync(path.join(tmpdir(), "physimri-bridge-"));
  const [nx, ny, nz] = dims;
  const tissues = [
    { t1: 4000.0, t2s: 500.0, pd: 1.0 }, // csf third
    { t1: 1300.0, t2s: 55.0, pd: 0.85 }, // gm third
    { t1: 850.0, t2s: 45.0, pd: 0.7 }, // wm rest
  ];
  const third = Math.floor(nx / 3);
  const data = new Float64Array(nx * ny * nz * 3);
  for (let ix = 0; ix < nx; ix++) {
    const tissue = tissues[Math.min(Math.floor(ix / third), 2)];
    for (let iy = 0; iy < ny; iy++) {
      for (let iz = 0; iz < nz; iz++) {
        const base = ((ix * ny + iy) * nz + iz) * 3;
        data[base] = tissue.t1;
        data[base + 1] = tissue.t2s;
        data[base + 2] = iy < 3 ? 0.0 : tissue.pd; // background slab
      }
    }
  }
  const mpmPath = path.join(dir, "mpm.nii");
  writeNifti(mpmPath, [nx, ny, nz, 3], data, "float64");

  const priorPath = path.join(dir, "prior.json");
  const classes = [
    { name: "csf", mean: tissues[0] },
    { name: "gm", mean: tissues[1] },
    { name: "wm", mean: tissues[2] },
  ].map(({ name, mean }) => ({
    name,
    mean_t1_ms: mean.t1,
    mean_t2s_ms: mean.t2s,
    mean_pd: mean.pd,
    var_t1_ms: 2500.0,
    var_t2s_ms: 25.0,
    var_pd: 0.0025,
  }));
  writeFileSync(
    priorPath,
    JSON.stringify({ channels: ["t1", "t2s", "pd"], background_pd_threshold: 0.05, classes }),
  );
  return { dir, mpmPath, priorPath, dims };
}

export function runCli(args: string[]): { stdout: string; status: number } {
  const result = spawnSync(PHYSIMRI_CLI, args, { encoding: "utf-8" });
  if (result.error) throw result.error;
  return { stdout: result.stdout, status: result.status ?? -1 };
}

/** Deterministic xorshift-based generator for test fixtures. */
export function makeRng(seed: number): () => number {
  let state = BigInt(seed) & 0xffffffffffffffffn;
  if (state === 0n) state = 0x9e3779b97f4a7c15n;
  return () => {
    state ^= state << 13n;
    state &= 0xffffffffffffffffn;
    state ^= state >> 7n;
    state ^= state << 17n;
    state &= 0xffffffffffffffffn;
    return Number(state >> 11n) / 9007199254740992;
  };
}
