/**
 * Session-based client for the python bridge server.
 *
 * One child process hosts any number of map sessions: load a
 * multi-parametric map (plus its gold-standard prior) once, then request
 * stratified batches and reference-loss evaluations against it. Requests
 * are pipelined in order; server-side failures surface as BridgeError
 * with the originating validation message and never kill the process.
 */

import { ChildProcess, spawn } from "node:child_process";
import { fileURLToPath } from "node:url";
import path from "node:path";

import {
  asFloat64,
  encodeFrame,
  Frame,
  FrameDecoder,
  FrameHeader,
  float64Buffer,
  int64Buffer,
} from "./protocol.js";

// server.py sits at the package root, one level above src/ (or dist/)
const SERVER_PATH = path.join(
  path.dirname(fileURLToPath(import.meta.url)),
  "..",
  "server.py",
);

export class BridgeError extends Error {
  constructor(
    public readonly kind: string,
    message: string,
  ) {
    super(message);
    this.name = "BridgeError";
  }
}

export interface SimulateBatchOptions {
  preset?: string;
  range?: Record<string, unknown>;
  n: number;
  /** [ox, oy, oz, px, py, pz]; omit for a random patch location */
  patch?: [number, number, number, number, number, number];
  patchSize?: [number, number, number];
  seed?: number;
  stream?: number;
}

export interface BatchArrays {
  /** [n, px, py, pz], C-order */
  intensity: Float64Array;
  intensityShape: number[];
  /** [n, k], C-order */
  physics: Float64Array;
  physicsShape: number[];
  /** [classes, px, py, pz], C-order */
  target: Float64Array;
  targetShape: number[];
  patch: number[];
  params: Record<string, number | string>[];
}

export interface ReferenceLossOptions {
  logits: Float64Array;
  sigma: Float64Array;
  /** voxel shape + trailing class axis, C-order */
  logitsShape: number[];
  target: Int32Array | number[];
  targetShape: number[];
  features?: Float64Array;
  featuresShape?: number[];
  tPasses: number;
  seed?: number;
  stream?: number;
}

export interface ReferenceLossValues {
  attenuatedCe: number;
  stratificationLoss: number | null;
}

interface Pending {
  resolve: (frame: Frame) => void;
  reject: (err: Error) => void;
}

export class BridgeClient {
  private proc: ChildProcess;
  private decoder = new FrameDecoder();
  private pending: Pending[] = [];
  private closed = false;
  private stderrTail = "";

  constructor(python: string = process.env.PHYSIMRI_PYTHON ?? "python3") {
    this.proc = spawn(python, [SERVER_PATH], {
      stdio: ["pipe", "pipe", "pipe"],
    });
    this.proc.stdout!.on("data", (chunk: Buffer) => {
      this.decoder.push(chunk);
      let frame = this.decoder.next();
      while (frame !== null) {
        const waiter = this.pending.shift();
        waiter?.resolve(frame);
        frame = this.decoder.next();
      }
    });
    this.proc.stderr!.on("data", (chunk: Buffer) => {
      this.stderrTail = (this.stderrTail + chunk.toString()).slice(-4000);
    });
    this.proc.on("exit", () => {
      const err = new BridgeError(
        "closed",
        `bridge server exited${this.stderrTail ? `: ${this.stderrTail}` : ""}`,
      );
      for (const waiter of this.pending.splice(0)) waiter.reject(err);
      this.closed = true;
    });
  }

  get pid(): number | undefined {
    return this.proc.pid;
  }

  private request(header: FrameHeader, payloads: Buffer[] = []): Promise<Frame> {
    if (this.closed) {
      return Promise.reject(new BridgeError("closed", "bridge server is closed"));
    }
    return new Promise<Frame>((resolve, reject) => {
      this.pending.push({ resolve, reject });
      for (const part of encodeFrame(header, payloads)) {
        this.proc.stdin!.write(part);
      }
    });
  }

  private async call(header: FrameHeader, payloads: Buffer[] = []): Promise<Frame> {
    const frame = await this.request(header, payloads);
    if (!frame.header.ok) {
      const error = frame.header.error as { type?: string; message?: string } | undefined;
      throw new BridgeError(error?.type ?? "internal", error?.message ?? "unknown bridge error");
    }
    return frame;
  }

  /** Load a map + prior; returns an opaque session handle. */
  async createSession(mpmPath: string, priorPath: string): Promise<number> {
    const frame = await this.call({
      op: "create_session",
      mpm_path: mpmPath,
      prior_path: priorPath,
    });
    return frame.header.handle as number;
  }

  async simulateBatch(handle: number, options: SimulateBatchOptions): Promise<BatchArrays> {
    const frame = await this.call({
      op: "simulate_batch",
      handle,
      preset: options.preset ?? null,
      range: options.range ?? null,
      n: options.n,
      patch: options.patch ?? null,
      patch_size: options.patchSize ?? null,
      seed: options.seed ?? 0,
      stream: options.stream ?? 0,
    });
    const shapes = frame.header.shapes as {
      intensity: number[];
      physics: number[];
      target: number[];
    };
    return {
      intensity: asFloat64(frame.payloads[0]),
      intensityShape: shapes.intensity,
      physics: asFloat64(frame.payloads[1]),
      physicsShape: shapes.physics,
      target: asFloat64(frame.payloads[2]),
      targetShape: shapes.target,
      patch: frame.header.patch as number[],
      params: frame.header.params as Record<string, number | string>[],
    };
  }

  async referenceLosses(options: ReferenceLossOptions): Promise<ReferenceLossValues> {
    const payloads = [
      Buffer.from(options.logits.buffer, options.logits.byteOffset, options.logits.byteLength),
      Buffer.from(options.sigma.buffer, options.sigma.byteOffset, options.sigma.byteLength),
      int64Buffer(options.target as ArrayLike<number>),
    ];
    const shapes: Record<string, unknown> = {
      logits: options.logitsShape,
      sigma: options.logitsShape,
      target: options.targetShape,
      features: options.features ? options.featuresShape : null,
    };
    if (options.features) {
      payloads.push(
        Buffer.from(
          options.features.buffer,
          options.features.byteOffset,
          options.features.byteLength,
        ),
      );
    }
    const frame = await this.call(
      {
        op: "reference_losses",
        shapes,
        t_passes: options.tPasses,
        seed: options.seed ?? 0,
        stream: options.stream ?? 0,
      },
      payloads,
    );
    const values = asFloat64(frame.payloads[0]);
    return {
      attenuatedCe: values[0],
      stratificationLoss: Number.isNaN(values[1]) ? null : values[1],
    };
  }

  /** Free a session; releasing an unknown/released handle is a no-op. */
  async release(handle: number): Promise<boolean> {
    const frame = await this.call({ op: "release", handle });
    return frame.header.released as boolean;
  }

  async stats(): Promise<{ activeSessions: number; rssBytes: number }> {
    const frame = await this.call({ op: "stats" });
    return {
      activeSessions: frame.header.active_sessions as number,
      rssBytes: frame.header.rss_bytes as number,
    };
  }

  /** Orderly shutdown; resolves when the server acknowledges. */
  async close(): Promise<void> {
    if (this.closed) return;
    try {
      await this.request({ op: "shutdown" });
    } catch {
      // server may already be gone
    }
    this.closed = true;
    this.proc.stdin!.end();
  }

  /** Hard kill for teardown paths. */
  kill(): void {
    this.closed = true;
    this.proc.kill("SIGKILL");
  }
}
