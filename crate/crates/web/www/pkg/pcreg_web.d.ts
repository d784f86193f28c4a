/* tslint:disable */
/* eslint-disable */

/**
 * Success curves over noise levels.
 */
export class Sweep {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly aucs: Float64Array;
    readonly levels: Float64Array;
    readonly mean_errors: Float64Array;
    readonly ratios: Float64Array;
    readonly thresholds: Float64Array;
}

/**
 * Outcome of one registration with its iteration history.
 */
export class Trace {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Cumulative transform after each iteration (frame 0 is the identity),
     * 16 row-major entries per frame.
     */
    readonly frames: Float64Array;
    readonly iterations: number;
    /**
     * Degrees, one per frame.
     */
    readonly rotation_errors: Float64Array;
    readonly source: Float64Array;
    readonly template: Float64Array;
    readonly translation_errors: Float64Array;
    readonly wall_ms: number;
}

export function noise_sweep(shape: string, points: number, pairs: number, seed: bigint, method: string, checkpoint?: Uint8Array | null): Sweep;

export function register(shape: string, points: number, rx: number, ry: number, rz: number, tx: number, ty: number, tz: number, noise: number, seed: bigint, method: string, checkpoint?: Uint8Array | null): Trace;

export function shapes(): string[];

export function synth(shape: string, points: number, seed: bigint): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_sweep_free: (a: number, b: number) => void;
    readonly __wbg_trace_free: (a: number, b: number) => void;
    readonly noise_sweep: (a: number, b: number, c: number, d: number, e: bigint, f: number, g: number, h: number, i: number) => [number, number, number];
    readonly register: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number, k: bigint, l: number, m: number, n: number, o: number) => [number, number, number];
    readonly shapes: () => [number, number];
    readonly sweep_aucs: (a: number) => [number, number];
    readonly sweep_levels: (a: number) => [number, number];
    readonly sweep_mean_errors: (a: number) => [number, number];
    readonly sweep_ratios: (a: number) => [number, number];
    readonly sweep_thresholds: (a: number) => [number, number];
    readonly synth: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly trace_frames: (a: number) => [number, number];
    readonly trace_iterations: (a: number) => number;
    readonly trace_rotation_errors: (a: number) => [number, number];
    readonly trace_source: (a: number) => [number, number];
    readonly trace_template: (a: number) => [number, number];
    readonly trace_translation_errors: (a: number) => [number, number];
    readonly trace_wall_ms: (a: number) => number;
    readonly __externref_table_alloc: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
