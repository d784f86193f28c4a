/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_sweep_free: (a: number, b: number) => void;
export const __wbg_trace_free: (a: number, b: number) => void;
export const noise_sweep: (a: number, b: number, c: number, d: number, e: bigint, f: number, g: number, h: number, i: number) => [number, number, number];
export const register: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number, k: bigint, l: number, m: number, n: number, o: number) => [number, number, number];
export const shapes: () => [number, number];
export const sweep_aucs: (a: number) => [number, number];
export const sweep_levels: (a: number) => [number, number];
export const sweep_mean_errors: (a: number) => [number, number];
export const sweep_ratios: (a: number) => [number, number];
export const sweep_thresholds: (a: number) => [number, number];
export const synth: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
export const trace_frames: (a: number) => [number, number];
export const trace_iterations: (a: number) => number;
export const trace_rotation_errors: (a: number) => [number, number];
export const trace_source: (a: number) => [number, number];
export const trace_template: (a: number) => [number, number];
export const trace_translation_errors: (a: number) => [number, number];
export const trace_wall_ms: (a: number) => number;
export const __externref_table_alloc: () => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
