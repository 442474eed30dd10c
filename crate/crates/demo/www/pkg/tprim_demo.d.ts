/* tslint:disable */
/* eslint-disable */

/**
 * Incremental fit of a jittered "three-boxes" scene against its own target.
 */
export class FitSession {
    free(): void;
    [Symbol.dispose](): void;
    labels(z: number): Uint8Array;
    miou(): number;
    constructor(seed: bigint, jitter: number, step_size: number);
    step(n: number): number;
    targetLabels(z: number): Uint8Array;
    readonly iteration: number;
    readonly loss: number;
}

export function kernelImage(kind: string, eps1: number, eps2: number, nu: number, field: number, weight: number, size: number): Float32Array;

export function splatLabels(scene_json: string, z: number, threshold: number): Uint8Array;

export function threeBoxesScene(seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_fitsession_free: (a: number, b: number) => void;
    readonly fitsession_iteration: (a: number) => number;
    readonly fitsession_labels: (a: number, b: number) => [number, number, number, number];
    readonly fitsession_loss: (a: number) => number;
    readonly fitsession_miou: (a: number) => [number, number, number];
    readonly fitsession_new: (a: bigint, b: number, c: number) => [number, number, number];
    readonly fitsession_step: (a: number, b: number) => [number, number, number];
    readonly fitsession_targetLabels: (a: number, b: number) => [number, number];
    readonly kernelImage: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly splatLabels: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly threeBoxesScene: (a: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
