/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_fitsession_free: (a: number, b: number) => void;
export const fitsession_iteration: (a: number) => number;
export const fitsession_labels: (a: number, b: number) => [number, number, number, number];
export const fitsession_loss: (a: number) => number;
export const fitsession_miou: (a: number) => [number, number, number];
export const fitsession_new: (a: bigint, b: number, c: number) => [number, number, number];
export const fitsession_step: (a: number, b: number) => [number, number, number];
export const fitsession_targetLabels: (a: number, b: number) => [number, number];
export const kernelImage: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
export const splatLabels: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const threeBoxesScene: (a: bigint) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
