/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const adapt_demo: (a: bigint, b: number) => [number, number];
export const drive: (a: bigint, b: number, c: number, d: bigint) => [number, number];
export const reweight_toy: (a: number, b: number, c: bigint, d: number, e: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
