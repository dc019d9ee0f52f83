/* tslint:disable */
/* eslint-disable */

/**
 * Small end-to-end run: base training, adaptation to the held-out task and
 * both baselines. Returns the weight trace and per-trial curves.
 */
export function adapt_demo(seed: bigint, trials: number): string;

/**
 * One episode on the corridor generated from `task_seed`, driven by the
 * scripted `"expert"` or a `"random"` policy.
 */
export function drive(task_seed: bigint, driver: string, seed: bigint): string;

/**
 * Random `n x dim` gradient rows and target; `steps` single logit updates at
 * rate `gamma`, recording the cost and weights after each.
 */
export function reweight_toy(n: number, dim: number, seed: bigint, steps: number, gamma: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly adapt_demo: (a: bigint, b: number) => [number, number];
    readonly drive: (a: bigint, b: number, c: number, d: bigint) => [number, number];
    readonly reweight_toy: (a: number, b: number, c: bigint, d: number, e: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
