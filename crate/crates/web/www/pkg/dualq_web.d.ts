/* tslint:disable */
/* eslint-disable */

/**
 * Link example run: `f(z⋄_k)` and the scaled queues `αQ_k`.
 */
export class LinkRun {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly f_avg: Float64Array;
    readonly f_star: number;
    readonly lambda_star: Float64Array;
    readonly mu1: Float64Array;
    readonly mu2: Float64Array;
}

/**
 * Two scalar queues fed by increments that differ by at most `noise` per step.
 */
export class QueuePair {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `2 max_j |Σ_{i≤j}(x_i − y_i)|`
     */
    readonly bound: Float64Array;
    /**
     * `|λ_k − μ_k|`
     */
    readonly distance: Float64Array;
}

/**
 * Actions emitted by the tracker for a constant target `z` on `D = {0, …, hi}`.
 */
export class TrackerDemo {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly actions: Float64Array;
    readonly bound: number;
    /**
     * `|Σ(z_i − x_i)|` after each step.
     */
    readonly deviation: Float64Array;
    readonly running_avg: Float64Array;
}

export function link_convergence(alpha: number, steps: number, seed: bigint): LinkRun;

export function queue_continuity(len: number, noise: number, drift: number, seed: bigint): QueuePair;

export function tracker_demo(z: number, hi: number, steps: number): TrackerDemo;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_linkrun_free: (a: number, b: number) => void;
    readonly __wbg_queuepair_free: (a: number, b: number) => void;
    readonly __wbg_trackerdemo_free: (a: number, b: number) => void;
    readonly link_convergence: (a: number, b: number, c: bigint) => [number, number, number];
    readonly linkrun_f_avg: (a: number) => [number, number];
    readonly linkrun_f_star: (a: number) => number;
    readonly linkrun_lambda_star: (a: number) => [number, number];
    readonly linkrun_mu1: (a: number) => [number, number];
    readonly linkrun_mu2: (a: number) => [number, number];
    readonly queue_continuity: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly queuepair_bound: (a: number) => [number, number];
    readonly queuepair_distance: (a: number) => [number, number];
    readonly tracker_demo: (a: number, b: number, c: number) => [number, number, number];
    readonly trackerdemo_actions: (a: number) => [number, number];
    readonly trackerdemo_bound: (a: number) => number;
    readonly trackerdemo_deviation: (a: number) => [number, number];
    readonly trackerdemo_running_avg: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
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
