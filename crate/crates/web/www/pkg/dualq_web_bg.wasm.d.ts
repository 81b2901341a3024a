/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_linkrun_free: (a: number, b: number) => void;
export const __wbg_queuepair_free: (a: number, b: number) => void;
export const __wbg_trackerdemo_free: (a: number, b: number) => void;
export const link_convergence: (a: number, b: number, c: bigint) => [number, number, number];
export const linkrun_f_avg: (a: number) => [number, number];
export const linkrun_f_star: (a: number) => number;
export const linkrun_lambda_star: (a: number) => [number, number];
export const linkrun_mu1: (a: number) => [number, number];
export const linkrun_mu2: (a: number) => [number, number];
export const queue_continuity: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const queuepair_bound: (a: number) => [number, number];
export const queuepair_distance: (a: number) => [number, number];
export const tracker_demo: (a: number, b: number, c: number) => [number, number, number];
export const trackerdemo_actions: (a: number) => [number, number];
export const trackerdemo_bound: (a: number) => number;
export const trackerdemo_deviation: (a: number) => [number, number];
export const trackerdemo_running_avg: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
