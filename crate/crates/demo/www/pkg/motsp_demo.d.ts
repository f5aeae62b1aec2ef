/* tslint:disable */
/* eslint-disable */

/**
 * Trains the desk-profile subproblem sequence a few iterations at a time
 * and evaluates the growing set of policies on one display instance.
 */
export class DemoSession {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Node coordinates as `[x1, y1, x2, y2]` per node.
     */
    coordinates(): Float64Array;
    /**
     * Greedy-decoded front of every policy so far, as `[f1, f2, ...]`.
     */
    front(): Float64Array;
    /**
     * `[HV(trained front), HV(random front)]` under shared normalization bounds.
     */
    hv(): Float64Array;
    iterations(): number;
    /**
     * `iterations` per subproblem, `nodes` in the display instance.
     */
    constructor(subproblems: number, iterations: number, nodes: number, seed: number);
    /**
     * Objectives of 10 random tours, as `[f1, f2, ...]`.
     */
    random_points(): Float64Array;
    /**
     * Runs up to `k` training iterations. Returns the mean sampled cost of
     * the last one, or `NaN` once every subproblem is trained.
     */
    step(k: number): number;
    subproblems(): number;
    /**
     * Tour behind the `i`-th front point, as node indices.
     */
    tour(i: number): Uint32Array;
    /**
     * Number of subproblems finished so far.
     */
    trained(): number;
}

/**
 * Exact 2-D hypervolume of `flat = [f1, f2, f1, f2, ...]` against `(r1, r2)`,
 * without normalization.
 */
export function hypervolume(flat: Float64Array, r1: number, r2: number): number;

/**
 * Indices of the nondominated points of `flat`.
 */
export function pareto_front(flat: Float64Array): Uint32Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demosession_free: (a: number, b: number) => void;
    readonly demosession_coordinates: (a: number) => [number, number];
    readonly demosession_front: (a: number) => [number, number, number, number];
    readonly demosession_hv: (a: number) => [number, number, number, number];
    readonly demosession_iterations: (a: number) => number;
    readonly demosession_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly demosession_random_points: (a: number) => [number, number];
    readonly demosession_step: (a: number, b: number) => [number, number, number];
    readonly demosession_subproblems: (a: number) => number;
    readonly demosession_tour: (a: number, b: number) => [number, number, number, number];
    readonly demosession_trained: (a: number) => number;
    readonly hypervolume: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly pareto_front: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
