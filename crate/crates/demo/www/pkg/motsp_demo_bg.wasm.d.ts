/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demosession_free: (a: number, b: number) => void;
export const demosession_coordinates: (a: number) => [number, number];
export const demosession_front: (a: number) => [number, number, number, number];
export const demosession_hv: (a: number) => [number, number, number, number];
export const demosession_iterations: (a: number) => number;
export const demosession_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const demosession_random_points: (a: number) => [number, number];
export const demosession_step: (a: number, b: number) => [number, number, number];
export const demosession_subproblems: (a: number) => number;
export const demosession_tour: (a: number, b: number) => [number, number, number, number];
export const demosession_trained: (a: number) => number;
export const hypervolume: (a: number, b: number, c: number, d: number) => [number, number, number];
export const pareto_front: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
