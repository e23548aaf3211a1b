/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_session_free: (a: number, b: number) => void;
export const session_detect: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const session_lossCurves: (a: number) => [number, number];
export const session_new: (a: number, b: number) => [number, number, number];
export const session_numVideos: (a: number) => number;
export const session_view: (a: number, b: number) => [number, number, number, number];
export const smooth: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
