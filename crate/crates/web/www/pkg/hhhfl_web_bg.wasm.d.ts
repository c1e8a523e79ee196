/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_federationdemo_free: (a: number, b: number) => void;
export const exploreMmd: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const federationdemo_embeddings: (a: number) => [number, number, number, number];
export const federationdemo_isDone: (a: number) => number;
export const federationdemo_new: (a: number, b: number) => [number, number, number];
export const federationdemo_step: (a: number) => [number, number, number, number];
export const previewEvent: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
