/* tslint:disable */
/* eslint-disable */

export class FederationDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Test-set embeddings in the plane of their two principal axes.
     */
    embeddings(): string;
    isDone(): boolean;
    /**
     * `config` is a JSON object with any of the `DemoConfig` fields.
     */
    constructor(config: string);
    step(): string;
}

/**
 * Two Gaussian clouds and their MMD². `bandwidth <= 0` picks the median heuristic.
 */
export function exploreMmd(n: number, shift: number, spread: number, bandwidth: number, seed: number): string;

/**
 * A synthetic raw recording for `device` and the feature vector it becomes.
 */
export function previewEvent(device: string, code: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_federationdemo_free: (a: number, b: number) => void;
    readonly exploreMmd: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly federationdemo_embeddings: (a: number) => [number, number, number, number];
    readonly federationdemo_isDone: (a: number) => number;
    readonly federationdemo_new: (a: number, b: number) => [number, number, number];
    readonly federationdemo_step: (a: number) => [number, number, number, number];
    readonly previewEvent: (a: number, b: number, c: number, d: number) => [number, number, number, number];
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
