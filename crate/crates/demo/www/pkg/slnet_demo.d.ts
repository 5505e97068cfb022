/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Replaces the current output with a baseline subtraction and returns its
     * sparsity in percent. `method` is `median` or `rolling-ball`.
     */
    baseline(method: string, radius: number): number;
    /**
     * Decomposes the stack with the current model and returns the sparsity
     * of the sparse part in percent.
     */
    decompose(): number;
    epochs_trained(): number;
    /**
     * RGBA pixels of frame `t` of `which` (`raw`, `sparse` or `lowrank`).
     */
    frame_rgba(which: string, t: number): Uint8Array;
    frames(): number;
    height(): number;
    /**
     * Localizes emitters in the current output; returns the count.
     */
    localize(): number;
    /**
     * A 64x64 stack with the built-in three-blob background scaled by
     * `background_scale`.
     */
    constructor(seed: number, frames: number, background_scale: number);
    /**
     * RGBA histogram rendering of the localizations at `magnification`.
     */
    render_rgba(magnification: number): Uint8Array;
    reset_model(): void;
    /**
     * Runs one training epoch (starting a fresh model on first use) and
     * returns the mean loss of that epoch.
     */
    train_epoch(alpha: number): number;
    width(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_baseline: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly demo_decompose: (a: number) => [number, number, number];
    readonly demo_epochs_trained: (a: number) => number;
    readonly demo_frame_rgba: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_frames: (a: number) => number;
    readonly demo_height: (a: number) => number;
    readonly demo_localize: (a: number) => [number, number, number];
    readonly demo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_render_rgba: (a: number, b: number) => [number, number, number, number];
    readonly demo_reset_model: (a: number) => void;
    readonly demo_train_epoch: (a: number, b: number) => [number, number, number];
    readonly demo_width: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
