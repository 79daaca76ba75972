export interface CandidateRef {
  label: string;
  mask_url: string;
}

export interface TaskPayload {
  task_id: string;
  image_url: string;
  candidates: CandidateRef[];
  stage: string;
  allow_reject_all: boolean;
}

export interface Progress {
  open: number;
  locked: number;
  completed: number;
  rejected_all: number;
  fallback_pending: number;
}

/** Decoded raster: RGBA bytes, row-major. */
export interface RasterImage {
  width: number;
  height: number;
  data: Uint8ClampedArray;
}

export type SubmitResult =
  | { ok: true; status: string }
  | { ok: false; code: number; detail: string };

export interface ApiClient {
  nextTask(reviewer: string): Promise<TaskPayload | null>;
  submitSelection(taskId: string, reviewer: string, choice: string): Promise<SubmitResult>;
  renewLock(taskId: string, reviewer: string): Promise<void>;
  getProgress(): Promise<Progress>;
  /** Null when pixel decoding is unavailable (e.g. no canvas). */
  fetchImage(url: string): Promise<RasterImage | null>;
}

export const REJECT_ALL = "REJECT_ALL";
