/**
 * Thin HTTP client over the annotation service API. All ids are opaque; the
 * payloads are already blinded server-side and are rendered verbatim.
 */

import type { ApiClient, Progress, RasterImage, SubmitResult, TaskPayload } from "./types.js";

export class HttpClient implements ApiClient {
  constructor(private baseUrl: string = "") {}

  async nextTask(reviewer: string): Promise<TaskPayload | null> {
    const resp = await fetch(
      `${this.baseUrl}/api/tasks/next?reviewer=${encodeURIComponent(reviewer)}`,
    );
    if (resp.status === 204) return null;
    if (!resp.ok) throw new Error(`next task failed: ${resp.status}`);
    return (await resp.json()) as TaskPayload;
  }

  async submitSelection(taskId: string, reviewer: string, choice: string): Promise<SubmitResult> {
    const resp = await fetch(`${this.baseUrl}/api/tasks/${taskId}/selection`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ reviewer, choice }),
    });
    if (resp.ok) {
      const body = (await resp.json()) as { status: string };
      return { ok: true, status: body.status };
    }
    let detail = resp.statusText;
    try {
      detail = ((await resp.json()) as { detail?: string }).detail ?? detail;
    } catch {
      // body was not JSON; keep the status text
    }
    return { ok: false, code: resp.status, detail };
  }

  async renewLock(taskId: string, reviewer: string): Promise<void> {
    await fetch(`${this.baseUrl}/api/tasks/${taskId}/renew`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ reviewer }),
    });
  }

  async getProgress(): Promise<Progress> {
    const resp = await fetch(`${this.baseUrl}/api/progress`);
    if (!resp.ok) throw new Error(`progress failed: ${resp.status}`);
    return (await resp.json()) as Progress;
  }

  async fetchImage(url: string): Promise<RasterImage | null> {
    if (typeof document === "undefined") return null;
    const img = new Image();
    img.src = `${this.baseUrl}${url}`;
    try {
      await img.decode();
    } catch {
      return null;
    }
    const canvas = document.createElement("canvas");
    canvas.width = img.naturalWidth;
    canvas.height = img.naturalHeight;
    const ctx = canvas.getContext("2d");
    if (!ctx) return null;
    ctx.drawImage(img, 0, 0);
    const data = ctx.getImageData(0, 0, canvas.width, canvas.height);
    return { width: data.width, height: data.height, data: data.data };
  }
}
