/**
 * Single-page reviewer app: fetch blinded tasks, toggle candidate overlays
 * on the radiograph, submit the best candidate (or reject all in stage 2),
 * and track campaign progress.
 *
 * The DOM shows only what the server sent: blinded labels and opaque URLs.
 */

import { compositeOverlay } from "./compositor.js";
import { TaskSession } from "./state.js";
import { REJECT_ALL } from "./types.js";
import type { ApiClient, RasterImage, TaskPayload } from "./types.js";

export interface AppOptions {
  root: HTMLElement;
  client: ApiClient;
  reviewerId: string;
  progressIntervalMs?: number;
  renewIntervalMs?: number;
}

const PROGRESS_INTERVAL_MS = 10_000;
const RENEW_INTERVAL_MS = 5 * 60_000;

export class ReviewApp {
  readonly session = new TaskSession();
  private root: HTMLElement;
  private client: ApiClient;
  private reviewerId: string;
  private baseImage: RasterImage | null = null;
  private maskImages = new Map<string, RasterImage>();
  private timers: ReturnType<typeof setInterval>[] = [];
  private progressIntervalMs: number;
  private renewIntervalMs: number;
  private keyHandler = (e: KeyboardEvent) => {
    if (this.session.selectByKey(e.key)) this.renderViewer();
  };

  constructor(opts: AppOptions) {
    this.root = opts.root;
    this.client = opts.client;
    this.reviewerId = opts.reviewerId;
    this.progressIntervalMs = opts.progressIntervalMs ?? PROGRESS_INTERVAL_MS;
    this.renewIntervalMs = opts.renewIntervalMs ?? RENEW_INTERVAL_MS;
  }

  async start(): Promise<void> {
    this.root.innerHTML = `
      <header class="topbar">
        <span class="app-title">Mask review</span>
        <span data-testid="reviewer-id" class="reviewer"></span>
        <span data-testid="completed-count" class="counter">0</span>
      </header>
      <div data-testid="retry-banner" class="banner hidden">
        Connection problem. <button data-testid="retry-btn">Retry</button>
      </div>
      <div data-testid="toast" class="toast hidden"></div>
      <main data-testid="task-view" class="task hidden">
        <section class="viewer">
          <canvas data-testid="viewer-canvas"></canvas>
        </section>
        <aside class="controls">
          <div data-testid="candidate-list" class="candidates"></div>
          <label>overlay
            <input data-testid="opacity-slider" type="range" min="0" max="100" value="50" />
          </label>
          <label>zoom
            <input data-testid="zoom-slider" type="range" min="50" max="300" value="100" />
          </label>
          <button data-testid="submit-btn">Select as ground truth</button>
          <button data-testid="reject-btn" class="danger hidden">Reject all</button>
          <div data-testid="confirm-strip" class="confirm hidden">
            No candidate is acceptable?
            <button data-testid="confirm-reject">Confirm reject</button>
            <button data-testid="cancel-reject">Cancel</button>
          </div>
        </aside>
      </main>
      <div data-testid="no-tasks" class="empty hidden">No tasks in the queue.</div>
      <footer data-testid="progress" class="progress"></footer>
    `;
    this.byId("reviewer-id").textContent = this.reviewerId;
    this.byId("retry-btn").addEventListener("click", () => void this.loadNext());
    this.byId("submit-btn").addEventListener("click", () => void this.submitActive());
    this.byId("reject-btn").addEventListener("click", () => this.showConfirm(true));
    this.byId("cancel-reject").addEventListener("click", () => this.showConfirm(false));
    this.byId("confirm-reject").addEventListener("click", () => void this.submit(REJECT_ALL));
    (this.byId("opacity-slider") as HTMLInputElement).addEventListener("input", (e) => {
      this.session.overlayOpacity = Number((e.target as HTMLInputElement).value) / 100;
      this.renderViewer();
    });
    (this.byId("zoom-slider") as HTMLInputElement).addEventListener("input", (e) => {
      this.session.zoom = Number((e.target as HTMLInputElement).value) / 100;
      this.applyZoom();
    });
    document.addEventListener("keydown", this.keyHandler);

    this.timers.push(setInterval(() => void this.refreshProgress(), this.progressIntervalMs));
    this.timers.push(setInterval(() => void this.renewLock(), this.renewIntervalMs));

    await this.refreshProgress();
    await this.loadNext();
  }

  stop(): void {
    for (const t of this.timers) clearInterval(t);
    this.timers = [];
    document.removeEventListener("keydown", this.keyHandler);
  }

  byId(testId: string): HTMLElement {
    const el = this.root.querySelector(`[data-testid="${testId}"]`);
    if (!el) throw new Error(`missing element ${testId}`);
    return el as HTMLElement;
  }

  private show(testId: string, visible: boolean): void {
    this.byId(testId).classList.toggle("hidden", !visible);
  }

  toast(message: string): void {
    const el = this.byId("toast");
    el.textContent = message;
    el.classList.remove("hidden");
  }

  private showConfirm(visible: boolean): void {
    this.show("confirm-strip", visible);
  }

  async loadNext(): Promise<void> {
    this.show("retry-banner", false);
    this.showConfirm(false);
    let task: TaskPayload | null;
    try {
      task = await this.client.nextTask(this.reviewerId);
    } catch {
      // keep current task/state; surface a retry affordance
      this.show("retry-banner", true);
      return;
    }
    this.session.setTask(task);
    this.baseImage = null;
    this.maskImages.clear();
    if (task === null) {
      this.show("task-view", false);
      this.show("no-tasks", true);
      return;
    }
    this.show("no-tasks", false);
    this.show("task-view", true);
    this.show("reject-btn", task.allow_reject_all);
    this.renderCandidates(task);
    this.baseImage = await this.client.fetchImage(task.image_url);
    for (const cand of task.candidates) {
      const mask = await this.client.fetchImage(cand.mask_url);
      if (mask) this.maskImages.set(cand.label, mask);
    }
    this.renderViewer();
  }

  private renderCandidates(task: TaskPayload): void {
    const list = this.byId("candidate-list");
    list.innerHTML = "";
    // server order is the blinded randomized order; never re-sort
    for (const cand of task.candidates) {
      const btn = document.createElement("button");
      btn.dataset.testid = "candidate-btn";
      btn.dataset.label = cand.label;
      btn.textContent = cand.label;
      btn.addEventListener("click", () => {
        this.session.selectCandidate(cand.label);
        this.renderViewer();
      });
      list.appendChild(btn);
    }
  }

  renderViewer(): void {
    const list = this.byId("candidate-list");
    for (const btn of Array.from(list.children) as HTMLElement[]) {
      btn.classList.toggle("active", btn.dataset.label === this.session.activeCandidate);
    }
    const canvas = this.byId("viewer-canvas") as HTMLCanvasElement;
    if (!this.baseImage) return;
    const composed = this.composeActive();
    canvas.width = composed.width;
    canvas.height = composed.height;
    let ctx: CanvasRenderingContext2D | null = null;
    try {
      ctx = canvas.getContext("2d");
    } catch {
      ctx = null; // headless test environment without canvas support
    }
    if (!ctx) return;
    const imageData = ctx.createImageData(composed.width, composed.height);
    imageData.data.set(composed.data);
    ctx.putImageData(imageData, 0, 0);
    this.applyZoom();
  }

  /** The exact pixels drawn: radiograph with the active overlay composited. */
  composeActive(): RasterImage {
    if (!this.baseImage) throw new Error("no base image");
    const label = this.session.activeCandidate;
    const mask = label ? this.maskImages.get(label) : undefined;
    if (!mask) {
      return { ...this.baseImage, data: new Uint8ClampedArray(this.baseImage.data) };
    }
    return compositeOverlay(this.baseImage, mask, this.session.overlayOpacity);
  }

  private applyZoom(): void {
    const canvas = this.byId("viewer-canvas") as HTMLCanvasElement;
    canvas.style.transform = `scale(${this.session.zoom})`;
  }

  async submitActive(): Promise<void> {
    if (this.session.activeCandidate) await this.submit(this.session.activeCandidate);
  }

  async submit(choice: string): Promise<void> {
    const task = this.session.task;
    if (!task) return;
    this.showConfirm(false);
    let result;
    try {
      result = await this.client.submitSelection(task.task_id, this.reviewerId, choice);
    } catch {
      this.show("retry-banner", true);
      return;
    }
    if (result.ok) {
      this.session.recordCompleted();
      this.byId("completed-count").textContent = String(this.session.completedCount);
      await this.refreshProgress();
      await this.loadNext();
      return;
    }
    if (result.code === 409) {
      this.toast("This task was taken over or already answered; fetching a fresh one.");
      await this.loadNext();
      return;
    }
    this.toast(`Submission rejected: ${result.detail}`);
  }

  async renewLock(): Promise<void> {
    const task = this.session.task;
    if (!task) return;
    try {
      await this.client.renewLock(task.task_id, this.reviewerId);
    } catch {
      // renewal is best-effort; expiry simply reopens the task
    }
  }

  async refreshProgress(): Promise<void> {
    let progress;
    try {
      progress = await this.client.getProgress();
    } catch {
      return;
    }
    const parts = [
      `open ${progress.open}`,
      `locked ${progress.locked}`,
      `completed ${progress.completed}`,
      `rejected ${progress.rejected_all}`,
    ];
    const fallback = `fallback queue ${progress.fallback_pending}`;
    const el = this.byId("progress");
    el.innerHTML = "";
    for (const text of parts) {
      const span = document.createElement("span");
      span.textContent = text;
      el.appendChild(span);
    }
    const fb = document.createElement("span");
    fb.textContent = fallback;
    fb.dataset.testid = "fallback-count";
    fb.classList.toggle("highlight", progress.fallback_pending > 0);
    el.appendChild(fb);
  }
}

export function createApp(opts: AppOptions): ReviewApp {
  return new ReviewApp(opts);
}
