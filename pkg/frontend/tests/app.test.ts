import { beforeEach, describe, expect, it } from "vitest";

import { ReviewApp, createApp } from "../src/app";
import { grayToRaster } from "../src/compositor";
import type {
  ApiClient,
  Progress,
  RasterImage,
  SubmitResult,
  TaskPayload,
} from "../src/types";

const PROVENANCE_TOKENS = [
  "manual",
  "model",
  "collaborative",
  "unet",
  "densenet",
  "resnet",
  "inception",
  "dla",
];

function task(id: string, stage: "stage1" | "stage2", nCands: number): TaskPayload {
  return {
    task_id: id,
    image_url: `/api/images/img-${id}.png`,
    candidates: Array.from({ length: nCands }, (_, i) => ({
      label: String(i + 1),
      mask_url: `/api/masks/ref${id}${i}.png`,
    })),
    stage,
    allow_reject_all: stage === "stage2",
  };
}

class FakeClient implements ApiClient {
  queue: TaskPayload[] = [];
  submissions: { taskId: string; reviewer: string; choice: string }[] = [];
  submitResponses: SubmitResult[] = [];
  renewals: { taskId: string; reviewer: string }[] = [];
  failNext = false;
  progress: Progress = { open: 0, locked: 0, completed: 0, rejected_all: 0, fallback_pending: 0 };

  async nextTask(_reviewer: string): Promise<TaskPayload | null> {
    if (this.failNext) {
      this.failNext = false;
      throw new Error("network down");
    }
    return this.queue.shift() ?? null;
  }

  async submitSelection(taskId: string, reviewer: string, choice: string): Promise<SubmitResult> {
    this.submissions.push({ taskId, reviewer, choice });
    return this.submitResponses.shift() ?? { ok: true, status: "completed" };
  }

  async renewLock(taskId: string, reviewer: string): Promise<void> {
    this.renewals.push({ taskId, reviewer });
  }

  async getProgress(): Promise<Progress> {
    return this.progress;
  }

  async fetchImage(url: string): Promise<RasterImage | null> {
    // deterministic synthetic pixels derived from the url
    const seed = url.length % 7;
    const gray = new Uint8ClampedArray(16 * 16);
    for (let i = 0; i < gray.length; i++) gray[i] = (i * 31 + seed * 11) % 256;
    if (url.includes("/api/masks/")) {
      for (let i = 0; i < gray.length; i++) gray[i] = i % 4 === seed % 4 ? 255 : 0;
    }
    return grayToRaster(gray, 16, 16);
  }
}

async function startApp(
  client: FakeClient,
  reviewerId = "md-7",
): Promise<{ app: ReviewApp; root: HTMLElement }> {
  const root = document.createElement("div");
  document.body.appendChild(root);
  const app = createApp({
    root,
    client,
    reviewerId,
    progressIntervalMs: 3_600_000,
    renewIntervalMs: 3_600_000,
  });
  await app.start();
  return { app, root };
}

function click(app: ReviewApp, testId: string): void {
  (app.byId(testId) as HTMLElement).click();
}

async function settle(): Promise<void> {
  // let queued promise callbacks from click handlers run
  for (let i = 0; i < 10; i++) await Promise.resolve();
}

beforeEach(() => {
  document.body.innerHTML = "";
});

describe("task rendering", () => {
  it("shows candidates in server order with blinded labels only", async () => {
    const client = new FakeClient();
    client.queue = [task("a", "stage1", 4)];
    const { app, root } = await startApp(client);
    const buttons = Array.from(root.querySelectorAll('[data-testid="candidate-btn"]'));
    expect(buttons.map((b) => (b as HTMLElement).dataset.label)).toEqual(["1", "2", "3", "4"]);
    // stage1: no reject button
    expect(app.byId("reject-btn").classList.contains("hidden")).toBe(true);
    app.stop();
  });

  it("never exposes provenance strings in the DOM", async () => {
    const client = new FakeClient();
    client.queue = [task("a", "stage2", 5)];
    const { app, root } = await startApp(client);
    const dom = root.innerHTML.toLowerCase();
    for (const token of PROVENANCE_TOKENS) {
      expect(dom).not.toContain(token);
    }
    app.stop();
  });

  it("shows the empty screen when the queue is drained", async () => {
    const client = new FakeClient();
    const { app } = await startApp(client);
    expect(app.byId("no-tasks").classList.contains("hidden")).toBe(false);
    expect(app.byId("task-view").classList.contains("hidden")).toBe(true);
    app.stop();
  });

  it("keyboard 1..5 switches the active overlay", async () => {
    const client = new FakeClient();
    client.queue = [task("a", "stage2", 5)];
    const { app } = await startApp(client);
    expect(app.session.activeCandidate).toBe("1");
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "3" }));
    expect(app.session.activeCandidate).toBe("3");
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "9" }));
    expect(app.session.activeCandidate).toBe("3");
    app.stop();
  });

  it("network failure shows the retry banner without losing state", async () => {
    const client = new FakeClient();
    client.queue = [task("a", "stage1", 4), task("b", "stage1", 4)];
    const { app } = await startApp(client);
    expect(app.session.task?.task_id).toBe("a");
    client.failNext = true;
    await app.loadNext();
    expect(app.byId("retry-banner").classList.contains("hidden")).toBe(false);
    expect(app.session.task?.task_id).toBe("a"); // state preserved
    await app.loadNext();
    expect(app.session.task?.task_id).toBe("b");
    app.stop();
  });
});

describe("submission flow", () => {
  it("selecting candidate 2 posts the right body and auto-advances", async () => {
    const client = new FakeClient();
    client.queue = [task("a", "stage1", 4), task("b", "stage1", 4)];
    const { app, root } = await startApp(client);

    const btn2 = root.querySelector('[data-testid="candidate-btn"][data-label="2"]');
    (btn2 as HTMLElement).click();
    expect(app.session.activeCandidate).toBe("2");

    click(app, "submit-btn");
    await settle();

    expect(client.submissions).toEqual([{ taskId: "a", reviewer: "md-7", choice: "2" }]);
    expect(app.session.task?.task_id).toBe("b"); // auto-advance
    expect(app.byId("completed-count").textContent).toBe("1");
    app.stop();
  });

  it("conflict responses show a toast and refetch", async () => {
    const client = new FakeClient();
    client.queue = [task("a", "stage1", 4), task("b", "stage1", 4)];
    client.submitResponses = [{ ok: false, code: 409, detail: "stale lock" }];
    const { app } = await startApp(client);
    click(app, "submit-btn");
    await settle();
    expect(app.byId("toast").classList.contains("hidden")).toBe(false);
    expect(app.session.task?.task_id).toBe("b");
    expect(app.session.completedCount).toBe(0); // conflict does not count
    app.stop();
  });

  it("reject-all requires explicit confirmation", async () => {
    const client = new FakeClient();
    client.queue = [task("a", "stage2", 5)];
    const { app } = await startApp(client);

    click(app, "reject-btn");
    expect(app.byId("confirm-strip").classList.contains("hidden")).toBe(false);
    expect(client.submissions).toHaveLength(0); // nothing posted yet

    click(app, "cancel-reject");
    expect(app.byId("confirm-strip").classList.contains("hidden")).toBe(true);
    expect(client.submissions).toHaveLength(0);

    click(app, "reject-btn");
    click(app, "confirm-reject");
    await settle();
    expect(client.submissions).toEqual([
      { taskId: "a", reviewer: "md-7", choice: "REJECT_ALL" },
    ]);
    app.stop();
  });
});

describe("overlay compositing", () => {
  it("opacity 0 renders the radiograph pixel-identically", async () => {
    const client = new FakeClient();
    client.queue = [task("a", "stage1", 4)];
    const { app } = await startApp(client);

    const slider = app.byId("opacity-slider") as HTMLInputElement;
    slider.value = "0";
    slider.dispatchEvent(new Event("input"));

    const base = await client.fetchImage("/api/images/img-a.png");
    const composed = app.composeActive();
    expect(Array.from(composed.data)).toEqual(Array.from(base!.data));
    app.stop();
  });

  it("nonzero opacity changes overlay pixels", async () => {
    const client = new FakeClient();
    client.queue = [task("a", "stage1", 4)];
    const { app } = await startApp(client);
    const base = await client.fetchImage("/api/images/img-a.png");
    const composed = app.composeActive(); // default opacity 0.5
    expect(Array.from(composed.data)).not.toEqual(Array.from(base!.data));
    app.stop();
  });
});

describe("progress view", () => {
  it("renders counts that sum to the campaign size", async () => {
    const client = new FakeClient();
    client.progress = { open: 3, locked: 1, completed: 5, rejected_all: 1, fallback_pending: 1 };
    const { app } = await startApp(client);
    const text = app.byId("progress").textContent ?? "";
    expect(text).toContain("open 3");
    expect(text).toContain("locked 1");
    expect(text).toContain("completed 5");
    expect(text).toContain("rejected 1");
    expect(text).toContain("fallback queue 1");
    const total = 3 + 1 + 5 + 1;
    expect(total).toBe(10);
    app.stop();
  });

  it("highlights the fallback queue only when non-empty", async () => {
    const client = new FakeClient();
    client.progress = { open: 0, locked: 0, completed: 0, rejected_all: 0, fallback_pending: 0 };
    const { app } = await startApp(client);
    expect(app.byId("fallback-count").classList.contains("highlight")).toBe(false);
    client.progress.fallback_pending = 2;
    await app.refreshProgress();
    expect(app.byId("fallback-count").classList.contains("highlight")).toBe(true);
    app.stop();
  });
});
