/**
 * Per-session view state: the current blinded task plus reviewer-local
 * display settings. Candidate order is never re-sorted client-side.
 */

import type { TaskPayload } from "./types.js";

export class TaskSession {
  task: TaskPayload | null = null;
  activeCandidate: string | null = null;
  overlayOpacity = 0.5;
  zoom = 1.0;
  completedCount = 0;

  setTask(task: TaskPayload | null): void {
    this.task = task;
    this.activeCandidate = task && task.candidates.length > 0 ? task.candidates[0].label : null;
  }

  selectCandidate(label: string): boolean {
    if (!this.task) return false;
    if (!this.task.candidates.some((c) => c.label === label)) return false;
    this.activeCandidate = label;
    return true;
  }

  /** Keyboard shortcut: digits 1..5 switch the active overlay. */
  selectByKey(key: string): boolean {
    if (!/^[1-5]$/.test(key)) return false;
    return this.selectCandidate(key);
  }

  recordCompleted(): void {
    this.completedCount += 1;
  }
}
