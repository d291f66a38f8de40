// Session orchestration: one image at a time, swipe/arrow labeling with an
// optimistic advance, batched label delivery, and loop-progress tracking.

import type { ApiClient } from "./api";
import { AuthError } from "./api";
import { LabelQueue } from "./queue";
import type { Batch, BatchItem, LabelValue, UiSessionState } from "./types";

export type SwipeDirection = "left" | "right";

/** right swipe / ArrowRight marks relevant; left marks not relevant. */
export function directionToLabel(direction: SwipeDirection): LabelValue {
  return direction === "right" ? "relevant" : "not_relevant";
}

export function keyToDirection(key: string): SwipeDirection | null {
  if (key === "ArrowRight") return "right";
  if (key === "ArrowLeft") return "left";
  return null;
}

export interface SessionOptions {
  flushAt?: number;
  flushMs?: number;
  onUpdate?: (state: UiSessionState) => void;
}

export class SwipeSession {
  private queue: BatchItem[] = [];
  private batch: Batch | null = null;
  private labels: LabelQueue;
  private state: UiSessionState;
  private readonly onUpdate: (state: UiSessionState) => void;

  constructor(
    private readonly api: ApiClient,
    sessionId: string,
    shareToken: string,
    options: SessionOptions = {},
  ) {
    this.onUpdate = options.onUpdate ?? (() => {});
    this.state = {
      sessionId,
      shareToken,
      phase: "seeding",
      iteration: 0,
      queue: [],
      batchId: null,
      labeledThisBatch: 0,
      labelsUsed: 0,
      budget: 1,
      curatedCount: 0,
      training: false,
      unsynced: 0,
      error: null,
    };
    this.labels = new LabelQueue(
      (records) => {
        if (this.batch === null) return Promise.resolve();
        return this.api.postLabels(this.batch.batch_id, records);
      },
      {
        flushAt: options.flushAt,
        flushMs: options.flushMs,
        onChange: () => this.emit(),
      },
    );
  }

  snapshot(): UiSessionState {
    return { ...this.state, queue: [...this.queue], unsynced: this.labels.unsynced };
  }

  private emit(): void {
    this.onUpdate(this.snapshot());
  }

  currentItem(): BatchItem | null {
    return this.queue[0] ?? null;
  }

  /** Fetch the current batch (or the done/training state) and render. */
  async join(): Promise<void> {
    try {
      await this.refreshStatus();
      const batch = await this.api.getBatch();
      this.acceptBatch(batch);
    } catch (err) {
      // invalid tokens land on the error screen; no retry loop
      this.state.error = err instanceof AuthError
        ? "This share link is not valid (or has been revoked)."
        : `Could not reach the session: ${String(err)}`;
      this.emit();
      return;
    }
    this.emit();
  }

  private acceptBatch(batch: Batch | null): void {
    if (batch === null) {
      this.batch = null;
      this.queue = [];
      this.state.batchId = null;
      this.state.training = this.state.phase !== "done";
      return;
    }
    if (batch.batch_id !== this.state.batchId) {
      this.batch = batch;
      this.queue = [...batch.items];
      this.state.batchId = batch.batch_id;
      this.state.iteration = batch.iteration;
      this.state.labeledThisBatch = 0;
      this.state.training = false;
    }
  }

  /** Label the displayed item and advance optimistically. */
  swipe(direction: SwipeDirection): boolean {
    const item = this.currentItem();
    if (item === null) return false;
    this.queue.shift();
    this.state.labeledThisBatch += 1;
    this.labels.add({ item_id: item.item_id, label: directionToLabel(direction) });
    this.emit();
    return true;
  }

  keydown(key: string): boolean {
    const direction = keyToDirection(key);
    return direction === null ? false : this.swipe(direction);
  }

  /** Take back the last unflushed label; its item returns to the front. */
  undo(): boolean {
    const record = this.labels.undo();
    if (record === null) return false;
    const item = this.batch?.items.find((i) => i.item_id === record.item_id);
    if (item !== undefined) {
      this.queue.unshift(item);
      this.state.labeledThisBatch -= 1;
    }
    this.emit();
    return true;
  }

  private async refreshStatus(): Promise<void> {
    const status = await this.api.getStatus();
    this.state.phase = status.phase;
    this.state.labelsUsed = status.labels_used;
    this.state.budget = status.budget;
    this.state.curatedCount = status.curated_count;
    this.state.iteration = status.iteration;
    if (status.training) this.state.training = true;
  }

  /**
   * One synchronization step: push pending labels, then look for the next
   * batch when the current one is exhausted.  Returns true when the session
   * is done.
   */
  async sync(): Promise<boolean> {
    await this.labels.flush();
    if (this.queue.length === 0 && this.labels.unsynced === 0) {
      try {
        await this.refreshStatus();
        if (this.state.phase === "done") {
          this.batch = null;
          this.state.training = false;
          this.emit();
          return true;
        }
        const batch = await this.api.getBatch();
        this.acceptBatch(batch);
      } catch (err) {
        if (err instanceof AuthError) {
          this.state.error = "This share link is not valid (or has been revoked).";
        }
        // transient failures keep the last rendered state
      }
    }
    this.emit();
    return this.state.phase === "done";
  }

  /** Progress through the label budget, in [0, 1]. */
  progress(): number {
    if (this.state.budget <= 0) return 0;
    return Math.min(1, this.state.labelsUsed / this.state.budget);
  }
}
