// Buffered label sender: flush every N labels or after a quiet period,
// whichever comes first.  Failed flushes keep their labels and retry, so
// delivery is at-least-once; the server merges per item, making the net
// effect exactly-once.

import type { LabelRecord } from "./types";

export interface QueueOptions {
  flushAt?: number;
  flushMs?: number;
  onChange?: () => void;
}

export class LabelQueue {
  private buffer: LabelRecord[] = [];
  private inFlight = false;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private readonly flushAt: number;
  private readonly flushMs: number;
  private readonly onChange: () => void;

  constructor(
    private readonly send: (labels: LabelRecord[]) => Promise<void>,
    options: QueueOptions = {},
  ) {
    this.flushAt = options.flushAt ?? 5;
    this.flushMs = options.flushMs ?? 2000;
    this.onChange = options.onChange ?? (() => {});
  }

  /** Labels buffered or being sent; shown as the unsynced badge. */
  get unsynced(): number {
    return this.buffer.length;
  }

  add(record: LabelRecord): void {
    this.buffer.push(record);
    this.onChange();
    if (this.buffer.length >= this.flushAt) {
      void this.flush();
    } else {
      this.schedule();
    }
  }

  /** Drop and return the most recent label that has not started sending. */
  undo(): LabelRecord | null {
    if (this.inFlight || this.buffer.length === 0) return null;
    const record = this.buffer.pop() ?? null;
    this.onChange();
    return record;
  }

  private schedule(): void {
    if (this.timer !== null) return;
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.flush();
    }, this.flushMs);
  }

  async flush(): Promise<boolean> {
    if (this.inFlight || this.buffer.length === 0) return true;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    const batch = this.buffer.slice();
    this.inFlight = true;
    try {
      await this.send(batch);
      this.buffer = this.buffer.slice(batch.length);
      return true;
    } catch {
      this.schedule(); // labels retained; retried on the next tick or add
      return false;
    } finally {
      this.inFlight = false;
      this.onChange();
    }
  }

  /** Keep flushing until the buffer drains (bounded retries). */
  async drain(maxAttempts = 20): Promise<boolean> {
    for (let attempt = 0; attempt < maxAttempts && this.buffer.length > 0; attempt++) {
      await this.flush();
    }
    return this.buffer.length === 0;
  }
}
