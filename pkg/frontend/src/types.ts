// Wire types for the curation service JSON endpoints.

export type LabelValue = "relevant" | "not_relevant";

export interface BatchItem {
  item_id: string;
  uri: string;
}

export interface Batch {
  batch_id: string;
  items: BatchItem[];
  issued_at: number;
  iteration: number;
}

export interface LabelRecord {
  item_id: string;
  label: LabelValue;
}

export interface HistoryRecord {
  iteration: number;
  labels_used: number;
  f1_val: number | null;
  positives_found: number;
}

export interface SessionStatus {
  phase: "seeding" | "looping" | "verifying" | "done";
  iteration: number;
  labels_used: number;
  budget: number;
  training: boolean;
  history: HistoryRecord[];
  curated_count: number;
}

export interface UiSessionState {
  sessionId: string;
  shareToken: string;
  phase: SessionStatus["phase"];
  iteration: number;
  /** items of the current batch still awaiting a swipe, in display order */
  queue: BatchItem[];
  batchId: string | null;
  labeledThisBatch: number;
  labelsUsed: number;
  budget: number;
  curatedCount: number;
  training: boolean;
  unsynced: number;
  error: string | null;
}
