// Thin fetch client for the curation service.

import type { Batch, LabelRecord, SessionStatus } from "./types";

export class AuthError extends Error {}

export interface ApiClient {
  getBatch(): Promise<Batch | null>;
  postLabels(batchId: string, labels: LabelRecord[]): Promise<void>;
  getStatus(): Promise<SessionStatus>;
  imageUrl(itemId: string): string;
}

export function createApi(
  baseUrl: string,
  sessionId: string,
  token: string,
  fetchFn: typeof fetch = fetch,
): ApiClient {
  const headers = { Authorization: `Bearer ${token}` };

  async function getBatch(): Promise<Batch | null> {
    const res = await fetchFn(`${baseUrl}/sessions/${sessionId}/batch`, { headers });
    if (res.status === 401) throw new AuthError("invalid session or share token");
    if (res.status === 204) return null;
    if (!res.ok) throw new Error(`batch request failed: ${res.status}`);
    return (await res.json()) as Batch;
  }

  async function postLabels(batchId: string, labels: LabelRecord[]): Promise<void> {
    const res = await fetchFn(`${baseUrl}/sessions/${sessionId}/labels`, {
      method: "POST",
      headers: { ...headers, "Content-Type": "application/json" },
      body: JSON.stringify({ batch_id: batchId, labels }),
    });
    if (res.status === 401) throw new AuthError("invalid session or share token");
    if (!res.ok) throw new Error(`label submit failed: ${res.status}`);
  }

  async function getStatus(): Promise<SessionStatus> {
    const res = await fetchFn(`${baseUrl}/sessions/${sessionId}/status`);
    if (!res.ok) throw new Error(`status request failed: ${res.status}`);
    return (await res.json()) as SessionStatus;
  }

  return {
    getBatch,
    postLabels,
    getStatus,
    imageUrl: (itemId: string) => `${baseUrl}/images/${itemId}`,
  };
}

/** Parse "#/label/{session_id}/{share_token}" from a share link fragment. */
export function parseShareFragment(hash: string): { sessionId: string; shareToken: string } | null {
  const match = /^#\/label\/([^/]+)\/([^/]+)$/.exec(hash);
  if (!match) return null;
  return { sessionId: match[1], shareToken: match[2] };
}
