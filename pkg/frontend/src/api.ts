/** Typed client for the chat-service JSON endpoints. */

export interface SnapshotInfo {
  id: string;
  variant: string;
  attributes: string[];
  step: number;
}

export interface TurnView {
  speaker: string;
  text: string;
}

export interface Candidate {
  text: string;
  score: number;
}

export interface SessionCreated {
  session_id: string;
  attributes: string[];
}

export interface SessionView {
  session_id: string;
  snapshot_id: string;
  created: number;
  turns: TurnView[];
}

export interface MessageResponse {
  responses: Candidate[];
  ranked: boolean;
}

export interface WhatIfResponse {
  per_attribute: Record<string, Candidate>;
}

/** Service errors arrive as JSON {code, message}. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const res = await fetch(`${base}${path}`, init);
  if (!res.ok) {
    let code = "error";
    let message = `request failed with status ${res.status}`;
    try {
      const body = await res.json();
      if (typeof body.code === "string") code = body.code;
      if (typeof body.message === "string") message = body.message;
    } catch {
      // non-JSON error body; keep the status-derived message
    }
    throw new ApiError(res.status, code, message);
  }
  return res.json() as Promise<T>;
}

function post<T>(base: string, path: string, body: unknown): Promise<T> {
  return request<T>(base, path, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
}

export class ChatApi {
  constructor(private readonly base = "") {}

  listSnapshots(): Promise<{ snapshots: SnapshotInfo[] }> {
    return request(this.base, "/v1/snapshots");
  }

  createSession(snapshotId: string): Promise<SessionCreated> {
    return post(this.base, "/v1/sessions", { snapshot_id: snapshotId });
  }

  getSession(sessionId: string): Promise<SessionView> {
    return request(this.base, `/v1/sessions/${sessionId}`);
  }

  sendMessage(
    sessionId: string,
    body: { speaker: string; text: string; respond_as: string; num_candidates?: number },
  ): Promise<MessageResponse> {
    return post(this.base, `/v1/sessions/${sessionId}/message`, body);
  }

  runWhatIf(
    sessionId: string,
    body: { text?: string; speaker?: string; num_candidates?: number },
  ): Promise<WhatIfResponse> {
    return post(this.base, `/v1/sessions/${sessionId}/whatif`, body);
  }
}
