/** Pure view state. Every mutation is an event through reduce(), so replaying
 * an event log reproduces the view exactly; service payloads ride inside the
 * events and are never reshaped beyond ordering the what-if grid. */

import type { Candidate, TurnView } from "./api";

export interface WhatIfCell {
  persona: string;
  text: string;
  score: number;
}

export interface ServiceError {
  code: string;
  message: string;
}

export interface AppState {
  snapshots: Array<{ id: string; variant: string }>;
  snapshotId: string | null;
  sessionId: string | null;
  /** Persona options, exactly as the service returned them. */
  personas: string[];
  /** Who the human speaks as. */
  speaker: string;
  /** Persona the model answers as on the next send. */
  respondAs: string;
  draft: string;
  transcript: TurnView[];
  /** Optimistic bubble for an in-flight send; dropped again on failure. */
  pending: TurnView | null;
  /** Ranked candidates from the last successful send, best first. */
  candidates: Candidate[];
  whatif: WhatIfCell[];
  banner: ServiceError | null;
  busy: boolean;
}

export type Event =
  | { type: "snapshots_loaded"; snapshots: Array<{ id: string; variant: string }> }
  | { type: "snapshot_picked"; id: string }
  | { type: "session_started"; sessionId: string; attributes: string[] }
  | { type: "draft_changed"; text: string }
  | { type: "speaker_picked"; persona: string }
  | { type: "respond_as_picked"; persona: string }
  | { type: "send_requested" }
  | { type: "send_ok"; responses: Candidate[] }
  | { type: "send_failed"; error: ServiceError }
  | { type: "whatif_requested" }
  | { type: "whatif_ok"; perAttribute: Record<string, Candidate> }
  | { type: "whatif_failed"; error: ServiceError }
  | { type: "cell_adopted"; persona: string };

export function initialState(): AppState {
  return {
    snapshots: [],
    snapshotId: null,
    sessionId: null,
    personas: [],
    speaker: "",
    respondAs: "",
    draft: "",
    transcript: [],
    pending: null,
    candidates: [],
    whatif: [],
    banner: null,
    busy: false,
  };
}

export function reduce(state: AppState, event: Event): AppState {
  switch (event.type) {
    case "snapshots_loaded": {
      const first = event.snapshots[0];
      return {
        ...state,
        snapshots: event.snapshots,
        snapshotId: state.snapshotId ?? (first ? first.id : null),
      };
    }
    case "snapshot_picked":
      return { ...state, snapshotId: event.id };
    case "session_started":
      return {
        ...state,
        sessionId: event.sessionId,
        personas: event.attributes,
        speaker: event.attributes[0] ?? "",
        respondAs: event.attributes[1] ?? event.attributes[0] ?? "",
        transcript: [],
        pending: null,
        candidates: [],
        whatif: [],
        banner: null,
        busy: false,
      };
    case "draft_changed":
      return { ...state, draft: event.text };
    case "speaker_picked":
      return { ...state, speaker: event.persona };
    case "respond_as_picked":
      return { ...state, respondAs: event.persona };
    case "send_requested":
      return {
        ...state,
        pending: { speaker: state.speaker, text: state.draft },
        banner: null,
        busy: true,
      };
    case "send_ok": {
      const top = event.responses[0];
      const user = state.pending;
      const grown: TurnView[] = user === null ? state.transcript : [
        ...state.transcript,
        user,
        ...(top ? [{ speaker: state.respondAs, text: top.text }] : []),
      ];
      return {
        ...state,
        transcript: grown,
        pending: null,
        candidates: event.responses,
        draft: "",
        busy: false,
      };
    }
    case "send_failed":
      // transcript untouched, draft preserved for a retry
      return { ...state, pending: null, banner: event.error, busy: false };
    case "whatif_requested":
      return { ...state, banner: null, busy: true };
    case "whatif_ok":
      return {
        ...state,
        // grid rows follow the selector order, not object-key order
        whatif: state.personas
          .filter((p) => p in event.perAttribute)
          .map((p) => {
            const cell = event.perAttribute[p]!;
            return { persona: p, text: cell.text, score: cell.score };
          }),
        busy: false,
      };
    case "whatif_failed":
      return { ...state, banner: event.error, busy: false };
    case "cell_adopted":
      return { ...state, respondAs: event.persona };
  }
}

export function replay(events: Event[]): AppState {
  return events.reduce(reduce, initialState());
}
