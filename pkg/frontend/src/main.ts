/** Wiring: events flow user -> reduce -> render; service calls happen in the
 * async handlers and feed their payloads back in as events. At most one
 * request is in flight (send/what-if disable while busy). */

import { ApiError, ChatApi } from "./api";
import { initialState, reduce, type AppState, type Event } from "./state";
import { render, type Handlers } from "./view";

function asServiceError(err: unknown) {
  if (err instanceof ApiError) return { code: err.code, message: err.message };
  return { code: "network", message: String(err) };
}

export function boot(root: HTMLElement, apiBase = ""): { api: ChatApi; state(): AppState } {
  const api = new ChatApi(apiBase);
  let state = initialState();

  const dispatch = (event: Event) => {
    state = reduce(state, event);
    render(root, state, handlers);
  };

  const handlers: Handlers = {
    onSnapshotPicked: (id) => dispatch({ type: "snapshot_picked", id }),
    onDraftChanged: (text) => dispatch({ type: "draft_changed", text }),
    onSpeakerPicked: (persona) => dispatch({ type: "speaker_picked", persona }),
    onRespondAsPicked: (persona) => dispatch({ type: "respond_as_picked", persona }),
    onAdopt: (persona) => dispatch({ type: "cell_adopted", persona }),

    onStart: async () => {
      if (state.snapshotId === null) return;
      try {
        const made = await api.createSession(state.snapshotId);
        dispatch({
          type: "session_started",
          sessionId: made.session_id,
          attributes: made.attributes,
        });
      } catch (err) {
        dispatch({ type: "send_failed", error: asServiceError(err) });
      }
    },

    onSend: async () => {
      if (state.sessionId === null || state.busy) return;
      const body = { speaker: state.speaker, text: state.draft, respond_as: state.respondAs };
      dispatch({ type: "send_requested" });
      try {
        const res = await api.sendMessage(state.sessionId, body);
        dispatch({ type: "send_ok", responses: res.responses });
      } catch (err) {
        dispatch({ type: "send_failed", error: asServiceError(err) });
      }
    },

    onWhatIf: async () => {
      if (state.sessionId === null || state.busy) return;
      const draft = state.draft;
      dispatch({ type: "whatif_requested" });
      try {
        const res = await api.runWhatIf(state.sessionId, draft ? { text: draft } : {});
        dispatch({ type: "whatif_ok", perAttribute: res.per_attribute });
      } catch (err) {
        dispatch({ type: "whatif_failed", error: asServiceError(err) });
      }
    },
  };

  render(root, state, handlers);
  api.listSnapshots()
    .then((res) => dispatch({
      type: "snapshots_loaded",
      snapshots: res.snapshots.map((s) => ({ id: s.id, variant: s.variant })),
    }))
    .catch((err) => dispatch({ type: "send_failed", error: asServiceError(err) }));

  return { api, state: () => state };
}

const mount = typeof document !== "undefined" ? document.getElementById("app") : null;
if (mount) boot(mount);
