/**
 * UI session state as a pure reducer.
 *
 * The transcript is append-only; server state is the source of truth.
 * pending_clarification mirrors the server's one-question budget: it is set
 * only by a needs_clarification response and cleared by the very next turn,
 * so candidate buttons can never render for two prompts in one flow.
 */

import type { AgentResponse, Clarification } from './types.js';

export interface TranscriptEntry {
  role: 'user' | 'assistant';
  text: string;
  response?: AgentResponse;
  notice?: string;
}

export interface UiSession {
  sessionId: string;
  transcript: TranscriptEntry[];
  pendingClarification: Clarification | null;
  busy: boolean;
}

export function newSession(sessionId: string): UiSession {
  return { sessionId, transcript: [], pendingClarification: null, busy: false };
}

export function applyUserTurn(session: UiSession, text: string): UiSession {
  return {
    ...session,
    transcript: [...session.transcript, { role: 'user', text }],
    pendingClarification: null, // one answer consumes the question
    busy: true,
  };
}

export function applyResponse(session: UiSession, response: AgentResponse): UiSession {
  const pending =
    response.status === 'needs_clarification' && response.clarification
      ? response.clarification
      : null;
  return {
    ...session,
    transcript: [...session.transcript, { role: 'assistant', text: response.text, response }],
    pendingClarification: pending,
    busy: false,
  };
}

export function applyFailure(session: UiSession, message: string): UiSession {
  return {
    ...session,
    transcript: [
      ...session.transcript,
      { role: 'assistant', text: message, notice: 'request failed' },
    ],
    pendingClarification: null,
    busy: false,
  };
}

/** Buttons belong only to the newest entry while its question is open. */
export function clarificationFor(session: UiSession, entryIndex: number): Clarification | null {
  if (!session.pendingClarification) return null;
  if (entryIndex !== session.transcript.length - 1) return null;
  return session.pendingClarification;
}
