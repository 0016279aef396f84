/** DOM wiring: the chat panel, result rendering, and clarification buttons. */

import { ApiError, submitTurn, type GatewaySettings } from './api.js';
import { ChartConfigError, renderChart } from './chart.js';
import {
  applyFailure,
  applyResponse,
  applyUserTurn,
  clarificationFor,
  newSession,
  type UiSession,
} from './session.js';
import { renderTable } from './table.js';

function esc(text: string): string {
  return text
    .replaceAll('&', '&amp;')
    .replaceAll('<', '&lt;')
    .replaceAll('>', '&gt;')
    .replaceAll('"', '&quot;');
}

/** Assistant entry body: text, then table, then chart (or fallback notice). */
export function renderEntryHtml(session: UiSession, index: number): string {
  const entry = session.transcript[index];
  if (!entry) return '';
  if (entry.role === 'user') {
    return `<div class="turn user"><p>${esc(entry.text)}</p></div>`;
  }
  const parts: string[] = [`<p class="${entry.notice ? 'error' : ''}">${esc(entry.text)}</p>`];
  const response = entry.response;
  if (response?.table) {
    parts.push(renderTable(response.table));
  }
  if (response?.chart) {
    try {
      parts.push(`<figure class="chart-box">${renderChart(response.chart)}</figure>`);
    } catch (error) {
      if (error instanceof ChartConfigError) {
        // Invalid config: the table above remains the view; say why.
        parts.push(`<p class="notice">chart unavailable (${esc(error.message)}); showing table</p>`);
        if (!response.table) {
          parts.push('<p class="notice">no table payload either</p>');
        }
      } else {
        throw error;
      }
    }
  }
  const clarification = clarificationFor(session, index);
  if (clarification) {
    const buttons = clarification.candidates
      .map(
        (candidate) =>
          `<button class="candidate" data-name="${esc(candidate.name)}">` +
          `${esc(candidate.name)}</button>`,
      )
      .join('');
    parts.push(`<div class="candidates">${buttons}</div>`);
  }
  return `<div class="turn assistant">${parts.join('')}</div>`;
}

export function renderTranscriptHtml(session: UiSession): string {
  return session.transcript.map((_, i) => renderEntryHtml(session, i)).join('');
}

function mount(): void {
  const transcriptEl = document.getElementById('transcript') as HTMLElement;
  const form = document.getElementById('composer') as HTMLFormElement;
  const input = document.getElementById('utterance') as HTMLInputElement;
  const baseUrlEl = document.getElementById('base-url') as HTMLInputElement;
  const tokenEl = document.getElementById('token') as HTMLInputElement;

  let session = newSession(`web-${Date.now().toString(36)}`);

  const settings = (): GatewaySettings => ({
    baseUrl: baseUrlEl.value || 'http://127.0.0.1:8080',
    token: tokenEl.value,
  });

  const redraw = (): void => {
    transcriptEl.innerHTML = renderTranscriptHtml(session);
    transcriptEl.scrollTop = transcriptEl.scrollHeight;
    input.disabled = session.busy;
    for (const button of transcriptEl.querySelectorAll<HTMLButtonElement>('button.candidate')) {
      button.addEventListener('click', () => {
        // Submit the candidate's exact name as the next turn.
        void send(button.dataset.name ?? '');
      });
    }
  };

  const send = async (text: string): Promise<void> => {
    const trimmed = text.trim();
    if (!trimmed || session.busy) return;
    session = applyUserTurn(session, trimmed);
    redraw();
    try {
      const response = await submitTurn(settings(), session.sessionId, trimmed);
      session = applyResponse(session, response);
    } catch (error) {
      const message = error instanceof ApiError ? error.message : 'unexpected client error';
      session = applyFailure(session, message);
    }
    redraw();
  };

  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const text = input.value;
    input.value = '';
    void send(text);
  });

  redraw();
}

if (typeof document !== 'undefined' && document.getElementById('composer')) {
  mount();
}
