/** Gateway client; errors surface inline, nothing retries silently. */

import type { AgentResponse } from './types.js';

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number | null = null,
  ) {
    super(message);
  }
}

export interface GatewaySettings {
  baseUrl: string;
  token: string;
}

export async function submitTurn(
  settings: GatewaySettings,
  sessionId: string,
  utterance: string,
  fetchImpl: typeof fetch = fetch,
): Promise<AgentResponse> {
  let response: Response;
  try {
    response = await fetchImpl(
      `${settings.baseUrl.replace(/\/$/, '')}/v1/chat/${encodeURIComponent(sessionId)}`,
      {
        method: 'POST',
        headers: {
          'Content-Type': 'application/json',
          Authorization: `Bearer ${settings.token}`,
        },
        body: JSON.stringify({ utterance }),
      },
    );
  } catch (error) {
    throw new ApiError(`network failure: ${String(error)}`);
  }
  if (response.status === 401) {
    throw new ApiError('unauthorized: check the bearer token', 401);
  }
  if (response.status === 403) {
    throw new ApiError('permission denied for that request', 403);
  }
  if (!response.ok) {
    throw new ApiError(`gateway error (${response.status})`, response.status);
  }
  return (await response.json()) as AgentResponse;
}
