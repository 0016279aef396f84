/** Gateway client error mapping over a stubbed fetch. */

import { describe, expect, it } from 'vitest';

import { ApiError, submitTurn } from '../src/api.js';

const SETTINGS = { baseUrl: 'http://gw.test/', token: 'tok' };

function fakeFetch(status: number, body: unknown): typeof fetch {
  return (async () =>
    new Response(JSON.stringify(body), {
      status,
      headers: { 'Content-Type': 'application/json' },
    })) as typeof fetch;
}

describe('submitTurn', () => {
  it('posts the utterance with the bearer token', async () => {
    let captured: { url: string; init: RequestInit } | null = null;
    const spy: typeof fetch = async (url, init) => {
      captured = { url: String(url), init: init ?? {} };
      return new Response(JSON.stringify({ text: 'ok', status: 'answered' }), { status: 200 });
    };
    const response = await submitTurn(SETTINGS, 's 1', 'hello metrics', spy);
    expect(response.status).toBe('answered');
    expect(captured!.url).toBe('http://gw.test/v1/chat/s%201');
    expect((captured!.init.headers as Record<string, string>).Authorization).toBe('Bearer tok');
    expect(JSON.parse(String(captured!.init.body))).toEqual({ utterance: 'hello metrics' });
  });

  it('maps 401 and 403 to explicit errors', async () => {
    await expect(
      submitTurn(SETTINGS, 's', 'q', fakeFetch(401, { error: {} })),
    ).rejects.toMatchObject({ status: 401 });
    await expect(
      submitTurn(SETTINGS, 's', 'q', fakeFetch(403, { error: {} })),
    ).rejects.toThrow(/permission denied/);
  });

  it('wraps network failures without retrying', async () => {
    let calls = 0;
    const failing: typeof fetch = async () => {
      calls += 1;
      throw new TypeError('fetch failed');
    };
    await expect(submitTurn(SETTINGS, 's', 'q', failing)).rejects.toBeInstanceOf(ApiError);
    expect(calls).toBe(1);
  });
});
