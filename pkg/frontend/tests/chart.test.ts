/**
 * Chart renderer snapshots over golden configs produced by the backend's
 * chart pipeline against the committed smoke bundle.
 */

import { readFileSync } from 'node:fs';
import { dirname, join } from 'node:path';
import { fileURLToPath } from 'node:url';
import { describe, expect, it } from 'vitest';

import { ChartConfigError, renderChart, validateConfig } from '../src/chart.js';
import type { ChartConfig } from '../src/types.js';

const here = dirname(fileURLToPath(import.meta.url));

function fixture(name: string): ChartConfig {
  return JSON.parse(readFileSync(join(here, 'fixtures', `${name}.json`), 'utf-8'));
}

describe('renderChart golden fixtures', () => {
  it('renders the weekly line chart with week ticks on x', () => {
    const svg = renderChart(fixture('line'));
    expect(svg).toContain('chart-line');
    expect(svg).toContain('<path d="M'); // one line path through the series
    expect(svg).toContain('2025-W01');
    expect(svg).toContain('>week</text>'); // axis labeled from the channel field
    expect(svg).toContain('>avg_handle_time</text>');
    expect(svg).toMatchSnapshot();
  });

  it('renders the leaderboard bar chart', () => {
    const svg = renderChart(fixture('bar'));
    expect(svg).toContain('chart-bar');
    expect((svg.match(/<rect /g) ?? []).length).toBeGreaterThanOrEqual(5);
    expect(svg).toContain('Seattle Support');
    expect(svg).toMatchSnapshot();
  });

  it('renders the donut with one arc and one legend row per category', () => {
    const config = fixture('donut');
    const svg = renderChart(config);
    expect(svg).toContain('chart-donut');
    const arcs = (svg.match(/<path d="M/g) ?? []).length;
    expect(arcs).toBe(config.data.length);
    for (const row of config.data) {
      expect(svg).toContain(String(row['channel']));
    }
    expect(svg).toMatchSnapshot();
  });

  it('is deterministic', () => {
    expect(renderChart(fixture('line'))).toBe(renderChart(fixture('line')));
  });

  it('displays masked pseudonyms verbatim', () => {
    // Mirror what the backend's chart masking emits: pseudonyms in both the
    // data rows and the title, with raw names gone entirely.
    const config = fixture('bar');
    const names = config.data.map((row) => String(row['target']));
    let title = config.config.title;
    names.forEach((name, i) => {
      title = title.replaceAll(name, `Group ${i + 1}`);
    });
    const pseudonymized: ChartConfig = {
      ...config,
      data: config.data.map((row, i) => ({ ...row, target: `Group ${i + 1}` })),
      config: { ...config.config, title },
    };
    const svg = renderChart(pseudonymized);
    expect(svg).toContain('Group 1');
    expect(svg).not.toContain('Seattle Support');
  });
});

describe('channel soundness', () => {
  it('rejects configs whose channels name missing fields', () => {
    const broken = fixture('line');
    broken.config.marks[0]!.channels.y = 'not_a_field';
    expect(() => validateConfig(broken)).toThrow(ChartConfigError);
    expect(() => renderChart(broken)).toThrow(/missing field/);
  });

  it('rejects under three rows', () => {
    const tiny = fixture('donut');
    tiny.data = tiny.data.slice(0, 2);
    expect(() => renderChart(tiny)).toThrow(/3\+/);
  });

  it('rejects malformed payloads', () => {
    expect(() => renderChart({} as ChartConfig)).toThrow(ChartConfigError);
    expect(() =>
      renderChart({ data: [], config: { title: '', marks: [] } } as unknown as ChartConfig),
    ).toThrow(ChartConfigError);
  });

  it('escapes markup in labels', () => {
    const sneaky = fixture('donut');
    sneaky.data = sneaky.data.map((row, i) =>
      i === 0 ? { ...row, channel: '<script>alert(1)</script>' } : row,
    );
    const svg = renderChart(sneaky);
    expect(svg).not.toContain('<script>');
    expect(svg).toContain('&lt;script&gt;');
  });
});
