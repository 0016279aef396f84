/**
 * Chart renderer: ChartConfig JSON in, SVG markup out.
 *
 * Pure string generation with no DOM dependency, so snapshots stay stable.
 * Channel soundness is re-checked client-side; a failing config throws
 * ChartConfigError and the app falls back to the table view.
 */

import type { ChartConfig, Mark } from './types.js';

export class ChartConfigError extends Error {}

const WIDTH = 640;
const HEIGHT = 360;
const MARGIN = { top: 36, right: 20, bottom: 56, left: 64 };
const PLOT_W = WIDTH - MARGIN.left - MARGIN.right;
const PLOT_H = HEIGHT - MARGIN.top - MARGIN.bottom;

const PALETTE = [
  '#2563eb', '#059669', '#d97706', '#dc2626',
  '#7c3aed', '#0d9488', '#f59e0b', '#6366f1',
  '#be185d', '#4b5563', '#84cc16', '#0ea5e9',
];

function esc(text: string): string {
  return text
    .replaceAll('&', '&amp;')
    .replaceAll('<', '&lt;')
    .replaceAll('>', '&gt;')
    .replaceAll('"', '&quot;');
}

function fmt(value: number): string {
  if (Number.isInteger(value)) return value.toLocaleString('en-US');
  return value.toLocaleString('en-US', { maximumFractionDigits: 2 });
}

function round2(value: number): number {
  return Math.round(value * 100) / 100;
}

function color(index: number): string {
  return PALETTE[index % PALETTE.length] as string;
}

interface Frame {
  mark: Mark;
  rows: Record<string, string | number | null>[];
  x: string;
  y: string;
  fill?: string;
}

export function validateConfig(config: ChartConfig): Frame {
  if (!config || !Array.isArray(config.data) || !config.config?.marks?.length) {
    throw new ChartConfigError('malformed chart config');
  }
  if (config.data.length < 3) {
    throw new ChartConfigError('charts need 3+ rows');
  }
  const mark = config.config.marks[0] as Mark;
  const fields = new Set(Object.keys(config.data[0] ?? {}));
  for (const [channel, field] of Object.entries(mark.channels)) {
    if (field !== undefined && !fields.has(field)) {
      throw new ChartConfigError(`channel ${channel} names missing field ${field}`);
    }
  }
  const { x, y } = mark.channels;
  if (!x || !y) {
    throw new ChartConfigError('x and y channels are required');
  }
  return { mark, rows: config.data, x, y, fill: mark.channels.fill };
}

function numericValues(frame: Frame): number[] {
  return frame.rows.map((row) => {
    const value = row[frame.y];
    return typeof value === 'number' ? value : 0;
  });
}

function yScale(values: number[]): (v: number) => number {
  const max = Math.max(...values, 0);
  const min = Math.min(...values, 0);
  const span = max - min || 1;
  return (v: number) => MARGIN.top + PLOT_H - ((v - min) / span) * PLOT_H;
}

function yTicks(values: number[]): { value: number; py: number }[] {
  const max = Math.max(...values, 0);
  const min = Math.min(...values, 0);
  const scale = yScale(values);
  const ticks = [];
  for (let i = 0; i <= 4; i++) {
    const value = min + ((max - min) / 4) * i;
    ticks.push({ value: round2(value), py: round2(scale(value)) });
  }
  return ticks;
}

function axisLabels(frame: Frame): string {
  const xLabel = esc(frame.x);
  const yLabel = esc(frame.y);
  return (
    `<text class="axis-label" x="${MARGIN.left + PLOT_W / 2}" y="${HEIGHT - 8}" ` +
    `text-anchor="middle">${xLabel}</text>` +
    `<text class="axis-label" x="14" y="${MARGIN.top + PLOT_H / 2}" text-anchor="middle" ` +
    `transform="rotate(-90 14 ${MARGIN.top + PLOT_H / 2})">${yLabel}</text>`
  );
}

function gridAndTicks(values: number[]): string {
  return yTicks(values)
    .map(
      (t) =>
        `<line x1="${MARGIN.left}" y1="${t.py}" x2="${MARGIN.left + PLOT_W}" y2="${t.py}" ` +
        `stroke="#e5e7eb"/>` +
        `<text x="${MARGIN.left - 8}" y="${t.py + 4}" text-anchor="end" class="tick">` +
        `${fmt(t.value)}</text>`,
    )
    .join('');
}

function xBand(frame: Frame): { label: string; cx: number; bw: number }[] {
  const n = frame.rows.length;
  const bw = PLOT_W / n;
  return frame.rows.map((row, i) => ({
    label: String(row[frame.x] ?? ''),
    cx: round2(MARGIN.left + bw * i + bw / 2),
    bw: round2(bw),
  }));
}

function xTickLabels(frame: Frame): string {
  const band = xBand(frame);
  // Thin dense tick labels so long series stay legible.
  const step = Math.max(1, Math.ceil(band.length / 12));
  return band
    .filter((_, i) => i % step === 0)
    .map(
      (b) =>
        `<text x="${b.cx}" y="${MARGIN.top + PLOT_H + 18}" text-anchor="middle" class="tick">` +
        `${esc(b.label)}</text>`,
    )
    .join('');
}

function renderBars(frame: Frame): string {
  const values = numericValues(frame);
  const scale = yScale(values);
  const zero = scale(0);
  const band = xBand(frame);
  const bars = band
    .map((b, i) => {
      const v = values[i] as number;
      const py = scale(v);
      const top = Math.min(py, zero);
      const height = round2(Math.abs(zero - py));
      return (
        `<rect x="${round2(b.cx - b.bw * 0.35)}" y="${round2(top)}" ` +
        `width="${round2(b.bw * 0.7)}" height="${height}" fill="${color(i)}">` +
        `<title>${esc(b.label)}: ${fmt(v)}</title></rect>`
      );
    })
    .join('');
  return gridAndTicks(values) + bars + xTickLabels(frame) + axisLabels(frame);
}

function linePath(frame: Frame): string {
  const values = numericValues(frame);
  const scale = yScale(values);
  const band = xBand(frame);
  return band
    .map((b, i) => `${i === 0 ? 'M' : 'L'}${b.cx},${round2(scale(values[i] as number))}`)
    .join(' ');
}

function renderLine(frame: Frame, area: boolean): string {
  const values = numericValues(frame);
  const scale = yScale(values);
  const band = xBand(frame);
  const path = linePath(frame);
  let body = '';
  if (area) {
    const baseline = round2(scale(Math.min(...values, 0)));
    const first = band[0]!.cx;
    const last = band[band.length - 1]!.cx;
    body += `<path d="${path} L${last},${baseline} L${first},${baseline} Z" ` +
      `fill="${color(0)}" opacity="0.25"/>`;
  }
  body += `<path d="${path}" fill="none" stroke="${color(0)}" stroke-width="2"/>`;
  body += band
    .map(
      (b, i) =>
        `<circle cx="${b.cx}" cy="${round2(scale(values[i] as number))}" r="2.5" ` +
        `fill="${color(0)}"><title>${esc(b.label)}: ${fmt(values[i] as number)}</title></circle>`,
    )
    .join('');
  return gridAndTicks(values) + body + xTickLabels(frame) + axisLabels(frame);
}

function renderDots(frame: Frame): string {
  const values = numericValues(frame);
  const scale = yScale(values);
  const band = xBand(frame);
  const dots = band
    .map(
      (b, i) =>
        `<circle cx="${b.cx}" cy="${round2(scale(values[i] as number))}" r="4" ` +
        `fill="${color(i)}" opacity="0.85">` +
        `<title>${esc(b.label)}: ${fmt(values[i] as number)}</title></circle>`,
    )
    .join('');
  return gridAndTicks(values) + dots + xTickLabels(frame) + axisLabels(frame);
}

function renderDonut(frame: Frame): string {
  const values = numericValues(frame);
  const total = values.reduce((a, b) => a + Math.max(b, 0), 0);
  if (total <= 0) {
    throw new ChartConfigError('donut needs positive values');
  }
  const cx = MARGIN.left + PLOT_H / 2;
  const cy = MARGIN.top + PLOT_H / 2;
  const outer = PLOT_H / 2;
  const inner = outer * 0.55;
  let angle = -Math.PI / 2;
  const arcs = frame.rows
    .map((row, i) => {
      const value = Math.max(values[i] as number, 0);
      const sweep = (value / total) * Math.PI * 2;
      const a0 = angle;
      const a1 = angle + sweep;
      angle = a1;
      const large = sweep > Math.PI ? 1 : 0;
      const p = (r: number, a: number) =>
        `${round2(cx + r * Math.cos(a))},${round2(cy + r * Math.sin(a))}`;
      const label = String(row[frame.x] ?? '');
      return (
        `<path d="M${p(outer, a0)} A${outer},${outer} 0 ${large} 1 ${p(outer, a1)} ` +
        `L${p(inner, a1)} A${inner},${inner} 0 ${large} 0 ${p(inner, a0)} Z" ` +
        `fill="${color(i)}"><title>${esc(label)}: ${fmt(value)}</title></path>`
      );
    })
    .join('');
  const legend = frame.rows
    .map((row, i) => {
      const label = String(row[frame.x] ?? '');
      const ly = MARGIN.top + 10 + i * 20;
      return (
        `<rect x="${cx + outer + 30}" y="${ly - 9}" width="12" height="12" fill="${color(i)}"/>` +
        `<text x="${cx + outer + 48}" y="${ly + 1}" class="tick">` +
        `${esc(label)} (${fmt(values[i] as number)})</text>`
      );
    })
    .join('');
  return arcs + legend;
}

function renderHeatmap(frame: Frame): string {
  const fillField = frame.fill;
  if (!fillField) {
    throw new ChartConfigError('heatmap needs a fill channel');
  }
  const xs = [...new Set(frame.rows.map((row) => String(row[frame.x] ?? '')))];
  const ys = [...new Set(frame.rows.map((row) => String(row[frame.y] ?? '')))];
  const values = frame.rows.map((row) => {
    const v = row[fillField];
    return typeof v === 'number' ? v : 0;
  });
  const max = Math.max(...values, 1);
  const cw = PLOT_W / xs.length;
  const ch = PLOT_H / ys.length;
  const cells = frame.rows
    .map((row, i) => {
      const xi = xs.indexOf(String(row[frame.x] ?? ''));
      const yi = ys.indexOf(String(row[frame.y] ?? ''));
      const v = values[i] as number;
      const opacity = round2(0.15 + 0.85 * (v / max));
      return (
        `<rect x="${round2(MARGIN.left + xi * cw)}" y="${round2(MARGIN.top + yi * ch)}" ` +
        `width="${round2(cw - 2)}" height="${round2(ch - 2)}" fill="#2563eb" ` +
        `opacity="${opacity}"><title>${esc(String(row[frame.x]))} / ` +
        `${esc(String(row[frame.y]))}: ${fmt(v)}</title></rect>`
      );
    })
    .join('');
  const xLabels = xs
    .map(
      (label, i) =>
        `<text x="${round2(MARGIN.left + i * cw + cw / 2)}" y="${MARGIN.top + PLOT_H + 18}" ` +
        `text-anchor="middle" class="tick">${esc(label)}</text>`,
    )
    .join('');
  const yLabels = ys
    .map(
      (label, i) =>
        `<text x="${MARGIN.left - 8}" y="${round2(MARGIN.top + i * ch + ch / 2 + 4)}" ` +
        `text-anchor="end" class="tick">${esc(label)}</text>`,
    )
    .join('');
  return cells + xLabels + yLabels + axisLabels(frame);
}

/** Render a chart config to standalone SVG markup. */
export function renderChart(config: ChartConfig): string {
  const frame = validateConfig(config);
  let body: string;
  switch (frame.mark.type) {
    case 'bar':
      body = renderBars(frame);
      break;
    case 'line':
      body = renderLine(frame, false);
      break;
    case 'area':
      body = renderLine(frame, true);
      break;
    case 'dot':
      body = renderDots(frame);
      break;
    case 'donut':
      body = renderDonut(frame);
      break;
    case 'heatmap':
      body = renderHeatmap(frame);
      break;
    default:
      throw new ChartConfigError(`unknown mark type ${String(frame.mark.type)}`);
  }
  const title = esc(config.config.title ?? '');
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${WIDTH} ${HEIGHT}" ` +
    `role="img" class="chart chart-${frame.mark.type}">` +
    `<style>.tick{font:11px sans-serif;fill:#4b5563}` +
    `.axis-label{font:12px sans-serif;fill:#111827}` +
    `.chart-title{font:600 14px sans-serif;fill:#111827}</style>` +
    `<text x="${MARGIN.left}" y="20" class="chart-title">${title}</text>` +
    body +
    `</svg>`
  );
}
