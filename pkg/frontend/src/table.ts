/** Result-table rendering; every cell value comes straight from the payload. */

import type { TabularResult } from './types.js';

function esc(text: string): string {
  return text
    .replaceAll('&', '&amp;')
    .replaceAll('<', '&lt;')
    .replaceAll('>', '&gt;')
    .replaceAll('"', '&quot;');
}

function cell(value: string | number | null): string {
  if (value === null) return '<td class="null">–</td>';
  if (typeof value === 'number') {
    const text = Number.isInteger(value)
      ? value.toLocaleString('en-US')
      : value.toLocaleString('en-US', { maximumFractionDigits: 2 });
    return `<td class="num">${text}</td>`;
  }
  return `<td>${esc(value)}</td>`;
}

export function renderTable(table: TabularResult, limit = 50): string {
  const masked = new Set(table.masked_columns ?? []);
  const head = table.schema
    .map((col) => {
      const flag = masked.has(col.name) ? ' class="masked" title="masked by policy"' : '';
      return `<th${flag}>${esc(col.name)}</th>`;
    })
    .join('');
  const rows = table.rows
    .slice(0, limit)
    .map((row) => `<tr>${row.map(cell).join('')}</tr>`)
    .join('');
  const truncated =
    table.rows.length > limit
      ? `<caption>showing ${limit} of ${table.rows.length} rows</caption>`
      : '';
  return `<table class="result">${truncated}<thead><tr>${head}</tr></thead><tbody>${rows}</tbody></table>`;
}
